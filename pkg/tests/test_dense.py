import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbfgs.curvature import CurvaturePair
from sbfgs.dense import (CurvatureViolatedError, DensePreconditioner, InvalidPairError,
                         bfgs_update, coefficients, det_bound, log_det_bound, reset,
                         sbfgs_update, trace_bound, trace_bound_literal, update)
from sbfgs.linalg import NotPositiveDefiniteError, cholesky, solve_lyapunov_bruteforce

from _support import random_pair, random_spd, rel_fro


def scalar_pair(s=1.0, y=1.0, p=1.0):
    return CurvaturePair(np.array([s]), np.array([y]), p)


def lyapunov_oracle(H, pair, rho):
    d = H.shape[0]
    c = rho / pair.p
    P = np.outer(pair.s, pair.y) + 0.5 * c * np.eye(d)
    Q = 2 * np.outer(pair.s, pair.s) + c * H
    return solve_lyapunov_bruteforce(P, Q)


def test_coefficients_scalar_instance():
    a, b = coefficients(np.eye(1), scalar_pair(p=1.0), rho=1.0)
    assert a == pytest.approx(1.0)
    assert b == pytest.approx(-0.5)


def test_coefficients_bfgs_limit():
    e1 = np.eye(3)[0]
    a, b = coefficients(np.eye(3), CurvaturePair(e1, e1, np.inf), rho=1.0)
    assert (a, b) == (2.0, -1.0)


def test_update_scalar_instance():
    H = sbfgs_update(np.eye(1), scalar_pair(p=1.0), rho=1.0)
    assert H[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_update_bfgs_fixed_point():
    e1 = np.eye(4)[0]
    H = sbfgs_update(np.eye(4), CurvaturePair(e1, e1, np.inf), rho=1.0)
    np.testing.assert_allclose(H, np.eye(4), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_update_matches_lyapunov_oracle(seed):
    rng = np.random.default_rng(seed)
    H = random_spd(rng, 5)
    pair = random_pair(rng, 5)
    rho = 10.0 ** rng.uniform(-2, 2)
    assert rel_fro(sbfgs_update(H, pair, rho), lyapunov_oracle(H, pair, rho)) <= 1e-10


def test_update_satisfies_lyapunov_equation():
    rng = np.random.default_rng(11)
    d = 6
    H = random_spd(rng, d)
    pair = random_pair(rng, d)
    rho = 3.0
    c = rho / pair.p
    X = sbfgs_update(H, pair, rho)
    lhs = X @ (np.outer(pair.y, pair.s) + 0.5 * c * np.eye(d)) \
        + (np.outer(pair.s, pair.y) + 0.5 * c * np.eye(d)) @ X
    rhs = 2 * np.outer(pair.s, pair.s) + c * H
    assert rel_fro(lhs, rhs) <= 1e-10


def test_update_is_exactly_symmetric():
    rng = np.random.default_rng(12)
    H = random_spd(rng, 9)
    X = sbfgs_update(H, random_pair(rng, 9), 0.3)
    assert np.array_equal(X, X.T)


def test_update_rejects_nonpositive_denominator():
    with pytest.raises(InvalidPairError):
        sbfgs_update(np.eye(1), scalar_pair(y=-1.0, p=np.inf), rho=1.0)


def test_bfgs_update_examples():
    e1 = np.eye(3)[0]
    np.testing.assert_allclose(bfgs_update(np.eye(3), CurvaturePair(e1, e1, 1.0)), np.eye(3))
    with pytest.raises(CurvatureViolatedError):
        bfgs_update(np.eye(1), scalar_pair(y=-1.0))


def test_bfgs_update_secant():
    rng = np.random.default_rng(13)
    for d in range(2, 11):
        H = random_spd(rng, d)
        pair = random_pair(rng, d)
        Hn = bfgs_update(H, pair)
        # normwise backward error of the secant equation
        scale = np.linalg.norm(Hn, 2) * np.linalg.norm(pair.y)
        assert np.linalg.norm(Hn @ pair.y - pair.s) <= 1e-12 * scale


def test_rho_zero_equals_bfgs():
    rng = np.random.default_rng(14)
    for d in range(2, 11):
        H = random_spd(rng, d)
        pair = random_pair(rng, d)
        assert rel_fro(sbfgs_update(H, pair, 0.0), bfgs_update(H, pair)) <= 1e-12


def test_bfgs_limit_monotone():
    rng = np.random.default_rng(15)
    for _ in range(20):
        H = random_spd(rng, 6)
        pair = random_pair(rng, 6, p=1.0)
        B = bfgs_update(H, pair)
        errs = [np.linalg.norm(sbfgs_update(H, pair, 10.0 ** -t) - B) for t in (2, 4, 6, 8)]
        assert all(e2 <= e1 for e1, e2 in zip(errs, errs[1:])), errs


def test_secant_residual_nondecreasing_in_rho():
    rng = np.random.default_rng(16)
    for _ in range(20):
        H = random_spd(rng, 5)
        pair = random_pair(rng, 5, p=1.0)
        res = [np.linalg.norm(sbfgs_update(H, pair, rho) @ pair.y - pair.s)
               for rho in (1e-6, 1e-3, 1e-1, 1.0, 10.0, 1e3)]
        assert all(r2 >= r1 * (1 - 1e-9) for r1, r2 in zip(res, res[1:])), res


def test_larger_rho_stays_closer_to_prior():
    rng = np.random.default_rng(17)
    H = random_spd(rng, 5)
    pair = random_pair(rng, 5, p=1.0)
    dist = [np.linalg.norm(sbfgs_update(H, pair, rho) - H) for rho in (1e-2, 1.0, 1e2, 1e4)]
    assert dist == sorted(dist, reverse=True)


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 8),
       log_c=st.floats(-3, 3))
def test_positive_definiteness_preserved(seed, d, log_c):
    rng = np.random.default_rng(seed)
    H = random_spd(rng, d)
    pair = random_pair(rng, d, p=10.0 ** -log_c)
    Hn = sbfgs_update(H, pair, 1.0)
    assert np.linalg.eigvalsh(Hn)[0] > 0
    cholesky(Hn)


def test_trace_bound_scalar_instance():
    H = sbfgs_update(np.eye(1), scalar_pair(), 1.0)
    assert np.trace(H) == pytest.approx(1.0)
    assert trace_bound(np.eye(1), scalar_pair(), 1.0, m_lower=1.0) >= 1.0
    assert trace_bound_literal(np.eye(1), scalar_pair(), 1.0, 1.0) >= 1.0


def test_trace_bound_finite_with_positive_floor_or_noise():
    pair = scalar_pair(p=np.inf)
    assert np.isfinite(trace_bound(np.eye(1), pair, 1.0, m_lower=0.5))
    assert np.isfinite(trace_bound(np.eye(1), scalar_pair(p=2.0), 1.0, m_lower=0.0))
    assert trace_bound(np.eye(1), pair, 1.0, m_lower=0.0) == np.inf


def test_trace_bound_holds_on_random_instances():
    rng = np.random.default_rng(18)
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        H = random_spd(rng, d)
        pair = random_pair(rng, d)
        ss = float(pair.s @ pair.s)
        ratio = pair.sy / ss
        m_lower = ratio * rng.uniform(0.0, 1.0)
        m_upper = ratio * rng.uniform(1.0, 3.0)
        tr = np.trace(sbfgs_update(H, pair, 1.0))
        for hi in (m_upper, None):
            assert tr <= trace_bound(H, pair, 1.0, m_lower, hi) + 1e-12 * abs(tr)


def test_literal_trace_bound_has_counterexamples():
    # Substituting the floor in the negative s'Hy term overshoots when s'y
    # exceeds the floor; the corrected bound covers the same instances.
    rng = np.random.default_rng(19)
    literal_violations = 0
    for _ in range(2000):
        d = 3
        G = rng.standard_normal((d, d))
        H = G @ G.T + 0.1 * np.eye(d)
        s, y = rng.standard_normal(d), rng.standard_normal(d)
        pair = CurvaturePair(s, y, 10.0 ** -rng.uniform(-3, 3))
        if pair.sy <= 0:
            continue
        m = rng.uniform(0, 1) * pair.sy / float(s @ s)
        tr = np.trace(sbfgs_update(H, pair, 1.0))
        if tr > trace_bound_literal(H, pair, 1.0, m) * (1 + 1e-9):
            literal_violations += 1
        assert tr <= trace_bound(H, pair, 1.0, m) * (1 + 1e-12)
    assert literal_violations > 0


def test_literal_and_corrected_bounds_agree_on_the_boundary():
    rng = np.random.default_rng(20)
    H = random_spd(rng, 4)
    pair = random_pair(rng, 4, p=0.5)
    m = pair.sy / float(pair.s @ pair.s)
    assert trace_bound(H, pair, 0.7, m, m * (1 + 1e-15)) == pytest.approx(
        trace_bound_literal(H, pair, 0.7, m), rel=1e-12)


def test_det_bound_scalar_instance():
    assert det_bound(np.eye(1), scalar_pair(), 1.0) == pytest.approx(0.75)
    assert np.linalg.det(sbfgs_update(np.eye(1), scalar_pair(), 1.0)) == pytest.approx(1.0)


def test_det_bound_rho_zero_limit():
    rng = np.random.default_rng(21)
    H = random_spd(rng, 4)
    pair = random_pair(rng, 4, p=1.0)
    sBs = float(pair.s @ np.linalg.solve(H, pair.s))
    assert det_bound(H, pair, 0.0) == pytest.approx(np.linalg.det(H) * sBs / pair.sy, rel=1e-10)


def test_det_bound_strict_on_random_instances():
    rng = np.random.default_rng(22)
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        H = random_spd(rng, d)
        pair = random_pair(rng, d)
        rho = 10.0 ** rng.uniform(-3, 3)
        Hn = sbfgs_update(H, pair, rho)
        assert np.linalg.slogdet(Hn)[1] > log_det_bound(H, pair, rho)


def test_reset_examples():
    pre = DensePreconditioner.scaled_identity(3, 2.0, rho=1.0)
    pre.update(random_pair(np.random.default_rng(0), 3))
    assert pre.updates_applied == 1
    pre.reset(np.eye(3))
    np.testing.assert_array_equal(pre.H, np.eye(3))
    assert pre.updates_applied == 0
    out = reset(pre, 1e-6 * np.eye(3))
    np.testing.assert_array_equal(np.diag(out.H), [1e-6] * 3)
    assert out.updates_applied == 0


def test_functional_update_leaves_input_alone():
    rng = np.random.default_rng(1)
    pre = DensePreconditioner.scaled_identity(4, 1.0, rho=1.0)
    before = pre.H.copy()
    out = update(pre, random_pair(rng, 4))
    np.testing.assert_array_equal(pre.H, before)
    assert out.updates_applied == 1 and not np.array_equal(out.H, before)


def test_restart_interval():
    rng = np.random.default_rng(2)
    pre = DensePreconditioner.scaled_identity(3, 0.5, rho=1.0, restart_interval=2)
    pre.update(random_pair(rng, 3))
    assert not np.array_equal(pre.H, 0.5 * np.eye(3))
    pre.update(random_pair(rng, 3))
    np.testing.assert_array_equal(pre.H, 0.5 * np.eye(3))


def test_preconditioner_rejects_indefinite_start():
    with pytest.raises(NotPositiveDefiniteError):
        DensePreconditioner(H=np.diag([1.0, -1.0]), rho=1.0)
    with pytest.raises(ValueError):
        DensePreconditioner(H=np.eye(2), rho=0.0)
