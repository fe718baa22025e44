import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbfgs.linalg import (LinAlgInputError, NoUniqueSolutionError, NotPositiveDefiniteError,
                          cholesky, eig_extremes, is_positive_definite, logdet, psi,
                          solve_lyapunov_bruteforce)

from _support import random_pair, random_spd, rel_fro


def test_cholesky_identity():
    np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_diagonal():
    np.testing.assert_allclose(cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_cholesky_reconstructs_random_spd():
    rng = np.random.default_rng(1)
    G = rng.standard_normal((6, 6))
    M = G.T @ G + np.eye(6)
    L = cholesky(M)
    assert np.allclose(L, np.tril(L))
    assert rel_fro(L @ L.T, M) <= 1e-12


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        cholesky(np.diag([1.0, -1.0]))
    assert not is_positive_definite(np.diag([1.0, 0.0]))


def test_cholesky_rejects_nan():
    M = np.eye(2)
    M[0, 1] = np.nan
    with pytest.raises(LinAlgInputError):
        cholesky(M)


def test_cholesky_reconstruct_is_idempotent():
    rng = np.random.default_rng(2)
    M = random_spd(rng, 7)
    L = cholesky(M)
    L2 = cholesky(L @ L.T)
    assert rel_fro(L2, L) <= 1e-12


def test_eig_extremes_simple():
    assert eig_extremes(np.diag([1.0, 5.0, 3.0])) == (1.0, 5.0)
    assert eig_extremes(np.eye(4)) == (1.0, 1.0)


def test_eig_extremes_constructed_spectrum():
    rng = np.random.default_rng(3)
    Q, _ = np.linalg.qr(rng.standard_normal((10, 10)))
    lam = rng.uniform(0.5, 20.0, size=10)
    lo, hi = eig_extremes((Q * lam) @ Q.T)
    assert abs(lo - lam.min()) <= 1e-8 * lam.min()
    assert abs(hi - lam.max()) <= 1e-8 * lam.max()


@pytest.mark.parametrize("alpha", [1e-3, 0.5, 7.0, 1e4])
def test_eig_extremes_scale(alpha):
    M = random_spd(np.random.default_rng(4), 6)
    lo, hi = eig_extremes(M)
    alo, ahi = eig_extremes(alpha * M)
    assert alo == pytest.approx(alpha * lo, rel=1e-10)
    assert ahi == pytest.approx(alpha * hi, rel=1e-10)


def test_psi_examples():
    assert psi(np.eye(20)) == pytest.approx(20.0, abs=1e-12)
    assert psi(np.diag([2.0, 0.5])) == pytest.approx(2.5, abs=1e-12)
    assert psi(np.diag([math.e, 1.0])) == pytest.approx(math.e, abs=1e-12)


def test_psi_bounded_below_by_dimension():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        G = rng.standard_normal((d, d))
        M = G @ G.T + 1e-3 * np.eye(d)
        assert psi(M) - d >= -1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.05, 20.0), min_size=1, max_size=6))
def test_psi_diagonal_closed_form(lam):
    lam = np.array(lam)
    assert psi(np.diag(lam)) == pytest.approx(np.sum(lam - np.log(lam)), rel=1e-12, abs=1e-12)


def test_logdet_matches_slogdet():
    M = random_spd(np.random.default_rng(6), 8, cond=1e6)
    assert logdet(M) == pytest.approx(np.linalg.slogdet(M)[1], rel=1e-12)


def test_lyapunov_scalar():
    X = solve_lyapunov_bruteforce(np.array([[1.5]]), np.array([[3.0]]))
    assert X[0, 0] == pytest.approx(1.0, abs=1e-14)


def test_lyapunov_identity():
    rng = np.random.default_rng(7)
    G = rng.standard_normal((4, 4))
    M = G + G.T
    X = solve_lyapunov_bruteforce(np.eye(4), 2 * M)
    assert rel_fro(X, M) <= 1e-13


def test_lyapunov_residual_random_secant_instance():
    rng = np.random.default_rng(8)
    d = 5
    H = random_spd(rng, d)
    pair = random_pair(rng, d, p=2.0)
    rho = 1.0
    c = rho / (2 * pair.p)
    P = np.outer(pair.s, pair.y) + c * np.eye(d)
    Q = 2 * np.outer(pair.s, pair.s) + (rho / pair.p) * H
    X = solve_lyapunov_bruteforce(P, Q)
    assert rel_fro(X @ P.T + P @ X, Q) <= 1e-10


def test_lyapunov_singular_system():
    # P with eigenvalues +1 and -1 makes P kron I + I kron P singular
    with pytest.raises(NoUniqueSolutionError):
        solve_lyapunov_bruteforce(np.diag([1.0, -1.0]), np.eye(2))


def test_lyapunov_shape_mismatch():
    with pytest.raises(LinAlgInputError):
        solve_lyapunov_bruteforce(np.eye(2), np.eye(3))
