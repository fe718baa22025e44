"""Preconditioned SGD driver, ``x_{k+1} = x_k - eta H_k v_k``.

Each quasi-Newton iteration evaluates the sampled batch twice: once at
``x_k`` for the step and once at ``x_{k+1}`` for the curvature pair, so
``y_k`` always compares gradients under identical noise. ``identity-sgd``
evaluates once.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .curvature import (DEFAULT_P_CAP, CurvatureConfig, DegenerateStepError, Verdict,
                        accept, make_pair)
from .dense import DensePreconditioner, bfgs_update
from .limited import DEFAULT_MEMORY, LimitedMemory
from .linalg import NotPositiveDefiniteError, cholesky, psi

KINDS = ("identity-sgd", "sbfgs-dense", "lsbfgs", "bfgs-noisy")
DENSE_KINDS = ("sbfgs-dense", "bfgs-noisy")
DIVERGENCE_GAP = 1e12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sbfgs-dense"
    eta: float = 0.7
    batch_size: int = 10
    max_iters: int = 1000
    curvature: CurvatureConfig = field(default_factory=CurvatureConfig)
    rho: float = 1.0
    r: int = DEFAULT_MEMORY
    h0_scale: float = 1.0
    seed: int = 0
    restart_interval: Optional[int] = None
    stride: int = 1
    record_wall_time: bool = True
    #: ``None``, ``"strided"`` (every ``stride`` iterations) or ``"all"``
    snapshots: Optional[str] = None
    keep_iterates: bool = False
    check_pd: bool = False

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown preconditioner kind {self.kind!r}; expected one of {KINDS}")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be nonnegative")
        if not self.h0_scale > 0:
            raise ConfigError("h0_scale must be positive")
        if not self.rho > 0:
            raise ConfigError("rho must be positive")
        if self.r < 1:
            raise ConfigError("memory size r must be positive")
        if self.stride < 1:
            raise ConfigError("stride must be positive")
        if self.snapshots not in (None, "strided", "all"):
            raise ConfigError(f"bad snapshots mode {self.snapshots!r}")
        return self

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class Row:
    iter: int
    grad_evals: int
    gap: float
    accepted: Optional[bool]
    lambda_min: Optional[float] = None
    lambda_max: Optional[float] = None
    psi: Optional[float] = None
    wall_time_ns: Optional[int] = None


@dataclass
class Snapshot:
    """State around one iteration's preconditioner update (dense modes)."""

    iter: int
    H_before: np.ndarray
    H_after: np.ndarray
    pair: Optional[object]
    accepted: bool


@dataclass
class RunRecord:
    config: OptimizerConfig
    rows: List[Row] = field(default_factory=list)
    diverged: bool = False
    divergence_iter: Optional[int] = None
    n_accepted: int = 0
    n_rejected: int = 0
    grad_evals: int = 0
    batch_size: int = 0
    x_final: Optional[np.ndarray] = None
    iterates: Optional[List[np.ndarray]] = None
    snapshots: List[Snapshot] = field(default_factory=list)
    H0: Optional[np.ndarray] = None

    def column(self, name):
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in self.rows], dtype=float)

    def row_at(self, k):
        for r in self.rows:
            if r.iter == k:
                return r
        raise KeyError(k)

    @property
    def final_gap(self):
        return self.rows[-1].gap if self.rows else float("nan")


def preconditioned_psi(H, chol_A):
    """``Psi(H A)`` through the SPD similar matrix ``L' H L`` with ``A = L L'``."""
    M = chol_A.T @ H @ chol_A
    return psi(np.tril(M) + np.tril(M, -1).T)


class _Identity:
    def apply(self, z):
        return z


def _make_preconditioner(cfg, d):
    if cfg.kind == "identity-sgd":
        return _Identity()
    if cfg.kind == "lsbfgs":
        return LimitedMemory(np.full(d, cfg.h0_scale), cfg.rho, cfg.r)
    return DensePreconditioner(H=cfg.h0_scale * np.eye(d), rho=cfg.rho,
                               check_pd=cfg.check_pd,
                               restart_interval=cfg.restart_interval)


def run(problem, cfg: OptimizerConfig, x0=None) -> RunRecord:
    """Execute ``cfg.max_iters`` iterations and return the metric stream.

    Rows are recorded at iteration 0, every ``cfg.stride`` iterations and at
    the last one. A non-finite iterate or a gap above ``1e12`` stops the run
    with ``diverged`` set; the final row then carries ``gap = nan``.
    """
    cfg.validate()
    d = problem.dim
    x = np.array(problem.x0 if x0 is None else x0, dtype=float)
    if x.shape != (d,):
        raise ConfigError(f"x0 has shape {x.shape}, expected {(d,)}")
    rng = np.random.default_rng(cfg.seed)
    N = cfg.batch_size
    pre = _make_preconditioner(cfg, d)
    dense = cfg.kind in DENSE_KINDS
    lsbfgs = cfg.kind == "lsbfgs"
    chol_A = None
    if dense and problem.hessian() is not None:
        chol_A = cholesky(problem.hessian())
    fstar = problem.optimal_value()
    p_cap = cfg.curvature.p_cap if cfg.curvature else DEFAULT_P_CAP

    rec = RunRecord(config=cfg, batch_size=N)
    if dense:
        rec.H0 = pre.H.copy()
    if cfg.keep_iterates:
        rec.iterates = [x.copy()]
    t0 = time.perf_counter_ns()

    def gap_of(z):
        fz = problem.true_objective(z)
        return fz if fstar is None else fz - fstar

    def record(k, accepted, gap):
        row = Row(iter=k, grad_evals=rec.grad_evals, gap=gap, accepted=accepted)
        if dense and math.isfinite(gap):
            H = pre.H
            if np.all(np.isfinite(H)):
                w = np.linalg.eigvalsh(H)
                row.lambda_min, row.lambda_max = float(w[0]), float(w[-1])
                if chol_A is not None:
                    try:
                        row.psi = preconditioned_psi(H, chol_A)
                    except NotPositiveDefiniteError:
                        row.psi = None
        if cfg.record_wall_time:
            row.wall_time_ns = time.perf_counter_ns() - t0
        rec.rows.append(row)

    def diverge(k):
        rec.diverged = True
        rec.divergence_iter = k
        record(k, None, float("nan"))

    record(0, None, gap_of(x))
    # overflow on the way to divergence is expected and handled below
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, cfg.max_iters + 1):
            batch = problem.sample_batch(rng, N)
            G = problem.grad_per_sample(x, batch)
            rec.grad_evals += 1
            v = G.mean(axis=0)
            if lsbfgs:
                direction = pre.apply_cached(v)
            else:
                direction = pre.apply(v)
            x_new = x - cfg.eta * direction
            if not np.all(np.isfinite(x_new)):
                diverge(k)
                break

            accepted = None
            snap_due = dense and cfg.snapshots is not None and (
                cfg.snapshots == "all" or k % cfg.stride == 0)
            H_before = pre.H.copy() if snap_due else None
            pair = None
            if cfg.kind != "identity-sgd":
                G_new = problem.grad_per_sample(x_new, batch)
                rec.grad_evals += 1
                try:
                    pair = make_pair(x, x_new, G_new - G, p_cap)
                except DegenerateStepError:
                    pair = None
                accepted = False
                if pair is not None and np.all(np.isfinite(pair.y)):
                    if cfg.kind == "bfgs-noisy":
                        if pair.sy > 0:
                            pre.H = bfgs_update(pre.H, pair)
                            accepted = True
                    elif accept(pair, cfg.curvature) is Verdict.ACCEPTED:
                        if lsbfgs:
                            pre.push(pair)
                        else:
                            pre.update(pair)
                        accepted = True
                if accepted:
                    rec.n_accepted += 1
                else:
                    rec.n_rejected += 1
            x = x_new
            if cfg.keep_iterates:
                rec.iterates.append(x.copy())
            if snap_due:
                rec.snapshots.append(Snapshot(k, H_before, pre.H.copy(), pair, bool(accepted)))

            if k % cfg.stride == 0 or k == cfg.max_iters:
                gap = gap_of(x)
                if not math.isfinite(gap) or gap > DIVERGENCE_GAP:
                    diverge(k)
                    break
                record(k, accepted, gap)
    rec.x_final = x
    return rec


def step_size_bound(L_hat, mu_hat, mu_tilde, sigma_sq, eps, alpha):
    """Largest fixed step for which preconditioned SGD reaches gap ``eps``.

    ``min(1/L, (4/L) / (sigma^2 / ((1 - alpha) eps) / (mu_hat mu_tilde) + 2))``
    """
    for name, val in (("L_hat", L_hat), ("mu_hat", mu_hat), ("mu_tilde", mu_tilde),
                      ("eps", eps)):
        if not val > 0:
            raise ConfigError(f"{name} must be positive, got {val}")
    if not sigma_sq >= 0:
        raise ConfigError(f"sigma_sq must be nonnegative, got {sigma_sq}")
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    noise = sigma_sq / ((1.0 - alpha) * eps) / (mu_hat * mu_tilde)
    return min(1.0 / L_hat, (4.0 / L_hat) / (noise + 2.0))


def estimate_sigma_sq(problem, x, batch_size, draws=1000, seed=0):
    """Empirical trace-covariance of the batch-mean gradient at ``x``."""
    rng = np.random.default_rng(seed)
    V = np.array([problem.grad_per_sample(x, problem.sample_batch(rng, batch_size)).mean(axis=0)
                  for _ in range(draws)])
    return float(np.sum(V.var(axis=0, ddof=1)))


def epoch_accounting(record: RunRecord, n_samples, N=None):
    """Cumulative epochs at each row: sampled gradients / dataset size."""
    if not n_samples > 0:
        raise ValueError("n_samples must be positive")
    N = record.batch_size if N is None else N
    return np.array([r.grad_evals * N / n_samples for r in record.rows])
