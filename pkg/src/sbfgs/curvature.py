"""Curvature pairs: construction, precision estimate and acceptance tests."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

DEFAULT_P_CAP = 1e12


class InsufficientSamplesError(ValueError):
    pass


class DegenerateStepError(ValueError):
    pass


@dataclass(frozen=True)
class CurvaturePair:
    """Iterate displacement ``s``, mean gradient difference ``y`` and precision ``p``."""

    s: np.ndarray
    y: np.ndarray
    p: float

    @property
    def sy(self) -> float:
        return float(self.s @ self.y)


@dataclass(frozen=True)
class CurvatureConfig:
    """Acceptance window ``m_lower |s|^2 <= y's <= m_upper |s|^2``.

    ``m_upper=None`` disables the ceiling. ``m_lower`` may be ``inf`` to
    reject every pair.
    """

    m_lower: float = 0.0
    m_upper: Optional[float] = None
    p_cap: float = DEFAULT_P_CAP

    def __post_init__(self):
        if not self.m_lower >= 0:
            raise ValueError(f"m_lower must be nonnegative, got {self.m_lower}")
        if self.m_upper is not None:
            if not self.m_upper > 0:
                raise ValueError(f"m_upper must be positive, got {self.m_upper}")
            if self.m_lower >= self.m_upper:
                raise ValueError("m_lower must be below m_upper")
        if not (0 < self.p_cap < math.inf):
            raise ValueError("p_cap must be finite and positive")


class Verdict(str, Enum):
    ACCEPTED = "accepted"
    BELOW_FLOOR = "below_floor"
    ABOVE_CEILING = "above_ceiling"

    def __bool__(self):
        return self is Verdict.ACCEPTED


def _as_samples(per_sample_grad_diffs):
    D = np.asarray(per_sample_grad_diffs, dtype=float)
    if D.ndim == 1:
        D = D[:, None]
    if D.shape[0] < 2:
        raise InsufficientSamplesError(
            f"need at least 2 samples to estimate precision, got {D.shape[0]}")
    return D


def estimate_precision(per_sample_grad_diffs, p_cap=DEFAULT_P_CAP):
    """Inverse trace-covariance of the batch-mean gradient difference.

    ``per_sample_grad_diffs`` has shape ``(N, d)``. The per-component
    variance uses the unbiased two-pass estimator and is divided by ``N``
    because the quantity of interest is the covariance of the mean.
    """
    D = _as_samples(per_sample_grad_diffs)
    N = D.shape[0]
    dev = D - D.mean(axis=0)
    trace_cov_mean = float(np.sum(dev * dev)) / (N - 1) / N
    if trace_cov_mean <= 0.0:
        return float(p_cap)
    return min(float(p_cap), 1.0 / trace_cov_mean)


def make_pair(x_prev, x_curr, per_sample_grad_diffs, p_cap=DEFAULT_P_CAP):
    """Build ``(s, y, p)`` from per-sample gradient differences.

    Row ``n`` of ``per_sample_grad_diffs`` must be
    ``grad f(x_curr, xi_n) - grad f(x_prev, xi_n)`` for a shared draw ``xi_n``.
    """
    D = _as_samples(per_sample_grad_diffs)
    s = np.asarray(x_curr, dtype=float) - np.asarray(x_prev, dtype=float)
    if not np.any(s):
        raise DegenerateStepError("x_curr equals x_prev; displacement is zero")
    if D.shape[1] != s.shape[0]:
        raise ValueError(f"gradient differences have dimension {D.shape[1]}, "
                         f"iterates have {s.shape[0]}")
    y = D.mean(axis=0)
    return CurvaturePair(s=s, y=y, p=estimate_precision(D, p_cap))


def accept(pair: CurvaturePair, cfg: CurvatureConfig) -> Verdict:
    """Check the curvature window; the returned verdict is truthy iff accepted."""
    sy = pair.sy
    ss = float(pair.s @ pair.s)
    if not sy >= cfg.m_lower * ss:
        return Verdict.BELOW_FLOOR
    if cfg.m_upper is not None and sy > cfg.m_upper * ss:
        return Verdict.ABOVE_CEILING
    return Verdict.ACCEPTED
