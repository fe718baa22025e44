"""Noisy quadratic with multiplicative gradient noise.

    f(x, xi) = 1/2 x'Ax - x'1 (1 + x'xi),   xi ~ N(0, Sigma)

so ``F(x) = 1/2 x'Ax - 1'x`` and the gradient noise vanishes at the origin.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np

from ..linalg import NotPositiveDefiniteError, cholesky
from .base import StochasticProblem


def random_orthogonal(rng, d):
    Z = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(Z)
    # sign fix makes Q Haar-distributed rather than QR-convention dependent
    return Q * np.sign(np.diag(R))


def wishart_bartlett(rng, scale, dof, d):
    """Lower-triangular ``F`` with ``F F' ~ Wishart(scale * I, dof)``.

    Bartlett: ``F = sqrt(scale) B`` where ``B`` has ``sqrt(chi2(dof - i))``
    on the diagonal and standard normals below it.
    """
    if dof < d:
        raise ValueError(f"Wishart needs dof >= d, got dof={dof}, d={d}")
    B = np.zeros((d, d))
    for i in range(d):
        B[i, i] = math.sqrt(rng.chisquare(dof - i))
        B[i, :i] = rng.standard_normal(i)
    return math.sqrt(scale) * B


class QuadraticProblem(StochasticProblem):
    """Batches are ``(N, d)`` arrays of noise draws ``xi``."""

    def __init__(self, A, Sigma, noise_factor=None, x0=None):
        A = np.asarray(A, dtype=float)
        self.dim = A.shape[0]
        self.A = A
        self.Sigma = np.asarray(Sigma, dtype=float)
        if noise_factor is None:
            noise_factor = self._factor(self.Sigma)
        self.noise_factor = np.asarray(noise_factor, dtype=float)
        self.ones = np.ones(self.dim)
        w = np.linalg.eigvalsh(A)
        self.smoothness = float(w[-1])
        self.strong_convexity = float(w[0])
        self.chol_A = cholesky(A)
        self.x_star = np.linalg.solve(A, self.ones)
        self.f_star = -0.5 * float(self.ones @ self.x_star)
        self.x0 = None if x0 is None else np.asarray(x0, dtype=float)

    @staticmethod
    def _factor(Sigma):
        if not np.any(Sigma):
            return np.zeros_like(Sigma)
        try:
            return cholesky(Sigma)
        except NotPositiveDefiniteError:
            w, V = np.linalg.eigh(Sigma)
            return V * np.sqrt(np.clip(w, 0.0, None))

    def sample_batch(self, rng, N):
        return rng.standard_normal((N, self.dim)) @ self.noise_factor.T

    def grad_per_sample(self, x, batch):
        x = np.asarray(x, dtype=float)
        xi = np.atleast_2d(batch)
        det = self.A @ x - self.ones
        return det[None, :] - x.sum() * xi - (xi @ x)[:, None]

    def true_objective(self, x):
        return 0.5 * float(x @ self.A @ x) - float(x.sum())

    def full_gradient(self, x):
        return self.A @ x - self.ones

    def optimal_value(self):
        return self.f_star

    def hessian(self):
        return self.A

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.A).tobytes())
        h.update(np.ascontiguousarray(self.Sigma).tobytes())
        return h.hexdigest()


def gen_quadratic(seed, d=20, kappa=1e6, wishart_scale=1e-2, wishart_dof=None):
    """Random instance with spectrum ``log10(lambda) ~ U[0, log10 kappa]``.

    The extreme eigenvalues are then pinned to ``1`` and ``kappa`` so the
    condition number is exactly ``kappa``. ``Sigma`` is a Wishart sample with
    scale ``wishart_scale * I`` and ``d`` degrees of freedom unless
    ``wishart_dof`` says otherwise. A starting point ``x0 ~ N(0, I)`` is drawn
    from the same stream so every method can share it.
    """
    if int(d) != d or d < 2:
        raise ValueError(f"d must be an integer >= 2, got {d}")
    if not kappa > 1:
        raise ValueError(f"kappa must exceed 1, got {kappa}")
    if not wishart_scale >= 0:
        raise ValueError("wishart_scale must be nonnegative")
    d = int(d)
    rng = np.random.default_rng(seed)
    Q = random_orthogonal(rng, d)
    lam = np.sort(10.0 ** rng.uniform(0.0, math.log10(kappa), size=d))
    lam[0], lam[-1] = 1.0, float(kappa)
    A = (Q * lam) @ Q.T
    A = np.tril(A) + np.tril(A, -1).T
    F = wishart_bartlett(rng, wishart_scale, d if wishart_dof is None else wishart_dof, d)
    Sigma = F @ F.T
    x0 = rng.standard_normal(d)
    prob = QuadraticProblem(A, Sigma, noise_factor=F, x0=x0)
    prob.eigenvalues = lam
    prob.smoothness, prob.strong_convexity = float(lam[-1]), float(lam[0])
    return prob
