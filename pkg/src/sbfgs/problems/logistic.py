"""L2-regularized multinomial logistic regression.

Parameters are laid out class-major: ``x.reshape(C, f)[c]`` is the weight
vector of class ``c``. No intercept is added; append a constant feature
column to the data if one is wanted.
"""
from __future__ import annotations

import hashlib
import warnings
from importlib import resources

import numpy as np
from scipy.special import logsumexp, softmax

from .base import StochasticProblem
from .io import read_dataset


class LogisticProblem(StochasticProblem):
    """Batches are integer index arrays into the sample rows."""

    def __init__(self, features, labels, lambda_lr=1e-5, n_classes=None):
        X = np.asarray(features, dtype=float)
        y = np.asarray(labels)
        if X.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if y.shape != (X.shape[0],):
            raise ValueError("labels must have one entry per feature row")
        if X.shape[0] == 0:
            raise ValueError("empty dataset")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite values")
        if not np.issubdtype(y.dtype, np.integer):
            raise ValueError("labels must be integers")
        C = int(y.max()) + 1 if n_classes is None else int(n_classes)
        if y.min() < 0 or y.max() >= C:
            raise ValueError(f"labels must lie in [0, {C})")
        if lambda_lr < 0:
            raise ValueError("lambda_lr must be nonnegative")
        self.features = X
        self.labels = y.astype(np.int64)
        self.n_classes = C
        self.n_features = X.shape[1]
        self.n_samples = X.shape[0]
        self.dim = self.n_features * C
        self.lambda_lr = float(lambda_lr)
        self.smoothness = logistic_smoothness(self)
        self.strong_convexity = self.lambda_lr or None
        self._fstar = None
        self.x_star = None

    @property
    def x0(self):
        return np.zeros(self.dim)

    def _logits(self, x, X):
        return X @ x.reshape(self.n_classes, self.n_features).T

    def sample_batch(self, rng, N):
        return rng.integers(0, self.n_samples, size=N)

    def grad_per_sample(self, x, batch):
        idx = np.asarray(batch)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_samples):
            raise IndexError("batch index out of range")
        x = np.asarray(x, dtype=float)
        Xb = self.features[idx]
        P = softmax(self._logits(x, Xb), axis=1)
        P[np.arange(idx.size), self.labels[idx]] -= 1.0
        G = (P[:, :, None] * Xb[:, None, :]).reshape(idx.size, self.dim)
        if self.lambda_lr:
            G += self.lambda_lr * x
        return G

    def loss_per_sample(self, x, batch=None):
        """Unregularized cross-entropy of the selected rows."""
        X = self.features if batch is None else self.features[batch]
        lab = self.labels if batch is None else self.labels[batch]
        Z = self._logits(np.asarray(x, dtype=float), X)
        return logsumexp(Z, axis=1) - Z[np.arange(Z.shape[0]), lab]

    def true_objective(self, x):
        return float(self.loss_per_sample(x).mean()) + 0.5 * self.lambda_lr * float(x @ x)

    def full_gradient(self, x):
        P = softmax(self._logits(x, self.features), axis=1)
        P[np.arange(self.n_samples), self.labels] -= 1.0
        G = (P.T @ self.features) / self.n_samples
        return G.reshape(-1) + self.lambda_lr * x

    def hessp(self, x, v):
        """Hessian-vector product of the full objective."""
        Z = self._logits(x, self.features)
        P = softmax(Z, axis=1)
        U = self._logits(v, self.features)  # X V_c for every class
        PU = P * (U - np.sum(P * U, axis=1, keepdims=True))
        Hv = (PU.T @ self.features) / self.n_samples
        return Hv.reshape(-1) + self.lambda_lr * v

    def reference_solve(self, gtol=1e-10, maxiter=500):
        """High-accuracy deterministic minimizer via trust-region Newton-CG."""
        from scipy.optimize import minimize

        res = minimize(lambda x: (self.true_objective(x), self.full_gradient(x)),
                       np.zeros(self.dim), jac=True, hessp=self.hessp,
                       method="trust-ncg",
                       options={"gtol": gtol, "maxiter": maxiter})
        gnorm = float(np.linalg.norm(self.full_gradient(res.x)))
        if gnorm > 10 * gtol:
            warnings.warn(f"reference solve stopped at gradient norm {gnorm:.3e}")
        self.x_star = res.x
        self._fstar = float(res.fun)
        return res

    def optimal_value(self):
        if self._fstar is None:
            self.reference_solve()
        return self._fstar

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        h.update(repr(self.lambda_lr).encode())
        return h.hexdigest()


def power_iteration(matvec, dim, tol=1e-6, maxiter=1000, seed=0):
    """Largest eigenvalue of a PSD operator. Returns ``(value, converged)``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(maxiter):
        w = matvec(v)
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0, True
        new = float(v @ w)
        v = w / nrm
        if abs(new - lam) <= tol * abs(new):
            return new, True
        lam = new
    return lam, False


def logistic_smoothness(prob):
    """``0.5 * lambda_max(X'X / n) + lambda_lr``."""
    X = prob.features
    n = X.shape[0]
    lam, ok = power_iteration(lambda v: X.T @ (X @ v) / n, X.shape[1])
    if not ok:
        warnings.warn("power iteration did not converge; using best estimate")
    return 0.5 * lam + prob.lambda_lr


def logistic_from_file(path, format=None, lambda_lr=1e-5, n_features=None, n_classes=None):
    X, y = read_dataset(path, format=format, n_features=n_features)
    return LogisticProblem(X, y, lambda_lr=lambda_lr, n_classes=n_classes)


def bundled_dataset_path(name="digits.csv"):
    return resources.files("sbfgs") / "data" / name


def load_digits(lambda_lr=1e-5):
    """The bundled 8x8 handwritten digits set (1797 x 64, ten classes)."""
    with resources.as_file(bundled_dataset_path()) as p:
        return logistic_from_file(p, format="csv", lambda_lr=lambda_lr)
