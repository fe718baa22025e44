"""Dense symmetric linear-algebra kernel shared by the optimizers.

Matrices are plain ``numpy.ndarray`` objects. Only the lower triangle of a
symmetric input is read by the factorizations, so callers never need to
re-symmetrize before calling in.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "LinAlgInputError",
    "NotPositiveDefiniteError",
    "NoUniqueSolutionError",
    "cholesky",
    "is_positive_definite",
    "logdet",
    "eig_extremes",
    "psi",
    "solve_lyapunov_bruteforce",
    "symmetrize",
]


class LinAlgInputError(ValueError):
    """Raised for non-finite or wrongly shaped input."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be SPD fails to factorize."""


class NoUniqueSolutionError(np.linalg.LinAlgError):
    pass


def _check_square(M, name="M"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise LinAlgInputError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise LinAlgInputError(f"{name} contains non-finite entries")
    return M


def symmetrize(M):
    """Copy the lower triangle of ``M`` onto the upper one."""
    L = np.tril(M)
    return L + np.tril(M, -1).T


def cholesky(M):
    """Lower Cholesky factor ``L`` with ``L @ L.T == M``.

    Raises
    ------
    NotPositiveDefiniteError
        If ``M`` is not numerically positive definite.
    LinAlgInputError
        If ``M`` contains NaN/inf or is not square.
    """
    M = _check_square(M)
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc


def is_positive_definite(M):
    try:
        cholesky(M)
    except NotPositiveDefiniteError:
        return False
    return True


def logdet(M):
    """log det of an SPD matrix through its Cholesky factor."""
    L = cholesky(M)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def eig_extremes(M):
    """Return ``(lambda_min, lambda_max)`` of a symmetric matrix."""
    M = _check_square(M)
    w = np.linalg.eigvalsh(M)
    return float(w[0]), float(w[-1])


def psi(M):
    """Distance-to-identity measure ``tr(M) - log det(M)``.

    Minimized, with value ``d``, at ``M = I``. ``M`` must be SPD.
    """
    M = _check_square(M)
    return float(np.trace(M)) - logdet(M)


def solve_lyapunov_bruteforce(P, Q, rcond=1e-13):
    """Solve ``X @ P.T + P @ X = Q`` by vectorization.

    Builds the ``d**2 x d**2`` Kronecker system explicitly, so it costs
    O(d**6) and is meant as a test oracle for small ``d`` only.
    """
    P = _check_square(P, "P")
    Q = _check_square(Q, "Q")
    d = P.shape[0]
    if Q.shape != (d, d):
        raise LinAlgInputError(f"Q has shape {Q.shape}, expected {(d, d)}")
    if d > 16:
        raise LinAlgInputError("brute-force Lyapunov solve limited to d <= 16")
    eye = np.eye(d)
    # column-major vec: vec(X P^T) = (P kron I) vec X, vec(P X) = (I kron P) vec X
    K = np.kron(P, eye) + np.kron(eye, P)
    sv = np.linalg.svd(K, compute_uv=False)
    if sv[-1] <= rcond * sv[0]:
        raise NoUniqueSolutionError("Lyapunov system is singular")
    x = np.linalg.solve(K, Q.reshape(-1, order="F"))
    return x.reshape((d, d), order="F")
