"""Limited-memory stochastic BFGS operator.

Applies ``H_{k+1} z`` using only the last ``r`` accepted curvature pairs and
a diagonal initial matrix. The stochastic coefficients do not factor into
the usual two-loop recursion, so each stored pair needs ``v_i = H_i y_i``,
rebuilt from all older pairs: O(d r^2) per rebuild, O(d r) per product
once the ``(v_i, a_i, b_i)`` table is cached.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from .curvature import CurvaturePair
from .dense import coefficients_from, sbfgs_update

DEFAULT_MEMORY = 10


class LimitedMemory:
    """Ring buffer of curvature pairs plus the diagonal ``H0``.

    Parameters
    ----------
    h0_diag : array_like or float
        Diagonal of ``H0``. A scalar is broadcast once ``dim`` is known.
    rho : float
        Likelihood weight shared by all pairs.
    r : int
        Memory size; the oldest pair is evicted first.
    """

    def __init__(self, h0_diag, rho, r=DEFAULT_MEMORY, dim=None):
        if r < 1:
            raise ValueError(f"memory size must be positive, got {r}")
        if not rho > 0:
            raise ValueError(f"rho must be positive, got {rho}")
        self.r = int(r)
        self.rho = float(rho)
        self.pairs = deque(maxlen=self.r)
        h0 = np.asarray(h0_diag, dtype=float)
        if h0.ndim == 0:
            if dim is None:
                raise ValueError("dim is required with a scalar h0_diag")
            h0 = np.full(dim, float(h0))
        if np.any(h0 <= 0):
            raise ValueError("h0_diag entries must be positive")
        self.h0_diag = h0
        # counts length-d vector kernels (dot or axpy); instrumentation only
        self.vector_ops = 0
        self._invalidate()

    @property
    def dim(self):
        return self.h0_diag.shape[0]

    def __len__(self):
        return len(self.pairs)

    def _invalidate(self):
        self._S = np.empty((0, self.dim))
        self._V = np.empty((0, self.dim))
        self._a = np.empty(0)
        self._b = np.empty(0)
        self._valid = True  # the empty table is trivially valid

    def set_h0(self, h0_diag):
        h0 = np.broadcast_to(np.asarray(h0_diag, dtype=float), (self.dim,)).copy()
        if np.any(h0 <= 0):
            raise ValueError("h0_diag entries must be positive")
        self.h0_diag = h0
        self._valid = False

    def push(self, pair: CurvaturePair):
        """Store an accepted pair, evicting the oldest one when full."""
        if pair.s.shape != (self.dim,) or pair.y.shape != (self.dim,):
            raise ValueError("pair dimension does not match the memory")
        evicts = len(self.pairs) == self.r
        self.pairs.append(pair)
        if evicts or not self._valid:
            self._valid = False
            return self
        # no eviction: older rows of the table are unaffected
        v, a, b = self._row(pair, self._S, self._V, self._a, self._b)
        self._S = np.vstack([self._S, pair.s])
        self._V = np.vstack([self._V, v])
        self._a = np.append(self._a, a)
        self._b = np.append(self._b, b)
        return self

    def _row(self, pair, S, V, a, b):
        y = pair.y
        v = self.h0_diag * y
        k = S.shape[0]
        if k:
            sy = S @ y
            vy = V @ y
            v = v + S.T @ (a * sy + b * vy) + V.T @ (b * sy)
            self.vector_ops += 4 * k
        c = 0.0 if np.isinf(pair.p) else self.rho / pair.p
        coef = coefficients_from(pair.sy, float(y @ v), c)
        self.vector_ops += 2
        return v, coef.a, coef.b

    def _rebuild(self):
        k = len(self.pairs)
        d = self.dim
        S = np.empty((k, d))
        V = np.empty((k, d))
        a = np.empty(k)
        b = np.empty(k)
        for i, pair in enumerate(self.pairs):
            v, ai, bi = self._row(pair, S[:i], V[:i], a[:i], b[:i])
            S[i] = pair.s
            V[i] = v
            a[i] = ai
            b[i] = bi
        return S, V, a, b

    def _product(self, table, z):
        S, V, a, b = table
        w = self.h0_diag * z
        if S.shape[0]:
            sz = S @ z
            vz = V @ z
            w = w + S.T @ (a * sz + b * vz) + V.T @ (b * sz)
            self.vector_ops += 4 * S.shape[0]
        return w

    def _check(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ValueError(f"vector has shape {z.shape}, expected {(self.dim,)}")
        return z

    def apply(self, z):
        """``H_{k+1} z`` recomputed from scratch (no cache read or write)."""
        return self._product(self._rebuild(), self._check(z))

    def apply_cached(self, z):
        """Same product as :meth:`apply`, reusing the per-pair table."""
        z = self._check(z)
        if not self._valid:
            self._S, self._V, self._a, self._b = self._rebuild()
            self._valid = True
        return self._product((self._S, self._V, self._a, self._b), z)

    def to_dense(self):
        """Assemble the equivalent dense matrix by sequential dense updates."""
        H = np.diag(self.h0_diag)
        for pair in self.pairs:
            H = sbfgs_update(H, pair, self.rho)
        return H
