from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, Optional

import numpy as np


class StochasticProblem(ABC):
    """Objective ``F(x) = E f(x, xi)`` exposed through per-sample gradients.

    A batch returned by :meth:`sample_batch` owns its noise draws, so
    evaluating the same batch at two points reuses identical realizations.
    """

    dim: int
    smoothness: Optional[float] = None
    strong_convexity: Optional[float] = None
    #: finite dataset size for epoch accounting, ``None`` for expectation problems
    n_samples: Optional[int] = None

    @abstractmethod
    def sample_batch(self, rng: np.random.Generator, N: int) -> Any:
        ...

    @abstractmethod
    def grad_per_sample(self, x: np.ndarray, batch: Any) -> np.ndarray:
        """``(N, d)`` array, row ``n`` is ``grad f(x, xi_n)``."""

    @abstractmethod
    def true_objective(self, x: np.ndarray) -> float:
        ...

    def optimal_value(self) -> Optional[float]:
        return None

    def hessian(self) -> Optional[np.ndarray]:
        """Constant Hessian of ``F`` when there is one."""
        return None

    def fingerprint(self) -> str:
        raise NotImplementedError

    def optimality_gap(self, x):
        fstar = self.optimal_value()
        fx = self.true_objective(x)
        return fx if fstar is None else fx - fstar
