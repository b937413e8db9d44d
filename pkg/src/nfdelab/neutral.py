"""Neutral operator ``D x = x(0) - int [d nu(s)] x(s)``, its history lift,
and Neumann-series inversion of the lift.

The lift acts history-to-history, ``(D^ x)(s) = D x_s``.  When the subtracted
part is a contraction in total variation (``gamma < 1``) the lift is inverted
by the fixed-point sweep ``x <- h + N x`` where ``N`` is the convolution with
``nu``; positivity of ``nu`` makes every Neumann term positive, so the inverse
maps nonnegative histories to nonnegative histories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .histories import History
from .measures import DelayMeasure

__all__ = ["NeutralOperator", "StabilityReport"]


@dataclass(frozen=True)
class StabilityReport:
    gamma: float
    stable: bool          # sufficient criterion: total-variation contraction
    positive: bool        # all measure weights >= 0

    def to_dict(self):
        return {"gamma": self.gamma, "stable": self.stable,
                "positive": self.positive,
                "criterion": "total-variation contraction (gamma < 1)"}


class NeutralOperator:
    """Matrix of delay measures defining the neutral part."""

    def __init__(self, entries):
        m = len(entries)
        for row in entries:
            if len(row) != m:
                raise ValueError("entries must be a square matrix")
        self.m = m
        self.entries = [[e if e is not None else DelayMeasure.zero()
                         for e in row] for row in entries]

    @classmethod
    def diagonal(cls, measures) -> "NeutralOperator":
        m = len(measures)
        entries = [[measures[i] if i == j else None for j in range(m)]
                   for i in range(m)]
        return cls(entries)

    @classmethod
    def zero(cls, m: int) -> "NeutralOperator":
        return cls.diagonal([DelayMeasure.zero()] * m)

    @property
    def gamma(self) -> float:
        """Operator-norm bound of the subtracted part (max row TV sum)."""
        return max(sum(e.total_variation() for e in row) for row in self.entries)

    def is_diagonal(self) -> bool:
        return all(self.entries[i][j].is_zero
                   for i in range(self.m) for j in range(self.m) if i != j)

    def max_support(self) -> float:
        return max(e.support_horizon() for row in self.entries for e in row)

    # -- application ------------------------------------------------------

    def _convolve(self, x: History) -> np.ndarray:
        """``(N x)(s) = int [d nu(theta)] x(theta + s)`` on x's grid."""
        if x.dim != self.m:
            raise ValueError("dimension mismatch")
        grid = x.grid
        out = np.zeros_like(x.samples)
        for i in range(self.m):
            for j in range(self.m):
                mu = self.entries[i][j]
                locs, weights = mu.eval_points()
                for loc, w in zip(locs, weights):
                    if w != 0.0:
                        out[:, i] += w * x.eval(grid + loc)[:, j]
        return out

    def apply(self, x: History) -> np.ndarray:
        """``D x = x(0) - int [d nu] x``."""
        return x.samples[-1] - self._convolve(x)[-1]

    def apply_hat(self, x: History) -> History:
        return History(x.step, x.samples - self._convolve(x))

    def invert_hat(self, h: History, tol: float = 1e-12, max_iter: int = 1000,
                   return_info: bool = False):
        """Solve ``D^ x = h`` by the Neumann fixed point ``x <- h + N x``.

        The returned history satisfies ``||D^ x - h||_inf <= tol / (1-gamma)``.
        """
        gamma = self.gamma
        if gamma >= 1.0:
            raise ValueError(f"neutral part is not a contraction (gamma={gamma:.3g} >= 1)")
        x = History(h.step, h.samples.copy())
        residuals = []
        for it in range(max_iter):
            nx = self._convolve(x)
            new = h.samples + nx
            update = float(np.max(np.abs(new - x.samples))) if new.size else 0.0
            x = History(h.step, new)
            residuals.append(update)
            if update <= tol:
                break
        else:
            raise RuntimeError(
                f"Neumann iteration did not reach tol={tol} in {max_iter} sweeps "
                f"(last update {residuals[-1]:.3e})")
        if return_info:
            return x, {"iterations": len(residuals), "residuals": residuals,
                       "gamma": gamma}
        return x

    # -- certification ----------------------------------------------------

    def check_stability(self) -> StabilityReport:
        gamma = self.gamma
        positive = all(e.is_positive() for row in self.entries for e in row)
        return StabilityReport(gamma=gamma, stable=gamma < 1.0, positive=positive)

    def commutes_with(self, A: np.ndarray, tol: float = 1e-9,
                      n_samples: int = 32, seed: int = 0) -> bool:
        """Check ``A (D x) = D (A x)`` for all histories.

        Exact (True) for diagonal A with diagonal nu and for scalar A;
        otherwise decided by a randomized check on ``n_samples`` histories.
        """
        A = np.asarray(A, dtype=float)
        off = A - np.diag(np.diag(A))
        if self.is_diagonal() and not np.any(off):
            return True
        if np.allclose(A, A[0, 0] * np.eye(self.m), rtol=0, atol=0):
            return True
        rng = np.random.default_rng(seed)
        horizon = max(1.0, self.max_support())
        step = horizon / 64
        n = int(round(horizon / step))
        for _ in range(n_samples):
            x = History(step, rng.standard_normal((n + 1, self.m)))
            Ax = History(step, x.samples @ A.T)
            lhs = A @ self.apply(x)
            rhs = self.apply(Ax)
            if np.max(np.abs(lhs - rhs)) > tol:
                return False
        return True
