"""Exponential-ordering cone algebra.

The cone with quasipositive matrix ``A`` contains the nonnegative histories
``w`` with ``w(t) >= e^{A(t-s)} w(s)`` on a window (a finite ``[-r, 0]`` or
the whole half line).  On a uniform grid the nonnegativity of ``e^{A dt}``
makes the condition transitive, so checking adjacent node pairs suffices; the
all-pairs brute force is kept as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .histories import History

__all__ = ["ConeParams", "is_quasipositive", "matrix_exp", "cone_margin",
           "cone_contains", "cone_contains_allpairs", "order_leq",
           "order_margin", "cone_infimum", "perturb_in_cone",
           "random_cone_element"]


def is_quasipositive(A) -> bool:
    """True iff all off-diagonal entries are >= 0."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    off = A - np.diag(np.diag(A))
    return bool(np.min(off) >= 0.0) if A.shape[0] > 1 else True


def matrix_exp(A, t: float) -> np.ndarray:
    """``e^{At}`` for ``t >= 0`` by scaling and squaring.

    The series is run on the shifted nonnegative matrix ``A + lam*I`` and
    rescaled by ``e^{-lam t}``, so quasipositive input yields an exactly
    nonnegative result.
    """
    A = np.asarray(A, dtype=float)
    if t < 0:
        raise ValueError("t must be >= 0")
    lam = max(0.0, -float(np.min(np.diag(A))))
    B = (A + lam * np.eye(A.shape[0])) * t
    norm = float(np.max(np.sum(np.abs(B), axis=1)))
    squarings = max(0, int(np.ceil(np.log2(norm))) if norm > 1.0 else 0)
    B /= 2.0 ** squarings
    E = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, 40):
        term = term @ B / k
        E = E + term
        if float(np.max(np.abs(term))) < 1e-18 * max(1.0, float(np.max(np.abs(E)))):
            break
    for _ in range(squarings):
        E = E @ E
    return E * np.exp(-lam * t)


def _spectrum_negative(A: np.ndarray) -> bool | None:
    """(A1) check: True/False when decidable, None if inconclusive.

    Exact for (upper or lower) triangular matrices, Gershgorin bound
    otherwise.
    """
    d = np.diag(A)
    if not np.any(np.tril(A, -1)) or not np.any(np.triu(A, 1)):
        return bool(np.all(d < 0))
    radii = np.sum(np.abs(A), axis=1) - np.abs(d)
    if np.all(d + radii < 0):
        return True
    return None


@dataclass(frozen=True)
class ConeParams:
    """Quasipositive matrix plus window mode (finite ``r`` or full line)."""

    A: np.ndarray
    window: float | None = None     # None = full line
    tol: float = 1e-9
    _exp_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        object.__setattr__(self, "A", A)
        if not is_quasipositive(A):
            raise ValueError("A must be quasipositive (nonnegative off-diagonals)")
        if self.window is None:
            neg = _spectrum_negative(A)
            if neg is None:
                raise ValueError("cannot certify negative spectrum of A for the "
                                 "full-line cone (triangular or Gershgorin only)")
            if not neg:
                raise ValueError("full-line cone requires all eigenvalues of A "
                                 "to have negative real part")
        elif self.window <= 0:
            raise ValueError("window must be positive")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def step_matrix(self, dt: float) -> np.ndarray:
        key = round(dt, 15)
        if key not in self._exp_cache:
            self._exp_cache[key] = matrix_exp(self.A, dt)
        return self._exp_cache[key]


def cone_margin(w: History, cone: ConeParams) -> float:
    """Worst violation of cone membership; ``>= -tol`` means inside.

    Combines the nodewise nonnegativity margin with the adjacent-pair
    exponential growth margin on the window (tail junction included for the
    full-line cone).
    """
    if w.dim != cone.dim:
        raise ValueError("dimension mismatch")
    E = cone.step_matrix(w.step)
    samples = w.samples
    margin = float(np.min(samples))
    pair = samples[1:] - samples[:-1] @ E.T
    if cone.window is not None:
        n_window = int(np.ceil(cone.window / w.step - 1e-9))
        n_window = min(n_window, pair.shape[0])
        if n_window > 0:
            margin = min(margin, float(np.min(pair[-n_window:])))
    else:
        if pair.size:
            margin = min(margin, float(np.min(pair)))
        # constant tail: the pair condition at and beyond the junction
        tail = samples[0] - E @ samples[0]
        margin = min(margin, float(np.min(tail)))
    return margin


def cone_contains(w: History, cone: ConeParams) -> bool:
    return cone_margin(w, cone) >= -cone.tol


def cone_contains_allpairs(w: History, cone: ConeParams) -> bool:
    """Brute-force oracle: checks every node pair ``s <= t`` in the window
    using powers of the one-step matrix (so that the adjacent-pair check and
    this one agree exactly on grids)."""
    E = cone.step_matrix(w.step)
    samples = w.samples
    n = samples.shape[0]
    if float(np.min(samples)) < -cone.tol:
        return False
    if cone.window is not None:
        n_window = int(np.ceil(cone.window / w.step - 1e-9))
        start = max(0, n - 1 - n_window)
    else:
        start = 0
    power = np.eye(cone.dim)
    for gap in range(1, n - start):
        power = E @ power
        upper = samples[start + gap:]
        lower = samples[start:-gap] if gap < n - start else samples[start:start + 1]
        if float(np.min(upper - lower @ power.T)) < -cone.tol:
            return False
    if cone.window is None:
        tail = samples[0] - E @ samples[0]
        if float(np.min(tail)) < -cone.tol:
            return False
    return True


def order_margin(x: History, y: History, cone: ConeParams) -> float:
    return cone_margin(y - x, cone)


def order_leq(x: History, y: History, cone: ConeParams) -> bool:
    return cone_contains(y - x, cone)


def _trapezoid_solve(A: np.ndarray, a0: np.ndarray, h: np.ndarray,
                     dt: float) -> np.ndarray:
    """Forward trapezoidal solve of ``a' = A a + h`` on the grid of ``h``."""
    m = A.shape[0]
    I = np.eye(m)
    left = np.linalg.inv(I - 0.5 * dt * A)
    right = I + 0.5 * dt * A
    out = np.empty_like(h)
    out[0] = a0
    for k in range(h.shape[0] - 1):
        out[k + 1] = left @ (right @ out[k] + 0.5 * dt * (h[k] + h[k + 1]))
    return out


def cone_infimum(x: History, y: History, cone: ConeParams) -> History:
    """Greatest constructible lower bound of ``x`` and ``y`` for the order.

    On the window the infimum solves ``a' = A a + h`` with forcing
    ``h = min(x' - A x, y' - A y)`` componentwise; off the window (finite
    case) it is the plain pointwise minimum.
    """
    xs, ys = x.samples, y.samples
    if xs.shape != ys.shape or abs(x.step - y.step) > 1e-12 * x.step:
        raise ValueError("histories must share the grid")
    dt = x.step
    A = cone.A
    hx = x.derivative_samples() - xs @ A.T
    hy = y.derivative_samples() - ys @ A.T
    h = np.minimum(hx, hy)
    n = xs.shape[0]
    if cone.window is None:
        a0 = np.minimum(xs[0], ys[0])
        a = _trapezoid_solve(A, a0, h, dt)
    else:
        n_window = min(int(np.ceil(cone.window / dt - 1e-9)), n - 1)
        split = n - 1 - n_window
        a = np.minimum(xs, ys)
        a[split:] = _trapezoid_solve(A, a[split], h[split:], dt)
    return History(dt, a)


def perturb_in_cone(x: History, c: float, cone: ConeParams) -> History:
    """``y = x + c * 1`` with ``x <= y`` in the cone.

    Requires nonpositive row sums of ``A`` so that constant positive vectors
    are cone elements.
    """
    if c < 0:
        raise ValueError("c must be >= 0")
    row_sums = np.sum(cone.A, axis=1)
    if np.any(row_sums > 1e-12):
        raise ValueError("perturb_in_cone requires nonpositive row sums of A")
    return x.shift_constant(c)


def random_cone_element(cone: ConeParams, step: float, horizon: float,
                        rng, scale: float = 1.0) -> History:
    """Random Lipschitz cone element built forward: ``w(s+dt) = E w(s) + q``
    with nonnegative increments ``q``, so membership holds by construction."""
    E = cone.step_matrix(step)
    n = int(round(horizon / step))
    m = cone.dim
    w = np.empty((n + 1, m))
    if cone.window is None:
        # the constant tail must itself satisfy the pair condition,
        # (I - E) w(-T) >= 0; since (I - E)^{-1} = sum E^k is nonnegative,
        # solving from a nonnegative right-hand side guarantees it
        q0 = scale * step * rng.uniform(0.0, 1.0, m)
        w[0] = np.linalg.solve(np.eye(m) - E, q0)
    else:
        w[0] = scale * rng.uniform(0.0, 1.0, m)
    increments = scale * step * rng.uniform(0.0, 1.0, (n, m))
    for k in range(n):
        w[k + 1] = E @ w[k] + increments[k]
    return History(step, w)
