"""Sampled phase-space elements and forward trajectories.

A history is a vector-valued function on (-inf, 0]: uniformly sampled on
``[-T, 0]``, linearly interpolated between nodes, and extended by a constant
equal to the oldest sample beyond ``-T``.  A trajectory holds the initial
history together with the forward samples produced by the integrator and can
be sliced back into histories (semiflow sections).
"""

from __future__ import annotations

import csv
import math

import numpy as np

__all__ = ["History", "Trajectory"]


class History:
    """Uniform samples of ``x`` on ``[-T, 0]`` with constant tail extension."""

    __slots__ = ("step", "samples")

    def __init__(self, step: float, samples):
        if step <= 0:
            raise ValueError("step must be positive")
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2 or samples.shape[0] < 2:
            raise ValueError("samples must be (N+1, m) with N >= 1")
        self.step = float(step)
        self.samples = samples

    # -- constructors -----------------------------------------------------

    @classmethod
    def constant(cls, value, step: float, horizon: float) -> "History":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        n = max(1, int(round(horizon / step)))
        return cls(step, np.tile(value, (n + 1, 1)))

    @classmethod
    def from_callable(cls, f, step: float, horizon: float, dim=None) -> "History":
        n = max(1, int(round(horizon / step)))
        s = -step * np.arange(n, -1, -1)
        vals = np.asarray([np.atleast_1d(f(si)) for si in s], dtype=float)
        return cls(step, vals)

    @classmethod
    def from_csv(cls, path) -> "History":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, rows = rows[0], rows[1:]
        if not header or header[0].strip() != "s":
            raise ValueError("history CSV must start with column 's'")
        data = np.asarray([[float(v) for v in row] for row in rows])
        s, vals = data[:, 0], data[:, 1:]
        if s[0] > s[-1]:
            s, vals = s[::-1], vals[::-1]
        steps = np.diff(s)
        step = steps[0]
        if not np.allclose(steps, step, rtol=0, atol=1e-9 * step):
            raise ValueError("history CSV grid must be uniform")
        if abs(s[-1]) > 1e-9 * step:
            raise ValueError("history CSV must end at s = 0")
        return cls(step, vals)

    # -- geometry ---------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def horizon(self) -> float:
        return (self.samples.shape[0] - 1) * self.step

    @property
    def grid(self) -> np.ndarray:
        n = self.samples.shape[0] - 1
        return -self.step * np.arange(n, -1, -1)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.samples))) if self.samples.size else 0.0

    # -- evaluation -------------------------------------------------------

    def eval(self, s):
        """Evaluate at ``s <= 0`` (scalar or array): linear interpolation on
        the grid, constant tail beyond ``-T``."""
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr > 1e-12):
            raise ValueError("histories are defined on s <= 0 only")
        n = self.samples.shape[0] - 1
        pos = np.clip(s_arr / self.step + n, 0.0, float(n))
        i0 = np.floor(pos).astype(int)
        i0 = np.minimum(i0, n - 1)
        frac = pos - i0
        out = (1.0 - frac)[..., None] * self.samples[i0] + frac[..., None] * self.samples[i0 + 1]
        if s_arr.ndim == 0:
            return out.reshape(self.dim)
        return out

    def derivative_samples(self) -> np.ndarray:
        """Central differences at interior nodes, one-sided at the ends."""
        return np.gradient(self.samples, self.step, axis=0)

    def lipschitz_constant(self) -> float:
        d = np.diff(self.samples, axis=0) / self.step
        if d.size == 0:
            return 0.0
        return float(np.max(np.abs(d)))

    # -- metric -----------------------------------------------------------

    def metric_d(self, other: "History", depth: int = 10) -> float:
        """Truncated compact-open metric ``sum 2^-n ||.||_n / (1 + ||.||_n)``.

        Both histories share the grid, so each window seminorm is a suffix
        maximum over the sample nodes covering ``[-n, 0]`` (the shorter
        history is padded with its constant tail).
        """
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        a, b = self._aligned(other)
        diff = np.abs(a - b)
        last = diff.shape[0] - 1
        total = 0.0
        for n in range(1, depth + 1):
            k = min(int(math.ceil(n / self.step - 1e-12)), last)
            nn = float(np.max(diff[last - k:]))
            total += 2.0 ** (-n) * nn / (1.0 + nn)
        return total

    # -- arithmetic (same grid) -------------------------------------------

    def _aligned(self, other: "History") -> np.ndarray:
        if abs(other.step - self.step) > 1e-12 * self.step:
            raise ValueError("step mismatch")
        a, b = self.samples, other.samples
        if a.shape[0] == b.shape[0]:
            return a, b
        # pad the shorter one with its constant tail
        n = max(a.shape[0], b.shape[0])

        def pad(x):
            if x.shape[0] == n:
                return x
            return np.vstack([np.tile(x[0], (n - x.shape[0], 1)), x])

        return pad(a), pad(b)

    def __add__(self, other):
        a, b = self._aligned(other)
        return History(self.step, a + b)

    def __sub__(self, other):
        a, b = self._aligned(other)
        return History(self.step, a - b)

    def __mul__(self, c: float):
        return History(self.step, self.samples * float(c))

    __rmul__ = __mul__

    def shift_constant(self, c) -> "History":
        """Add the constant vector ``c`` (scalar broadcasts) nodewise."""
        return History(self.step, self.samples + np.asarray(c, dtype=float))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s"] + [f"x_{i+1}" for i in range(self.dim)])
            for s, row in zip(self.grid, self.samples):
                w.writerow([repr(float(s))] + [repr(float(v)) for v in row])

    def __repr__(self):
        return (f"History(dim={self.dim}, step={self.step}, "
                f"horizon={self.horizon:.6g})")


class Trajectory:
    """Forward extension of a history on the same grid.

    ``z`` stores all samples from ``-T`` to ``t_end``; index ``n_hist`` is
    ``t = 0``.  Sections at grid times are valid histories sharing the grid.
    """

    def __init__(self, step: float, z: np.ndarray, n_hist: int, t0: float = 0.0,
                 stats: dict | None = None):
        self.step = float(step)
        self.z = np.asarray(z, dtype=float)
        self.n_hist = int(n_hist)
        self.t0 = float(t0)
        self.stats = stats or {}

    @property
    def dim(self) -> int:
        return self.z.shape[1]

    @property
    def horizon(self) -> float:
        return self.n_hist * self.step

    @property
    def t_end(self) -> float:
        return (self.z.shape[0] - 1 - self.n_hist) * self.step

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.z.shape[0] - self.n_hist)

    @property
    def forward(self) -> np.ndarray:
        """Samples for t >= 0 (row 0 is t = 0)."""
        return self.z[self.n_hist:]

    def _index(self, t: float) -> int:
        pos = t / self.step
        idx = int(round(pos))
        if abs(pos - idx) > 1e-6:
            raise ValueError(f"t={t} is not on the grid (step {self.step})")
        if not 0 <= idx <= self.z.shape[0] - 1 - self.n_hist:
            raise ValueError(f"t={t} outside [0, {self.t_end}]")
        return idx

    def value(self, t: float) -> np.ndarray:
        return self.z[self.n_hist + self._index(t)]

    def section(self, t: float) -> History:
        """History ``s -> z(t+s)`` on ``[-T, 0]`` for grid-aligned ``t``."""
        idx = self.n_hist + self._index(t)
        return History(self.step, self.z[idx - self.n_hist: idx + 1].copy())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"z_{i+1}" for i in range(self.dim)])
            for t, row in zip(self.times, self.forward):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    def __repr__(self):
        return (f"Trajectory(dim={self.dim}, step={self.step}, "
                f"T={self.horizon:.6g}, t_end={self.t_end:.6g})")
