"""Signed Borel measures on (-inf, 0] represented as atoms plus a cell density.

A measure is a finite list of point masses at nonpositive locations together
with an optional piecewise-constant density stored as per-cell masses on a
uniform grid.  Cell ``k`` covers ``(-(k+1)*step, -k*step]`` and its quadrature
node is the cell midpoint.  Everything downstream (neutral operators, pipe
transit-time distributions) is built from this one representation.
"""

from __future__ import annotations

import numpy as np

__all__ = ["DelayMeasure"]


class DelayMeasure:
    """Atoms + piecewise-constant density on (-inf, 0], finite total variation.

    Parameters
    ----------
    atoms:
        Iterable of ``(location, weight)`` pairs with ``location <= 0``.
        Coincident locations are merged by summing weights.
    density_step:
        Cell width of the density grid (required if ``density_cells`` given).
    density_cells:
        Mass of each density cell, cell ``k`` covering
        ``(-(k+1)*step, -k*step]``.
    allow_atom_at_zero:
        The neutral operators of this library require no point mass at 0;
        constructing one raises unless this flag is set.
    """

    __slots__ = ("atom_locs", "atom_weights", "density_step", "density_cells")

    def __init__(self, atoms=(), density_step=None, density_cells=None,
                 allow_atom_at_zero=False):
        merged: dict[float, float] = {}
        for loc, w in atoms:
            loc = float(loc)
            if loc > 0.0:
                raise ValueError(f"atom location {loc} must be <= 0")
            merged[loc] = merged.get(loc, 0.0) + float(w)
        locs = np.array(sorted(merged, reverse=True), dtype=float)
        weights = np.array([merged[loc] for loc in locs], dtype=float)
        if not allow_atom_at_zero and locs.size and locs[0] == 0.0 and weights[0] != 0.0:
            raise ValueError("measure carries an atom at 0")
        self.atom_locs = locs
        self.atom_weights = weights

        if density_cells is not None:
            if density_step is None or density_step <= 0:
                raise ValueError("density requires a positive step")
            self.density_step = float(density_step)
            self.density_cells = np.asarray(density_cells, dtype=float)
        else:
            self.density_step = None
            self.density_cells = None

    # -- basic queries ----------------------------------------------------

    @classmethod
    def zero(cls) -> "DelayMeasure":
        return cls()

    @classmethod
    def atom(cls, location: float, weight: float = 1.0) -> "DelayMeasure":
        return cls(atoms=[(location, weight)])

    @classmethod
    def uniform_density(cls, a: float, b: float, mass: float,
                        n_cells: int = 16) -> "DelayMeasure":
        """Uniform mass on ``[a, b]`` with ``a < b <= 0``, split into cells."""
        if not (a < b <= 0.0):
            raise ValueError("need a < b <= 0")
        step = (b - a) / n_cells
        # cell k covers (-(k+1)step, -k step]; shift so cells tile [a, b]
        offset_cells = int(round(-b / step))
        if abs(offset_cells * step + b) > 1e-12 * max(1.0, abs(b)):
            raise ValueError("interval endpoints must align with the cell grid")
        cells = np.zeros(offset_cells + n_cells)
        cells[offset_cells:] = mass / n_cells
        return cls(density_step=step, density_cells=cells)

    @property
    def has_density(self) -> bool:
        return self.density_cells is not None and self.density_cells.size > 0

    @property
    def is_zero(self) -> bool:
        return self.total_variation() == 0.0

    def is_positive(self) -> bool:
        ok = bool(np.all(self.atom_weights >= 0))
        if self.has_density:
            ok = ok and bool(np.all(self.density_cells >= 0))
        return ok

    def support_horizon(self) -> float:
        """Largest |location| carrying mass (0 for the zero measure)."""
        h = 0.0
        nz = self.atom_weights != 0.0
        if np.any(nz):
            h = float(-self.atom_locs[nz].min())
        if self.has_density:
            nzc = np.nonzero(self.density_cells)[0]
            if nzc.size:
                h = max(h, (nzc[-1] + 1) * self.density_step)
        return h

    # -- quadrature -------------------------------------------------------

    def eval_points(self):
        """Quadrature nodes and weights: atoms plus density-cell midpoints."""
        locs = [self.atom_locs]
        weights = [self.atom_weights]
        if self.has_density:
            k = np.arange(self.density_cells.size)
            locs.append(-(k + 0.5) * self.density_step)
            weights.append(self.density_cells)
        return np.concatenate(locs), np.concatenate(weights)

    def total_variation(self) -> float:
        tv = float(np.abs(self.atom_weights).sum())
        if self.has_density:
            tv += float(np.abs(self.density_cells).sum())
        return tv

    def total_mass(self) -> float:
        mass = float(self.atom_weights.sum())
        if self.has_density:
            mass += float(self.density_cells.sum())
        return mass

    def integrate(self, f) -> np.ndarray | float:
        """``sum_k w_k f(s_k)`` over atoms and cell midpoints.

        ``f`` may be a callable of a scalar or an object with a vectorized
        ``eval`` accepting an array of nonpositive times (a history).
        """
        locs, weights = self.eval_points()
        if locs.size == 0:
            return 0.0
        if hasattr(f, "eval"):
            vals = np.asarray(f.eval(locs), dtype=float)
        else:
            vals = np.asarray([f(s) for s in locs], dtype=float)
        return np.tensordot(weights, vals, axes=(0, 0))

    def tail_mass(self, T: float) -> float:
        """Total variation carried by (-inf, -T]."""
        if T < 0:
            raise ValueError("T must be >= 0")
        tail = float(np.abs(self.atom_weights[self.atom_locs <= -T]).sum())
        if self.has_density:
            # cell k lies in the tail iff its whole support is beyond -T
            k0 = int(np.ceil(T / self.density_step - 1e-12))
            tail += float(np.abs(self.density_cells[k0:]).sum())
        return tail

    def first_moment(self) -> float:
        """``int |s| d|mu|(s)`` with cell masses placed at midpoints."""
        locs, weights = self.eval_points()
        return float(np.abs(weights) @ np.abs(locs))

    def exp_integral(self, beta: float) -> float:
        """``int e^{-beta s} d mu(s)`` (exact on atoms, midpoint on cells)."""
        locs, weights = self.eval_points()
        if locs.size == 0:
            return 0.0
        with np.errstate(over="ignore"):
            return float(weights @ np.exp(-beta * locs))

    # -- serialization ----------------------------------------------------

    def to_config(self) -> dict:
        cfg: dict = {"atoms": [[float(s), float(w)]
                               for s, w in zip(self.atom_locs, self.atom_weights)]}
        if self.has_density:
            cfg["density"] = {
                "step": self.density_step,
                "horizon": self.density_cells.size * self.density_step,
                "cells": [float(c) for c in self.density_cells],
            }
        return cfg

    @classmethod
    def from_config(cls, cfg: dict, allow_atom_at_zero=False) -> "DelayMeasure":
        density = cfg.get("density")
        if density is not None:
            return cls(atoms=cfg.get("atoms", ()),
                       density_step=density["step"],
                       density_cells=density["cells"],
                       allow_atom_at_zero=allow_atom_at_zero)
        return cls(atoms=cfg.get("atoms", ()),
                   allow_atom_at_zero=allow_atom_at_zero)

    def __repr__(self):
        parts = [f"atoms={list(zip(self.atom_locs, self.atom_weights))}"]
        if self.has_density:
            parts.append(f"density({self.density_cells.size} cells, "
                         f"step={self.density_step})")
        return f"DelayMeasure({', '.join(parts)})"
