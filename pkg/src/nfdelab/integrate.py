"""Time integration of the compartmental NFDE families.

The primary route integrates the transformed equation for ``y = D z_t``
(which needs no derivative of the neutral term) and recovers ``z`` from ``y``
through the neutral quadrature at every step.  The hot loop lives in a
compiled extension when available, with a pure-Python twin selected at import
otherwise (``NFDELAB_BACKEND=python`` forces the fallback).

A direct method-of-steps integrator for single-atom neutral parts is kept as
a cross-validation oracle.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .histories import History, Trajectory
from .models import CompartmentModel

if os.environ.get("NFDELAB_BACKEND", "").lower() == "python":
    from . import _step_py as _backend
else:
    try:
        from . import _stepkernel as _backend
    except ImportError:  # extension not built; fall back
        from . import _step_py as _backend

BACKEND = _backend.BACKEND_NAME

__all__ = ["IntegratorConfig", "ModelTables", "integrate", "integrate_direct",
           "BACKEND"]

_SCHEMES = {"heun": 0, "euler": 1}
_FAMILY_CODE = {"linear": 0, "saturating_arctan": 1, "logistic_slope": 2}


@dataclass
class IntegratorConfig:
    dt: float = 1e-3
    t_end: float = 10.0
    scheme: str = "heun"
    picard_tol: float = 1e-12
    picard_max: int = 50
    horizon: float | None = None     # history window; default: max delay
    tail_tol: float = 1e-10          # admissible truncated measure mass

    def with_dt(self, dt: float) -> "IntegratorConfig":
        return replace(self, dt=dt)


@dataclass
class ModelTables:
    """Flat quadrature tables consumed by the stepping kernels.

    Lags are in grid-step units; measure nodes beyond the horizon were
    dropped (their mass is bounded by the tail tolerance).
    """

    m: int
    dt: float
    freqs: np.ndarray
    theta0: np.ndarray
    nu_off: np.ndarray
    nu_lag: np.ndarray
    nu_w: np.ndarray
    n_pipes: int
    pipe_to: np.ndarray
    pipe_from: np.ndarray
    pipe_fam: np.ndarray
    pipe_coef: np.ndarray
    pipe_harm: np.ndarray
    pipe_amp: np.ndarray
    pipe_off: np.ndarray
    q_off: np.ndarray
    q_lag: np.ndarray
    q_w: np.ndarray
    sink_fam: np.ndarray
    sink_coef: np.ndarray
    sink_harm: np.ndarray
    sink_amp: np.ndarray
    sink_off: np.ndarray
    dropped_mass: float = 0.0


def _measure_nodes(mu, dt: float, horizon: float, tail_tol: float):
    """Measure quadrature nodes as (lag-in-steps, weight), truncated at the
    horizon."""
    locs, weights = mu.eval_points()
    keep = np.abs(weights) > 0.0
    locs, weights = locs[keep], weights[keep]
    inside = locs >= -horizon - 1e-9 * dt
    dropped = float(np.abs(weights[~inside]).sum())
    if dropped > tail_tol:
        raise ValueError(
            f"measure mass {dropped:.3e} beyond horizon {horizon} exceeds the "
            f"tail tolerance {tail_tol:.1e}; enlarge the horizon")
    lags = -locs[inside] / dt
    # snap lags that are within float noise of a grid node, so aligned atoms
    # are evaluated exactly
    rounded = np.round(lags)
    snap = np.abs(lags - rounded) < 1e-9
    lags[snap] = rounded[snap]
    return lags, weights[inside], dropped


def build_tables(model: CompartmentModel, cfg: IntegratorConfig,
                 horizon: float) -> ModelTables:
    dt = cfg.dt
    nu_off = [0]
    nu_lag: list = []
    nu_w: list = []
    dropped = 0.0
    for nu in model.neutral:
        lags, weights, d = _measure_nodes(nu, dt, horizon, cfg.tail_tol)
        if np.any(lags * dt < dt - 1e-9):
            raise ValueError("neutral measures must carry no mass in (-dt, 0]")
        nu_lag.extend(lags)
        nu_w.extend(weights)
        nu_off.append(len(nu_lag))
        dropped += d

    keys = sorted(model.pipes)
    q_off = [0]
    q_lag: list = []
    q_w: list = []
    pipe_to, pipe_from, pipe_fam = [], [], []
    pipe_coef, pipe_harm, pipe_amp, pipe_off = [], [], [], []
    for (i, j) in keys:
        tr = model.transports[(i, j)]
        lags, weights, d = _measure_nodes(model.pipes[(i, j)], dt, horizon,
                                          cfg.tail_tol)
        q_lag.extend(lags)
        q_w.extend(weights)
        q_off.append(len(q_lag))
        pipe_to.append(i)
        pipe_from.append(j)
        pipe_fam.append(_FAMILY_CODE[tr.family])
        pipe_coef.append(tr.coef)
        pipe_harm.append(tr.harmonic)
        pipe_amp.append(tr.amp)
        pipe_off.append(tr.offset)
        dropped += d

    sink_fam = np.full(model.m, -1, dtype=np.int64)
    sink_coef = np.zeros(model.m)
    sink_harm = np.zeros(model.m, dtype=np.int64)
    sink_amp = np.zeros(model.m)
    sink_off = np.ones(model.m)
    for i, tr in model.sinks.items():
        sink_fam[i] = _FAMILY_CODE[tr.family]
        sink_coef[i] = tr.coef
        sink_harm[i] = tr.harmonic
        sink_amp[i] = tr.amp
        sink_off[i] = tr.offset

    return ModelTables(
        m=model.m, dt=dt,
        freqs=np.asarray(model.driver.freqs, dtype=float),
        theta0=np.asarray(model.driver.theta0, dtype=float),
        nu_off=np.asarray(nu_off, dtype=np.int64),
        nu_lag=np.asarray(nu_lag, dtype=float),
        nu_w=np.asarray(nu_w, dtype=float),
        n_pipes=len(keys),
        pipe_to=np.asarray(pipe_to, dtype=np.int64),
        pipe_from=np.asarray(pipe_from, dtype=np.int64),
        pipe_fam=np.asarray(pipe_fam, dtype=np.int64),
        pipe_coef=np.asarray(pipe_coef, dtype=float),
        pipe_harm=np.asarray(pipe_harm, dtype=np.int64),
        pipe_amp=np.asarray(pipe_amp, dtype=float),
        pipe_off=np.asarray(pipe_off, dtype=float),
        q_off=np.asarray(q_off, dtype=np.int64),
        q_lag=np.asarray(q_lag, dtype=float),
        q_w=np.asarray(q_w, dtype=float),
        sink_fam=sink_fam, sink_coef=sink_coef, sink_harm=sink_harm,
        sink_amp=sink_amp, sink_off=sink_off,
        dropped_mass=dropped,
    )


def _resample(x0: History, dt: float, horizon: float, m: int) -> np.ndarray:
    if x0.dim != m:
        raise ValueError("initial history dimension mismatch")
    n = int(round(horizon / dt))
    s = -dt * np.arange(n, -1, -1)
    return np.asarray(x0.eval(s), dtype=float)


def _neutral_quad(tab: ModelTables, z: np.ndarray, pos: int) -> np.ndarray:
    out = np.zeros(tab.m)
    for i in range(tab.m):
        for q in range(tab.nu_off[i], tab.nu_off[i + 1]):
            p = pos - tab.nu_lag[q]
            if p <= 0:
                val = z[0, i]
            else:
                i0 = int(p)
                frac = p - i0
                val = z[i0, i] if frac == 0.0 else \
                    (1 - frac) * z[i0, i] + frac * z[i0 + 1, i]
            out[i] += tab.nu_w[q] * val
    return out


def integrate(model: CompartmentModel, x0: History, cfg: IntegratorConfig,
              t0: float = 0.0) -> Trajectory:
    """Advance the NFDE from ``x0`` on ``[0, t_end]``.

    ``t0`` offsets the driver time (restarting from a section at time ``t``
    of a previous run reproduces that run's tail, up to scheme error).
    """
    stability = model.neutral_operator().check_stability()
    if not stability.stable:
        raise ValueError(f"unstable neutral part: gamma={stability.gamma:.3g} >= 1")
    if cfg.scheme not in _SCHEMES:
        raise ValueError(f"unknown scheme {cfg.scheme!r}")
    horizon = cfg.horizon if cfg.horizon is not None else \
        max(model.max_delay(), cfg.dt)
    n_hist = int(round(horizon / cfg.dt))
    horizon = n_hist * cfg.dt
    tab = build_tables(model, cfg, horizon)

    n_steps = int(round(cfg.t_end / cfg.dt))
    z = np.empty((n_hist + n_steps + 1, model.m))
    z[: n_hist + 1] = _resample(x0, cfg.dt, horizon, model.m)
    y = np.empty((n_steps + 1, model.m))
    y[0] = z[n_hist] - _neutral_quad(tab, z, n_hist)

    max_iters, max_resid, fail = _backend.run_steps(
        tab, z, y, n_steps, t0, _SCHEMES[cfg.scheme],
        cfg.picard_tol, cfg.picard_max)
    if fail >= 0:
        raise RuntimeError(
            f"Picard closure failed at step {fail} (t={t0 + fail * cfg.dt:.6g}), "
            f"residual {max_resid:.3e} > tol {cfg.picard_tol:.1e}")
    stats = {"backend": BACKEND, "scheme": cfg.scheme, "dt": cfg.dt,
             "picard_max_iters": int(max_iters),
             "picard_max_residual": float(max_resid),
             "dropped_measure_mass": tab.dropped_mass, "t0": t0}
    return Trajectory(cfg.dt, z, n_hist, t0=t0, stats=stats)


def integrate_direct(model: CompartmentModel, x0: History,
                     cfg: IntegratorConfig, t0: float = 0.0) -> Trajectory:
    """Method-of-steps oracle for single-atom neutral parts.

    Steps the accumulated flux ``w(t) = D z_t`` with an explicit
    predictor-corrector (one corrector pass, no Picard closure) and recovers
    ``z(t) = w(t) + gamma_i z(t - alpha_i)``.  Agrees with ``integrate`` to
    scheme order; kept as an independent code path for cross-checks.
    """
    params = []
    for i in range(model.m):
        nu = model.neutral[i]
        if nu.is_zero:
            params.append((0.0, 1.0))
        elif nu.has_density or nu.atom_locs.size != 1:
            raise ValueError("direct mode requires single-atom neutral parts")
        else:
            params.append((float(nu.atom_weights[0]), float(-nu.atom_locs[0])))
    horizon = cfg.horizon if cfg.horizon is not None else \
        max(model.max_delay(), cfg.dt)
    n_hist = int(round(horizon / cfg.dt))
    horizon = n_hist * cfg.dt
    dt = cfg.dt
    n_steps = int(round(cfg.t_end / dt))
    z = np.empty((n_hist + n_steps + 1, model.m))
    z[: n_hist + 1] = _resample(x0, dt, horizon, model.m)

    def hist(upto: int) -> History:
        return History(dt, z[max(0, upto - n_hist): upto + 1])

    def recover(w: np.ndarray, pos: int) -> np.ndarray:
        out = np.empty(model.m)
        for i, (gam, alpha) in enumerate(params):
            if gam == 0.0:
                out[i] = w[i]
            else:
                p = pos - alpha / dt
                i0 = int(p) if p > 0 else 0
                frac = max(p, 0.0) - i0
                val = (1 - frac) * z[i0, i] + frac * z[min(i0 + 1, pos), i]
                out[i] = w[i] + gam * val
        return out

    # w(0) = D z_0
    w = z[n_hist].copy()
    for i, (gam, alpha) in enumerate(params):
        if gam != 0.0:
            w[i] -= gam * float(hist(n_hist).eval(-alpha)[i])
    for n in range(n_steps):
        t_a = t0 + n * dt
        pos = n_hist + n
        f0 = model.eval_F(t_a, hist(pos))
        w_pred = w + dt * f0
        z[pos + 1] = recover(w_pred, pos + 1)
        f1 = model.eval_F(t_a + dt, hist(pos + 1))
        w = w + 0.5 * dt * (f0 + f1)
        z[pos + 1] = recover(w, pos + 1)
    stats = {"backend": "direct-python", "scheme": "heun-direct", "dt": dt,
             "t0": t0}
    return Trajectory(dt, z, n_hist, t0=t0, stats=stats)
