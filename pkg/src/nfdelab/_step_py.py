"""Pure-Python time stepper; reference twin of the compiled kernel.

Same algorithm and call signature as ``_stepkernel``: one trapezoidal
(Heun-closed) step advances the transformed variable ``y = D z_t`` and
recovers ``z`` through the neutral quadrature, with Picard iteration closing
the implicit history coupling.  Kept deliberately close to the Cython source
so the two stay diffable.
"""

from __future__ import annotations

import math

BACKEND_NAME = "python"

_LN2 = math.log(2.0)


def _g(fam: int, coef: float, p: float, v: float) -> float:
    if fam == 0:
        return p * coef * v
    if fam == 1:
        return p * coef * math.atan(v)
    # logistic_slope: stable shifted softplus
    if v > 30.0:
        sp = v
    elif v < -30.0:
        sp = math.exp(v)
    else:
        sp = math.log1p(math.exp(-abs(v))) + max(v, 0.0)
    return p * coef * (sp - _LN2)


def _factor(t, harm, amp, off, freqs, theta0):
    if amp == 0.0 or len(freqs) == 0:
        return off
    th = math.fmod(theta0[harm] + freqs[harm] * t, 1.0)
    return off + amp * math.cos(2.0 * math.pi * th)


def _interp(z, pos, j):
    if pos <= 0.0:
        return z[0, j]
    i0 = int(pos)
    frac = pos - i0
    if frac == 0.0:
        return z[i0, j]
    return (1.0 - frac) * z[i0, j] + frac * z[i0 + 1, j]


def _eval_f(tab, z, t, pos, f):
    m = tab.m
    for i in range(m):
        f[i] = 0.0
    for p in range(tab.n_pipes):
        to_i = tab.pipe_to[p]
        from_j = tab.pipe_from[p]
        fam = tab.pipe_fam[p]
        coef = tab.pipe_coef[p]
        harm = tab.pipe_harm[p]
        amp = tab.pipe_amp[p]
        off = tab.pipe_off[p]
        pt = _factor(t, harm, amp, off, tab.freqs, tab.theta0)
        f[from_j] -= _g(fam, coef, pt, z[pos, from_j])
        acc = 0.0
        for q in range(tab.q_off[p], tab.q_off[p + 1]):
            lag = tab.q_lag[q]
            ps = _factor(t - lag * tab.dt, harm, amp, off, tab.freqs, tab.theta0)
            val = _interp(z, pos - lag, from_j)
            acc += tab.q_w[q] * _g(fam, coef, ps, val)
        f[to_i] += acc
    for i in range(m):
        if tab.sink_fam[i] >= 0:
            pt = _factor(t, tab.sink_harm[i], tab.sink_amp[i], tab.sink_off[i],
                         tab.freqs, tab.theta0)
            f[i] -= _g(tab.sink_fam[i], tab.sink_coef[i], pt, z[pos, i])


def _recover(tab, z, pos, y1):
    """z(pos) = y1 + neutral quadrature of past z."""
    for i in range(tab.m):
        acc = 0.0
        for q in range(tab.nu_off[i], tab.nu_off[i + 1]):
            acc += tab.nu_w[q] * _interp(z, pos - tab.nu_lag[q], i)
        z[pos, i] = y1[i] + acc


def run_steps(tab, z, y, n_steps, t0, scheme, picard_tol, picard_max):
    """Advance ``n_steps`` from the filled history.

    ``z``: (n_hist + n_steps + 1, m) with rows 0..n_hist filled;
    ``y``: (n_steps + 1, m) with row 0 filled.
    Returns (max_picard_iters, max_residual, fail_step) with fail_step = -1
    on success.
    """
    m = tab.m
    dt = tab.dt
    n_hist = z.shape[0] - n_steps - 1
    f0 = [0.0] * m
    f1 = [0.0] * m
    y1 = [0.0] * m
    max_iters = 0
    max_resid = 0.0
    for n in range(n_steps):
        t_a = t0 + n * dt
        t_b = t_a + dt
        pos = n_hist + n
        _eval_f(tab, z, t_a, pos, f0)
        for i in range(m):
            z[pos + 1, i] = z[pos, i]
        if scheme == 1:  # Euler: y-update fixed, Picard only on recovery
            for i in range(m):
                y1[i] = y[n, i] + dt * f0[i]
        resid = math.inf
        iters = 0
        while iters < picard_max:
            iters += 1
            if scheme == 0:
                _eval_f(tab, z, t_b, pos + 1, f1)
                for i in range(m):
                    y1[i] = y[n, i] + 0.5 * dt * (f0[i] + f1[i])
            old = [z[pos + 1, i] for i in range(m)]
            _recover(tab, z, pos + 1, y1)
            resid = max(abs(z[pos + 1, i] - old[i]) for i in range(m))
            if resid <= picard_tol:
                break
        if resid > picard_tol:
            return max_iters, resid, n
        if iters > max_iters:
            max_iters = iters
        if resid > max_resid:
            max_resid = resid
        for i in range(m):
            y[n + 1, i] = y1[i]
    return max_iters, max_resid, -1
