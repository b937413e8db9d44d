# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled time stepper; hot twin of ``_step_py``.

One trapezoidal (Heun-closed) step advances the transformed variable
``y = D z_t`` and recovers ``z`` through the neutral quadrature, with Picard
iteration closing the implicit history coupling.
"""

from libc.math cimport atan, cos, exp, fabs, fmod, log, log1p

import numpy as np

BACKEND_NAME = "cython"

cdef double _LN2 = log(2.0)
cdef double _TWO_PI = 6.283185307179586476925286766559


cdef inline double _g(int fam, double coef, double p, double v) noexcept:
    cdef double sp
    if fam == 0:
        return p * coef * v
    if fam == 1:
        return p * coef * atan(v)
    if v > 30.0:
        sp = v
    elif v < -30.0:
        sp = exp(v)
    else:
        sp = log1p(exp(-fabs(v))) + (v if v > 0.0 else 0.0)
    return p * coef * (sp - _LN2)


cdef inline double _factor(double t, int harm, double amp, double off,
                           double[::1] freqs, double[::1] theta0,
                           int nfreq) noexcept:
    cdef double th
    if amp == 0.0 or nfreq == 0:
        return off
    th = fmod(theta0[harm] + freqs[harm] * t, 1.0)
    return off + amp * cos(_TWO_PI * th)


cdef inline double _interp(double[:, ::1] z, double pos, Py_ssize_t j) noexcept:
    cdef Py_ssize_t i0
    cdef double frac
    if pos <= 0.0:
        return z[0, j]
    i0 = <Py_ssize_t> pos
    frac = pos - i0
    if frac == 0.0:
        return z[i0, j]
    return (1.0 - frac) * z[i0, j] + frac * z[i0 + 1, j]


cdef void _eval_f(double[:, ::1] z, double t,
                  Py_ssize_t pos, double* f,
                  Py_ssize_t m, double dt,
                  Py_ssize_t n_pipes,
                  long[::1] pipe_to, long[::1] pipe_from, long[::1] pipe_fam,
                  double[::1] pipe_coef, long[::1] pipe_harm,
                  double[::1] pipe_amp, double[::1] pipe_off,
                  long[::1] q_off, double[::1] q_lag, double[::1] q_w,
                  long[::1] sink_fam, double[::1] sink_coef,
                  long[::1] sink_harm, double[::1] sink_amp,
                  double[::1] sink_off,
                  double[::1] freqs, double[::1] theta0, int nfreq) noexcept:
    cdef Py_ssize_t i, p, q, to_i, from_j
    cdef int fam
    cdef double coef, amp, off, pt, ps, acc, lag, val
    cdef int harm
    for i in range(m):
        f[i] = 0.0
    for p in range(n_pipes):
        to_i = pipe_to[p]
        from_j = pipe_from[p]
        fam = <int> pipe_fam[p]
        coef = pipe_coef[p]
        harm = <int> pipe_harm[p]
        amp = pipe_amp[p]
        off = pipe_off[p]
        pt = _factor(t, harm, amp, off, freqs, theta0, nfreq)
        f[from_j] -= _g(fam, coef, pt, z[pos, from_j])
        acc = 0.0
        for q in range(q_off[p], q_off[p + 1]):
            lag = q_lag[q]
            ps = _factor(t - lag * dt, harm, amp, off, freqs, theta0, nfreq)
            val = _interp(z, pos - lag, from_j)
            acc += q_w[q] * _g(fam, coef, ps, val)
        f[to_i] += acc
    for i in range(m):
        if sink_fam[i] >= 0:
            pt = _factor(t, <int> sink_harm[i], sink_amp[i], sink_off[i],
                         freqs, theta0, nfreq)
            f[i] -= _g(<int> sink_fam[i], sink_coef[i], pt, z[pos, i])


def run_steps(tab, double[:, ::1] z, double[:, ::1] y, Py_ssize_t n_steps,
              double t0, int scheme, double picard_tol, int picard_max):
    """Same contract as ``_step_py.run_steps``."""
    cdef Py_ssize_t m = tab.m
    cdef double dt = tab.dt
    cdef Py_ssize_t n_hist = z.shape[0] - n_steps - 1
    cdef Py_ssize_t n_pipes = tab.n_pipes
    cdef int nfreq = tab.freqs.shape[0]

    cdef double[::1] freqs = tab.freqs
    cdef double[::1] theta0 = tab.theta0
    cdef long[::1] nu_off = tab.nu_off
    cdef double[::1] nu_lag = tab.nu_lag
    cdef double[::1] nu_w = tab.nu_w
    cdef long[::1] pipe_to = tab.pipe_to
    cdef long[::1] pipe_from = tab.pipe_from
    cdef long[::1] pipe_fam = tab.pipe_fam
    cdef double[::1] pipe_coef = tab.pipe_coef
    cdef long[::1] pipe_harm = tab.pipe_harm
    cdef double[::1] pipe_amp = tab.pipe_amp
    cdef double[::1] pipe_off = tab.pipe_off
    cdef long[::1] q_off = tab.q_off
    cdef double[::1] q_lag = tab.q_lag
    cdef double[::1] q_w = tab.q_w
    cdef long[::1] sink_fam = tab.sink_fam
    cdef double[::1] sink_coef = tab.sink_coef
    cdef long[::1] sink_harm = tab.sink_harm
    cdef double[::1] sink_amp = tab.sink_amp
    cdef double[::1] sink_off = tab.sink_off

    cdef double[64] f0
    cdef double[64] f1
    cdef double[64] y1
    cdef double[64] old
    if m > 64:
        raise ValueError("compiled kernel supports up to 64 compartments")

    cdef Py_ssize_t n, i, q, pos
    cdef int iters, max_iters = 0
    cdef double t_a, t_b, resid, diff, acc, max_resid = 0.0

    for n in range(n_steps):
        t_a = t0 + n * dt
        t_b = t_a + dt
        pos = n_hist + n
        _eval_f(z, t_a, pos, &f0[0], m, dt, n_pipes,
                pipe_to, pipe_from, pipe_fam, pipe_coef, pipe_harm,
                pipe_amp, pipe_off, q_off, q_lag, q_w,
                sink_fam, sink_coef, sink_harm, sink_amp, sink_off,
                freqs, theta0, nfreq)
        for i in range(m):
            z[pos + 1, i] = z[pos, i]
        if scheme == 1:
            for i in range(m):
                y1[i] = y[n, i] + dt * f0[i]
        resid = 1e300
        iters = 0
        while iters < picard_max:
            iters += 1
            if scheme == 0:
                _eval_f(z, t_b, pos + 1, &f1[0], m, dt, n_pipes,
                        pipe_to, pipe_from, pipe_fam, pipe_coef, pipe_harm,
                        pipe_amp, pipe_off, q_off, q_lag, q_w,
                        sink_fam, sink_coef, sink_harm, sink_amp, sink_off,
                        freqs, theta0, nfreq)
                for i in range(m):
                    y1[i] = y[n, i] + 0.5 * dt * (f0[i] + f1[i])
            resid = 0.0
            for i in range(m):
                old[i] = z[pos + 1, i]
                acc = 0.0
                for q in range(nu_off[i], nu_off[i + 1]):
                    acc += nu_w[q] * _interp(z, pos + 1 - nu_lag[q], i)
                z[pos + 1, i] = y1[i] + acc
                diff = fabs(z[pos + 1, i] - old[i])
                if diff > resid:
                    resid = diff
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
