"""Compare the compiled stepping kernel against the pure-Python fallback.

Runs the same table-driven workload through both backends and reports
steps/second plus the speedup.  Usage: python benchmarks/bench_kernels.py
[n_steps].
"""

import sys
import time

import numpy as np

from nfdelab import CompartmentModel, History
from nfdelab import _step_py
from nfdelab.cli import load_config
from nfdelab.integrate import IntegratorConfig, _neutral_quad, _resample, \
    build_tables

try:
    from nfdelab import _stepkernel
except ImportError:
    _stepkernel = None


class _Args:
    preset = "linear3"
    config = None


def main():
    n_steps = int(sys.argv[1]) if len(sys.argv) > 1 else 50_000
    cfg_doc, _ = load_config(_Args())
    model = CompartmentModel.from_config(cfg_doc)
    dt = 1e-3
    cfg = IntegratorConfig(dt=dt, t_end=n_steps * dt)
    n_hist = int(round(model.max_delay() / dt))
    horizon = n_hist * dt
    tab = build_tables(model, cfg, horizon)
    x0 = History.constant(np.ones(model.m), dt, horizon)

    def state():
        z = np.empty((n_hist + n_steps + 1, model.m))
        z[: n_hist + 1] = _resample(x0, dt, horizon, model.m)
        y = np.empty((n_steps + 1, model.m))
        y[0] = z[n_hist] - _neutral_quad(tab, z, n_hist)
        return z, y

    results = {}
    backends = [("python", _step_py)]
    if _stepkernel is not None:
        backends.insert(0, ("cython", _stepkernel))
    for name, mod in backends:
        steps = n_steps if name == "cython" else min(n_steps, 5_000)
        z, y = state()
        t0 = time.perf_counter()
        _, _, fail = mod.run_steps(tab, z[: n_hist + steps + 1],
                                   y[: steps + 1], steps, 0.0, 0, 1e-12, 50)
        elapsed = time.perf_counter() - t0
        assert fail == -1
        results[name] = (steps, elapsed, z[n_hist + steps].copy())
        print(f"{name:>7}: {steps:>7} steps in {elapsed:8.3f} s "
              f"({steps / elapsed:12.0f} steps/s)")

    if len(results) == 2:
        sp, ep, _ = results["python"]
        sc, ec, _ = results["cython"]
        print(f"speedup: {(sp / ep and (sc / ec) / (sp / ep)):.1f}x")
        # agreement on the shared prefix
        z1, y1 = state()
        z2, y2 = state()
        k = min(2_000, n_steps)
        _stepkernel.run_steps(tab, z1[: n_hist + k + 1], y1[: k + 1], k,
                              0.0, 0, 1e-12, 50)
        _step_py.run_steps(tab, z2[: n_hist + k + 1], y2[: k + 1], k,
                           0.0, 0, 1e-12, 50)
        diff = float(np.max(np.abs(z1[: n_hist + k + 1] - z2[: n_hist + k + 1])))
        print(f"max |z_cython - z_python| over {k} steps: {diff:.3e}")


if __name__ == "__main__":
    main()
