import numpy as np
import pytest

from conftest import load_preset, sin_history
from nfdelab.histories import History
from nfdelab.integrate import IntegratorConfig, integrate, integrate_direct
from nfdelab.measures import DelayMeasure
from nfdelab.models import CompartmentModel, Transport


def decay_model():
    return load_preset("decay")


def test_decay_matches_closed_form():
    m = decay_model()
    x0 = History.constant(np.array([1.0]), 1e-3, 1e-3)
    traj = integrate(m, x0, IntegratorConfig(dt=1e-3, t_end=5.0))
    err = np.max(np.abs(traj.forward[:, 0] - np.exp(-traj.times)))
    assert err <= 1e-6


def test_decay_heun_is_second_order():
    m = decay_model()
    errs = []
    for dt in (2e-3, 1e-3):
        x0 = History.constant(np.array([1.0]), dt, dt)
        traj = integrate(m, x0, IntegratorConfig(dt=dt, t_end=2.0))
        errs.append(np.max(np.abs(traj.forward[:, 0] - np.exp(-traj.times))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


def test_euler_is_first_order():
    m = decay_model()
    errs = []
    for dt in (2e-3, 1e-3):
        x0 = History.constant(np.array([1.0]), dt, dt)
        traj = integrate(m, x0, IntegratorConfig(dt=dt, t_end=2.0,
                                                 scheme="euler"))
        errs.append(np.max(np.abs(traj.forward[:, 0] - np.exp(-traj.times))))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.15)


def test_krisztin_reproduces_sin(krisztin):
    dt = 1e-3
    x0 = sin_history(dt, krisztin.max_delay())
    traj = integrate(krisztin, x0, IntegratorConfig(dt=dt, t_end=10.0))
    err = np.max(np.abs(traj.forward[:, 0] - np.sin(traj.times)))
    assert err <= 1e-5


def test_direct_method_cross_validates(krisztin):
    dt = 2e-3
    x0 = sin_history(dt, krisztin.max_delay())
    cfg = IntegratorConfig(dt=dt, t_end=5.0)
    a = integrate(krisztin, x0, cfg)
    b = integrate_direct(krisztin, x0, cfg)
    assert np.max(np.abs(a.forward - b.forward)) <= 1e-5


def test_unstable_neutral_rejected():
    m = CompartmentModel(
        m=1, transports={}, pipes={},
        neutral=[DelayMeasure.atom(-1.0, 1.5)], beta=[1.0],
        sinks={0: Transport(family="linear", coef=1.0)})
    x0 = History.constant(np.array([1.0]), 0.1, 1.0)
    with pytest.raises(ValueError, match="unstable"):
        integrate(m, x0, IntegratorConfig(dt=0.1, t_end=1.0))


def test_unknown_scheme_rejected(krisztin):
    x0 = sin_history(0.1, krisztin.max_delay())
    with pytest.raises(ValueError, match="scheme"):
        integrate(krisztin, x0, IntegratorConfig(dt=0.1, t_end=1.0,
                                                 scheme="rk4"))


def test_driver_phase_offset_restart(linear3):
    """Integrating a section with the matching t0 reproduces the tail."""
    dt = 2e-3
    x0 = History.constant(np.ones(3), dt, linear3.max_delay())
    cfg = IntegratorConfig(dt=dt, t_end=8.0)
    full = integrate(linear3, x0, cfg)
    mid = integrate(linear3, full.section(4.0),
                    IntegratorConfig(dt=dt, t_end=4.0), t0=4.0)
    tail = full.forward[full._index(4.0):]
    assert np.max(np.abs(mid.forward - tail)) <= 1e-9


def test_stats_record_backend_and_picard(linear3):
    dt = 5e-3
    x0 = History.constant(np.ones(3), dt, linear3.max_delay())
    traj = integrate(linear3, x0, IntegratorConfig(dt=dt, t_end=1.0))
    assert traj.stats["backend"] in ("cython", "python")
    assert traj.stats["picard_max_iters"] >= 1
    assert traj.stats["picard_max_residual"] <= 1e-12


def test_horizon_truncation_guard():
    # infinite-tail measure truncated at the horizon must stay under tail_tol
    tr = Transport(family="linear", coef=0.1)
    pipe = DelayMeasure(atoms=[(-0.5, 0.9), (-50.0, 0.1)])
    m = CompartmentModel(m=1, transports={(0, 0): tr}, pipes={(0, 0): pipe},
                         neutral=[DelayMeasure.zero()], beta=[1.0])
    x0 = History.constant(np.array([1.0]), 0.01, 1.0)
    with pytest.raises(ValueError, match="tail tolerance"):
        integrate(m, x0, IntegratorConfig(dt=0.01, t_end=1.0, horizon=1.0))
    # explicit generous horizon works
    traj = integrate(m, x0, IntegratorConfig(dt=0.01, t_end=1.0,
                                             horizon=50.0))
    assert np.isfinite(traj.forward).all()


def test_mass_conservation_short_run(linear3):
    dt = 2e-3
    rng = np.random.default_rng(0)
    n = int(round(linear3.max_delay() / dt))
    s = np.linspace(-1, 0, n + 1)
    x0 = History(dt, 1.0 + 0.2 * np.column_stack(
        [np.sin(2 * np.pi * s + k) for k in range(3)]))
    traj = integrate(linear3, x0, IntegratorConfig(dt=dt, t_end=10.0))
    M0 = linear3.total_mass(0.0, traj.section(0.0))
    M1 = linear3.total_mass(10.0, traj.section(10.0))
    assert abs(M1 - M0) <= 1e-6 * (1 + abs(M0))
