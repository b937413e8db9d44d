import json

import numpy as np
import pytest

from conftest import sin_history
from nfdelab.cones import ConeParams, cone_infimum
from nfdelab.experiments import ExperimentSpec, build_super_equilibrium, \
    run_converge, run_cover, run_experiment, run_mass, run_monotone, \
    run_superq
from nfdelab.histories import History
from nfdelab.integrate import IntegratorConfig, integrate


def test_spec_validates_kind():
    with pytest.raises(ValueError):
        ExperimentSpec("frobnicate")


def test_monotone_equal_pair_is_trivial(linear3):
    # x = y stays ordered with zero margin at every node
    dt = 5e-3
    x0 = History.constant(np.ones(3), dt, linear3.max_delay())
    cfg = IntegratorConfig(dt=dt, t_end=5.0)
    tx = integrate(linear3, x0, cfg)
    cone = linear3.cone()
    from nfdelab.cones import cone_margin
    for t in (1.0, 3.0, 5.0):
        d = tx.section(t) - tx.section(t)
        assert cone_margin(d, cone) == 0.0


def test_monotone_passes_on_linear3(linear3):
    spec = ExperimentSpec("monotone", dt=2e-3, t_end=20.0, seed=0, n_pairs=4)
    rep = run_monotone(linear3, spec, "linear3")
    assert rep.passed
    names = [a["name"] for a in rep.assertions]
    assert names == ["quasimonotone_sampled", "order_preserved",
                     "stability_bound"]


def test_monotone_krisztin_constant_shift(krisztin):
    # sin vs sin + 0.1: ordered for all checked times (scalar A = -beta)
    dt = 1e-3
    x0 = sin_history(dt, krisztin.max_delay())
    y0 = sin_history(dt, krisztin.max_delay(), shift=0.1)
    cone = krisztin.cone()
    cfg = IntegratorConfig(dt=dt, t_end=20.0)
    tx = integrate(krisztin, x0, cfg)
    ty = integrate(krisztin, y0, cfg)
    from nfdelab.cones import order_leq
    for t in range(1, 21):
        assert order_leq(tx.section(float(t)), ty.section(float(t)), cone)


def test_monotone_fails_on_canary(canary):
    spec = ExperimentSpec("monotone", dt=2e-3, t_end=5.0, seed=0, n_pairs=1)
    rep = run_monotone(canary, spec, "canary")
    assert not rep.passed
    first = rep.assertions[0]
    assert first["name"] == "quasimonotone_sampled"
    assert first["witness"] is not None
    assert first["witness"]["margin"] < -0.5


def test_mass_zero_data_trivial(linear3):
    dt = 2e-3
    x0 = History.constant(np.zeros(3), dt, linear3.max_delay())
    spec = ExperimentSpec("mass", dt=dt, t_end=5.0, seed=0,
                          options={"x0": x0})
    rep = run_mass(linear3, spec, "linear3")
    a = {x["name"]: x for x in rep.assertions}
    assert rep.diagnostics["M0"] == pytest.approx(0.0, abs=1e-14)
    assert a["mass_conserved"]["drift"] <= 1e-13


def test_mass_experiment_passes(linear3):
    spec = ExperimentSpec("mass", dt=2e-3, t_end=20.0, seed=3)
    rep = run_mass(linear3, spec, "linear3")
    assert rep.passed
    a = {x["name"]: x for x in rep.assertions}
    assert 2.5 <= a["drift_second_order"]["ratio"] <= 6.0


def test_mass_rejects_open_models():
    from conftest import load_preset
    decay = load_preset("decay")
    with pytest.raises(ValueError, match="closed"):
        run_mass(decay, ExperimentSpec("mass", dt=1e-2, t_end=1.0), "decay")


def test_converge_periodic(linear3):
    spec = ExperimentSpec("converge", dt=2e-3, t_end=60.0, seed=1)
    rep = run_converge(linear3, spec, "linear3")
    assert rep.passed
    res = rep.diagnostics["residuals"]
    # transient decays: the last residual is far below the first
    for series in res:
        assert series[-1] < series[0]


def test_converge_autonomous_to_constant(canary_free_model):
    spec = ExperimentSpec("converge", dt=5e-3, t_end=40.0, seed=1,
                          tolerances={"residual": 1e-6})
    rep = run_converge(canary_free_model, spec, "<config>")
    assert rep.passed


@pytest.fixture(scope="session")
def canary_free_model():
    """Small certified autonomous model: converges to an equilibrium."""
    from nfdelab.measures import DelayMeasure
    from nfdelab.models import CompartmentModel, Transport
    tr = Transport(family="linear", coef=0.2)
    return CompartmentModel(
        m=2,
        transports={(1, 0): tr, (0, 1): tr},
        pipes={(1, 0): DelayMeasure.atom(-0.5),
               (0, 1): DelayMeasure.atom(-0.5)},
        neutral=[DelayMeasure.atom(-0.4, 0.1), DelayMeasure.atom(-0.4, 0.1)],
        beta=[1.0, 1.0])


def test_converge_quasiperiodic_trend(neutral_ring):
    spec = ExperimentSpec("converge", dt=5e-3, t_end=400.0, seed=1)
    rep = run_converge(neutral_ring, spec, "neutral-ring")
    assert rep.passed
    a = rep.assertions[0]
    assert a["name"] == "almost_period_residual_trend"
    assert a["phase_distance"] < 0.035


def test_converge_krisztin_oscillates(krisztin):
    dt = 1e-3
    d1 = sin_history(dt, krisztin.max_delay(), amp=2.0, shift=0.5)
    d2 = sin_history(dt, krisztin.max_delay(), amp=0.7, shift=1.0)
    spec = ExperimentSpec("converge", dt=dt, t_end=60.0, seed=1,
                          options={"expect": "oscillation",
                                   "pseudo_period": 2 * np.pi,
                                   "initial_data": [d1, d2]})
    rep = run_converge(krisztin, spec, "krisztin")
    assert rep.passed
    assert all(a >= 0.1 for a in rep.diagnostics["amplitudes"])


def test_cover_passes_and_separates(linear3):
    spec = ExperimentSpec("cover", dt=2e-3, t_end=100.0, seed=4)
    rep = run_cover(linear3, spec, "linear3")
    assert rep.passed
    a = {x["name"]: x for x in rep.assertions}
    assert a["cluster_dispersion"]["dispersion"] <= 1e-6
    assert a["fresh_datum_in_cluster"]["passed"]
    assert a["distinct_mass_separated"]["gap"] >= 1e-5
    # equal-mass coincidence is reported as data, not asserted
    assert "equal_mass_coincidence_distance" in rep.diagnostics


def test_superq_single_constant_section(canary_free_model):
    # section set = one constant equilibrium e -> a_hat = e exactly
    m = canary_free_model
    e = History.constant(np.array([2.0, 2.0]), 0.01, 2.0)
    a_hat = build_super_equilibrium(m, [e])
    assert np.max(np.abs(a_hat.samples - e.samples)) <= 1e-10


def test_superq_two_sections_match_cone_infimum(canary_free_model):
    m = canary_free_model
    s = -0.01 * np.arange(200, -1, -1)
    x = History(0.01, 1.0 + 0.2 * np.column_stack([np.sin(s), np.cos(s)]))
    y = History(0.01, 1.0 + 0.2 * np.column_stack([np.cos(2 * s),
                                                   np.sin(2 * s)]))
    cone = ConeParams(A=m.A, window=None)
    a_env = build_super_equilibrium(m, [x, y])
    a_inf = cone_infimum(x, y, cone)
    assert np.max(np.abs(a_env.samples - a_inf.samples)) <= 1e-10


def test_superq_experiment_passes(linear3):
    spec = ExperimentSpec("superq", dt=2e-3, t_end=80.0, seed=5)
    rep = run_superq(linear3, spec, "linear3")
    assert rep.passed
    a = {x["name"]: x for x in rep.assertions}
    assert a["lower_bound_for_samples"]["margin"] >= -1e-6
    assert a["one_step_super_equilibrium"]["margin"] >= -1e-6


def test_reports_are_deterministic(linear3, tmp_path):
    spec = ExperimentSpec("mass", dt=5e-3, t_end=5.0, seed=11)
    r1 = run_experiment(linear3, spec, "linear3")
    spec2 = ExperimentSpec("mass", dt=5e-3, t_end=5.0, seed=11)
    r2 = run_experiment(linear3, spec2, "linear3")
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    r1.to_json(p1)
    r2.to_json(p2)
    assert p1.read_bytes() == p2.read_bytes()  # bit-identical


def test_report_carries_replay_command(linear3):
    spec = ExperimentSpec("mass", dt=5e-3, t_end=5.0, seed=11)
    rep = run_experiment(linear3, spec, "linear3")
    replay = rep.provenance["replay"]
    assert replay.startswith("nfdelab experiment mass --preset linear3")
    assert "--seed 11" in replay
    assert rep.provenance["model_hash"] == linear3.config_hash()


def test_report_serializes_to_json(linear3, tmp_path):
    spec = ExperimentSpec("monotone", dt=5e-3, t_end=3.0, seed=0, n_pairs=1)
    rep = run_monotone(linear3, spec, "linear3")
    path = tmp_path / "r.json"
    rep.to_json(path)
    loaded = json.loads(path.read_text())
    assert loaded["kind"] == "monotone"
    assert isinstance(loaded["passed"], bool)
