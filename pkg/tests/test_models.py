import numpy as np
import pytest

from conftest import load_preset, load_preset_config
from nfdelab.histories import History
from nfdelab.measures import DelayMeasure
from nfdelab.models import CompartmentModel, Driver, Transport, _scan_max


def two_loop(**kw):
    """Minimal closed loop: 0 -> 1 -> 0 with unit-lag pipes."""
    tr = Transport(family="linear", coef=0.2)
    defaults = dict(
        m=2,
        transports={(1, 0): tr, (0, 1): tr},
        pipes={(1, 0): DelayMeasure.atom(-1.0), (0, 1): DelayMeasure.atom(-1.0)},
        neutral=[DelayMeasure.zero(), DelayMeasure.zero()],
        beta=[1.0, 1.0])
    defaults.update(kw)
    return CompartmentModel(**defaults)


def test_transport_slope_bounds():
    tr = Transport(family="linear", coef=0.5, amp=0.2, offset=1.0)
    assert tr.l_plus == pytest.approx(0.6)
    assert tr.l_minus == pytest.approx(0.4)
    sat = Transport(family="saturating_arctan", coef=0.5)
    assert sat.l_plus == pytest.approx(0.5)
    assert sat.l_minus == 0.0
    with pytest.raises(ValueError):
        Transport(family="linear", coef=1.0, amp=1.5, offset=1.0)
    with pytest.raises(ValueError):
        Transport(family="nope", coef=1.0)


def test_transport_phi_increasing_through_zero():
    for fam in ("linear", "saturating_arctan", "logistic_slope"):
        tr = Transport(family=fam, coef=0.7)
        assert tr.phi(0.0) == pytest.approx(0.0, abs=1e-12)
        v = np.linspace(-3, 3, 41)
        assert np.all(np.diff(tr.phi(v)) > 0)


def test_driver_period_and_recurrence():
    d = Driver(freqs=(0.1,), theta0=(0.0,))
    assert d.period == pytest.approx(10.0)
    assert d.recurrence_distance(10.0) == pytest.approx(0.0, abs=1e-12)
    assert d.recurrence_distance(5.0) == pytest.approx(0.5)
    quasi = Driver(freqs=(0.1, 0.1 / np.sqrt(2)), theta0=(0.0, 0.0))
    assert quasi.period is None
    assert Driver().period == 0.0


def test_pipe_mass_must_be_one():
    with pytest.raises(ValueError):
        two_loop(pipes={(1, 0): DelayMeasure.atom(-1.0, 0.5),
                        (0, 1): DelayMeasure.atom(-1.0)})


def test_keys_must_match():
    tr = Transport(family="linear", coef=0.2)
    with pytest.raises(ValueError):
        two_loop(transports={(1, 0): tr})


def test_l_plus_out():
    m = two_loop()
    assert m.l_plus_out(0) == pytest.approx(0.2)
    assert m.l_plus_out(1) == pytest.approx(0.2)


def test_eval_F_on_constants_balances():
    # constant history, symmetric linear loop: inflow equals outflow
    m = two_loop()
    x = History.constant(np.array([3.0, 3.0]), 0.1, 1.0)
    assert np.allclose(m.eval_F(0.0, x), 0.0, atol=1e-12)


def test_eval_F_signs():
    m = two_loop()
    x = History.constant(np.array([1.0, 0.0]), 0.1, 1.0)
    f = m.eval_F(0.0, x)
    assert f[0] == pytest.approx(-0.2)  # outflow from 0
    assert f[1] == pytest.approx(0.2)   # arrives at 1 after the lag


def test_total_mass_constant_history():
    # M of a constant c: compartment content + material in transit
    m = two_loop()
    c = 2.0
    x = History.constant(np.array([c, c]), 0.01, 1.0)
    # each pipe holds flux * lag = 0.2*c*1.0 in transit
    assert m.total_mass(0.0, x) == pytest.approx(2 * c + 2 * 0.2 * c, rel=1e-6)


def test_total_mass_refuses_sinks():
    m = two_loop(sinks={0: Transport(family="linear", coef=0.1)})
    assert not m.closed
    with pytest.raises(ValueError):
        m.total_mass(0.0, History.constant(np.ones(2), 0.1, 1.0))


def test_scan_max_quadratic():
    beta, best = _scan_max(lambda b: -(b - 2.0) ** 2 + 5.0, 1e-3, 1e3)
    assert beta == pytest.approx(2.0, rel=1e-6)
    assert best == pytest.approx(5.0, abs=1e-10)


def test_check_H_worked_example_sat():
    # nu = 0.5 delta_{-1}: max_beta beta(1 - 0.5 e^beta) ~ 0.1022 > 0.05
    tr = Transport(family="linear", coef=0.05)
    m = CompartmentModel(
        m=1, transports={(0, 0): tr}, pipes={(0, 0): DelayMeasure.atom(-3.0)},
        neutral=[DelayMeasure.atom(-1.0, 0.5)], beta=[1.0])
    rep = m.check_H()
    assert rep.sat
    comp = rep.components[0]
    assert comp["phi_at_witness"] == pytest.approx(0.10219, abs=1e-4)
    assert comp["witness_beta"] == pytest.approx(0.3748, abs=1e-3)


def test_check_H_worked_example_unsat():
    # same nu with L+ = 0.2 > max phi: no witness exists
    tr = Transport(family="linear", coef=0.2)
    m = CompartmentModel(
        m=1, transports={(0, 0): tr}, pipes={(0, 0): DelayMeasure.atom(-3.0)},
        neutral=[DelayMeasure.atom(-1.0, 0.5)], beta=[1.0])
    rep = m.check_H()
    assert not rep.sat


def test_check_H_no_neutral_always_sat():
    m = two_loop()
    m.family = "infinite"
    rep = m.check_H()
    assert rep.sat
    assert all(c["sat"] for c in rep.components)


def test_check_G_krisztin_unsat(krisztin):
    rep = krisztin.certify()
    assert rep.family == "finite"
    assert not rep.sat
    comp = rep.components[0]
    # G5.1 max ~ 0.20208 (at beta ~ 0.618) < L+ = 1; the G5.2 branch is
    # unavailable because alpha < rho
    assert comp["best_value"] == pytest.approx(0.20208, abs=1e-4)
    assert "G5.2_precondition" in comp


def test_check_G_neutral_ring_sat(neutral_ring):
    rep = neutral_ring.certify()
    assert rep.sat
    for comp in rep.components:
        assert comp["branch"] == "G5.1"
        assert comp["margin"] > 0.05


def test_check_H_linear3_sat(linear3):
    rep = linear3.certify()
    assert rep.sat
    assert rep.checks["H4"]["ok"]
    for comp in rep.components:
        assert comp["sat_at_config_beta"]  # beta = 2 is itself a witness


def test_check_H_canary_unsat(canary):
    rep = canary.certify()
    assert not rep.sat


def test_f4_sampling_passes_on_certified(linear3):
    rep = linear3.check_F4_F6(samples=200, seed=0)
    assert rep.passed
    assert rep.worst_margin >= -1e-9


def test_f4_sampling_fails_on_canary(canary):
    rep = canary.check_F4_F6(samples=1000, seed=0)
    assert not rep.passed
    assert rep.worst_margin < -0.5
    assert rep.witness is not None
    assert rep.witness["direction"] == "structured"


def test_config_roundtrip_and_hash(linear3):
    cfg = linear3.to_config()
    back = CompartmentModel.from_config(cfg)
    assert back.config_hash() == linear3.config_hash()
    assert back.m == linear3.m
    assert back.gamma_sum == pytest.approx(linear3.gamma_sum)


def test_config_requires_schema():
    cfg = load_preset_config("linear3")
    cfg.pop("schema")
    with pytest.raises(ValueError, match="schema"):
        CompartmentModel.from_config(cfg)


def test_mass_of_constant_scales_linearly(linear3):
    m1 = linear3.mass_of_constant(1.0)
    m2 = linear3.mass_of_constant(2.0)
    assert m2 == pytest.approx(2 * m1, rel=1e-9)
