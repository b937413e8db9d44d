import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfdelab.measures import DelayMeasure


def test_zero_measure():
    mu = DelayMeasure.zero()
    assert mu.is_zero
    assert mu.total_mass() == 0.0
    assert mu.total_variation() == 0.0
    assert mu.support_horizon() == 0.0
    assert mu.integrate(lambda s: 1.0) == 0.0


def test_atom_basics():
    mu = DelayMeasure.atom(-1.5, 0.25)
    assert mu.total_mass() == 0.25
    assert mu.support_horizon() == 1.5
    assert mu.integrate(lambda s: s) == pytest.approx(-1.5 * 0.25)
    assert mu.exp_integral(1.0) == pytest.approx(0.25 * np.exp(1.5))


def test_atoms_merge_and_sort():
    mu = DelayMeasure(atoms=[(-1.0, 0.5), (-2.0, 0.25), (-1.0, 0.5)])
    assert list(mu.atom_locs) == [-1.0, -2.0]
    assert list(mu.atom_weights) == [1.0, 0.25]


def test_atom_at_zero_rejected():
    with pytest.raises(ValueError):
        DelayMeasure(atoms=[(0.0, 0.5)])
    # explicitly allowed when requested
    mu = DelayMeasure(atoms=[(0.0, 0.5)], allow_atom_at_zero=True)
    assert mu.total_mass() == 0.5


def test_positive_location_rejected():
    with pytest.raises(ValueError):
        DelayMeasure.atom(0.5, 1.0)


def test_uniform_density_mass_and_quadrature():
    mu = DelayMeasure.uniform_density(-1.5, -0.5, 1.0, n_cells=16)
    assert mu.total_mass() == pytest.approx(1.0)
    assert mu.support_horizon() == pytest.approx(1.5)
    # int s dmu over uniform [-1.5, -0.5] = -1.0 (midpoint rule is exact
    # for linear integrands)
    assert mu.integrate(lambda s: s) == pytest.approx(-1.0)
    assert mu.first_moment() == pytest.approx(1.0)


def test_uniform_density_exp_integral_converges():
    exact = (np.exp(1.5) - np.exp(0.5))  # int_{-1.5}^{-0.5} e^{-s} ds
    err = []
    for n in (8, 16, 32):
        mu = DelayMeasure.uniform_density(-1.5, -0.5, 1.0, n_cells=n)
        err.append(abs(mu.exp_integral(1.0) - exact))
    assert err[0] / err[1] == pytest.approx(4.0, rel=0.1)
    assert err[1] / err[2] == pytest.approx(4.0, rel=0.1)


def test_tail_mass():
    mu = DelayMeasure(atoms=[(-0.5, 0.2), (-3.0, 0.1)],
                      density_step=0.25, density_cells=[0.1] * 8)
    assert mu.tail_mass(0.0) == pytest.approx(mu.total_variation())
    assert mu.tail_mass(2.5) == pytest.approx(0.1)
    assert mu.tail_mass(1.0) == pytest.approx(0.1 + 4 * 0.1)


def test_mixed_eval_points():
    mu = DelayMeasure(atoms=[(-1.0, 0.5)], density_step=0.5,
                      density_cells=[0.25, 0.25])
    locs, weights = mu.eval_points()
    assert locs.shape == weights.shape == (3,)
    assert -1.0 in locs
    assert set(np.round(locs, 6)) == {-1.0, -0.25, -0.75}


def test_signed_measure_tv_vs_mass():
    mu = DelayMeasure(atoms=[(-1.0, 0.5), (-2.0, -0.25)])
    assert mu.total_mass() == pytest.approx(0.25)
    assert mu.total_variation() == pytest.approx(0.75)
    assert not mu.is_positive()


def test_config_roundtrip():
    mu = DelayMeasure(atoms=[(-1.0, 0.5), (-2.5, 0.125)],
                      density_step=0.25, density_cells=[0.0, 0.1, 0.2])
    back = DelayMeasure.from_config(mu.to_config())
    assert np.array_equal(back.atom_locs, mu.atom_locs)
    assert np.array_equal(back.atom_weights, mu.atom_weights)
    assert back.density_step == mu.density_step
    assert np.array_equal(back.density_cells, mu.density_cells)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(
    st.floats(min_value=-10.0, max_value=-0.01),
    st.floats(min_value=-5.0, max_value=5.0)), min_size=0, max_size=6))
def test_tv_dominates_mass(atoms):
    mu = DelayMeasure(atoms=atoms)
    assert mu.total_variation() >= abs(mu.total_mass()) - 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(
    st.floats(min_value=-10.0, max_value=-0.01),
    st.floats(min_value=0.0, max_value=5.0)), min_size=1, max_size=6),
    st.floats(min_value=0.0, max_value=12.0))
def test_tail_mass_monotone(atoms, T):
    mu = DelayMeasure(atoms=atoms)
    assert mu.tail_mass(T) <= mu.tail_mass(T / 2.0) + 1e-12
    assert mu.tail_mass(mu.support_horizon() + 1e-9) == 0.0
