import numpy as np
import pytest

from nfdelab.histories import History
from nfdelab.measures import DelayMeasure
from nfdelab.neutral import NeutralOperator


def _history(step, n, dim, fn):
    s = -step * np.arange(n, -1, -1)
    return History(step, np.column_stack([fn(s)] * dim))


def test_zero_operator_is_identity():
    D = NeutralOperator.zero(2)
    x = _history(0.1, 10, 2, np.sin)
    assert np.allclose(D.apply(x), x.samples[-1])
    assert np.allclose(D.apply_hat(x).samples, x.samples)


def test_single_atom_apply():
    # D x = x(0) - c x(-tau) on a linear ramp
    c, tau = 0.4, 0.5
    D = NeutralOperator.diagonal([DelayMeasure.atom(-tau, c)])
    x = _history(0.1, 20, 1, lambda s: s)
    assert D.apply(x)[0] == pytest.approx(0.0 - c * (-tau))


def test_gamma_row_sums():
    entries = [[DelayMeasure.atom(-1.0, 0.3), DelayMeasure.atom(-2.0, 0.4)],
               [DelayMeasure.zero(), DelayMeasure.atom(-1.0, 0.2)]]
    D = NeutralOperator(entries)
    assert D.gamma == pytest.approx(0.7)
    rep = D.check_stability()
    assert rep.stable and rep.positive


def test_invert_hat_roundtrip():
    c, tau = 0.5, 0.3
    D = NeutralOperator.diagonal([DelayMeasure.atom(-tau, c)])
    x = _history(0.05, 40, 1, lambda s: np.cos(3 * s))
    h = D.apply_hat(x)
    back = D.invert_hat(h, tol=1e-13)
    assert np.max(np.abs(back.samples - x.samples)) <= 1e-12 / (1 - c)


def test_invert_hat_geometric_iterations():
    gamma = 0.5
    D = NeutralOperator.diagonal([DelayMeasure.atom(-0.4, gamma)])
    h = _history(0.05, 40, 1, lambda s: 1.0 + 0.1 * s)
    tol = 1e-12
    x, info = D.invert_hat(h, tol=tol, return_info=True)
    # contraction gives |update_k| <= gamma^k * |update_0|
    bound = np.log(tol / max(info["residuals"][0], tol)) / np.log(gamma) + 2
    assert info["iterations"] <= bound
    # residuals decay monotonically up to rounding
    r = info["residuals"]
    assert all(r[k + 1] <= gamma * r[k] + 1e-15 for k in range(len(r) - 2))


def test_invert_hat_positivity():
    # positive nu, h >= 0 -> inverse is nonnegative
    rng = np.random.default_rng(7)
    for _ in range(20):
        gamma = rng.uniform(0.1, 0.9)
        D = NeutralOperator.diagonal(
            [DelayMeasure.atom(-rng.uniform(0.2, 2.0), gamma)])
        h = _history(0.05, 40, 1,
                     lambda s: rng.uniform(0.0, 1.0) * (1 + np.sin(s)) ** 2)
        x = D.invert_hat(h, tol=1e-13)
        assert np.min(x.samples) >= -1e-12


def test_invert_hat_rejects_expansion():
    D = NeutralOperator.diagonal([DelayMeasure.atom(-1.0, 1.2)])
    h = _history(0.1, 10, 1, lambda s: np.ones_like(s))
    with pytest.raises(ValueError):
        D.invert_hat(h)


def test_commutes_with_diagonal():
    D = NeutralOperator.diagonal([DelayMeasure.atom(-1.0, 0.3),
                                  DelayMeasure.atom(-0.5, 0.2)])
    assert D.commutes_with(np.diag([-1.0, -2.0]))
    assert D.commutes_with(-3.0 * np.eye(2))
    # different diagonal measures do not commute with a mixing matrix
    assert not D.commutes_with(np.array([[-1.0, 0.5], [0.5, -1.0]]))
