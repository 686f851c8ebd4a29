import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import conditioned_hazard_symbolic
from skinfer.bridges import (
    bridge_moments,
    conditioned_hazard,
    conditioned_hazard_step,
    errorfree_terminal_step,
    mdb_step,
)
from skinfer.model_core import ObservationModel


def scalar_obs(var):
    return ObservationModel([[1.0]], var)


def test_mdb_scalar_moments(id_net):
    # x=5, c=(4,0.8): alpha=0, beta=8; y=9, Delta=1, Sigma=2 -> A=10
    x = np.array([5.0])
    alpha, beta = id_net.moments(x, np.array([4.0, 0.8]))
    mu, Psi, ok = bridge_moments(x, [9.0], 1.0, 0.5, alpha, beta, scalar_obs(2.0))
    assert ok
    assert mu[0] == pytest.approx(8 * 4 / 10)
    assert Psi[0, 0] == pytest.approx(8 - 64 / 10 * 0.5)


def test_mdb_mean_and_variance_of_draw(id_net):
    # Delta=dtau=... picks the draw mean x + mu dtau = 5 + 3.2*... -> checked numerically
    x = np.full((40000, 1), 10.0)
    c = np.array([4.0, 0.4])
    z = np.random.default_rng(0).standard_normal((40000, 1))
    res = mdb_step(x, [14.0], 1.0, 0.5, id_net, scalar_obs(4.0), c, z)
    alpha, beta = 0.0, 8.0
    mu = alpha + beta * (14 - 10) / (beta + 4)
    var = (beta - beta ** 2 / (beta + 4) * 0.5) * 0.5
    assert abs(res.x.mean() - (10 + mu * 0.5)) < 4 * math.sqrt(var / 40000)
    assert abs(res.x.var() / var - 1) < 0.03


def test_mdb_no_information_is_euler(id_net, rng):
    x = rng.uniform(1, 50, size=(7, 1))
    z = rng.standard_normal((7, 1))
    c = np.array([4.0, 0.8])
    res = mdb_step(x, [9.0], 1.0, 0.25, id_net, scalar_obs(1.0), c, z, bootstrap=True)
    alpha, beta = id_net.moments(x, c)
    np.testing.assert_allclose(res.x, x + alpha * 0.25 + np.sqrt(beta[..., 0] * 0.25) * z)
    np.testing.assert_array_equal(res.log_g, res.log_p)


def test_mdb_on_track_mean_is_drift(lv_net):
    x = np.array([100.0, 100.0])
    c = np.array([0.5, 0.0025, 0.3])
    alpha, beta = lv_net.moments(x, c)
    y = x + alpha * 0.6
    mu, _, _ = bridge_moments(x, y, 0.6, 0.2, alpha, beta, ObservationModel(np.eye(2), np.eye(2)))
    np.testing.assert_allclose(mu, alpha, atol=1e-12)


def test_mdb_large_sigma_limit(lv_net):
    x = np.array([80.0, 120.0])
    c = np.array([0.5, 0.0025, 0.3])
    alpha, beta = lv_net.moments(x, c)
    mu, Psi, _ = bridge_moments(x, [10.0, 300.0], 1.0, 0.2, alpha, beta, ObservationModel(np.eye(2), 1e14 * np.eye(2)))
    np.testing.assert_allclose(mu, alpha, atol=1e-6)
    np.testing.assert_allclose(Psi, beta, atol=1e-6)


@given(st.floats(1.0, 300.0), st.floats(1.0, 300.0), st.floats(0.01, 50.0), st.floats(0.1, 1.0))
def test_psi_symmetric_psd(x1, x2, var, Delta):
    from skinfer.builtins import lotka_volterra_network
    net = lotka_volterra_network()
    x = np.array([x1, x2])
    alpha, beta = net.moments(x, np.array([0.5, 0.0025, 0.3]))
    dtau = Delta / 2
    _, Psi, ok = bridge_moments(x, [x1, x2], Delta, dtau, alpha, beta, ObservationModel(np.eye(2), var))
    assert ok
    np.testing.assert_allclose(Psi, Psi.T, atol=1e-12)
    assert np.linalg.eigvalsh(Psi).min() > -1e-9 * np.abs(beta).max()


def test_mdb_singular_guidance_marks_dead():
    from skinfer.model_core import build_network
    net = build_network(["X"], [({"X": 1}, {})])
    res = mdb_step(np.array([[0.0]]), [3.0], 1.0, 0.5, net, ObservationModel([[1.0]], 0.0), np.array([1.0]),
                   np.zeros((1, 1)))
    assert not res.alive[0]
    assert res.log_p[0] == -math.inf


def test_terminal_step_pins_observation(id_net, rng):
    x = rng.uniform(400, 600, size=(5, 1))
    res = errorfree_terminal_step(x, [503.0], 0.2, id_net, scalar_obs(0.0), np.array([4.0, 0.8]),
                                  rng.standard_normal((5, 1)))
    np.testing.assert_array_equal(res.x, 503.0)
    np.testing.assert_array_equal(res.log_g, 0.0)
    a = x[:, 0] + (4 - 0.8 * x[:, 0]) * 0.2
    v = (4 + 0.8 * x[:, 0]) * 0.2
    np.testing.assert_allclose(res.log_p, -0.5 * (np.log(2 * np.pi * v) + (503 - a) ** 2 / v))


def test_terminal_step_partial_observation(lv_net, rng):
    obs = ObservationModel(np.array([[0.0], [1.0]]), 0.0)
    x = np.array([[100.0, 100.0]])
    res = errorfree_terminal_step(x, [97.0], 0.2, lv_net, obs, np.array([0.5, 0.0025, 0.3]),
                                  rng.standard_normal((1, 2)))
    assert res.x[0, 1] == 97.0
    assert res.x[0, 0] != 100.0


def test_conditioned_hazard_worked_example(id_net):
    h_star, h, ok = conditioned_hazard(np.array([5.0]), [9.0], 1.0, id_net, scalar_obs(0.0), [4.0, 0.8])
    np.testing.assert_allclose(h_star, [6.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(h_star, conditioned_hazard_symbolic(5, (4, 0.8), 9, 1, [[1, -1]], [[1]], [[0]]), atol=1e-12)


@given(st.integers(1, 60), st.integers(0, 80), st.floats(0.1, 1.0), st.floats(0.0, 5.0))
def test_conditioned_hazard_against_symbolic(x, y, Delta, var):
    from skinfer.builtins import immigration_death_network
    net = immigration_death_network()
    h_star, _, _ = conditioned_hazard(np.array([float(x)]), [float(y)], Delta, net, scalar_obs(var), [4.0, 0.8])
    np.testing.assert_allclose(h_star, np.maximum(conditioned_hazard_symbolic(x, (4, 0.8), y, Delta, [[1, -1]], [[1]], [[var]]), 0.0), rtol=1e-10,
                               atol=1e-10)


def test_conditioned_hazard_no_information(id_net):
    h_star, h, _ = conditioned_hazard(np.array([5.0]), [9.0], 1.0, id_net, scalar_obs(0.0), [4.0, 0.8],
                                      no_information=True)
    np.testing.assert_array_equal(h_star, h)


def test_conditioned_step_on_track_unit_weight(id_net):
    # x=5 with c=(4,0.8) is at equilibrium, so y=5 leaves the hazard unchanged
    res = conditioned_hazard_step(np.array([5.0]), [5.0], 1.0, 0.2, id_net, scalar_obs(1.0), [4.0, 0.8],
                                  np.array([0.3, 0.6]))
    assert res.log_g == pytest.approx(res.log_p, abs=1e-14)


def test_conditioned_step_clamped_component(id_net):
    # strong pull upward drives the death hazard negative
    res = conditioned_hazard_step(np.array([5.0]), [60.0], 1.0, 0.2, id_net, scalar_obs(0.0), [4.0, 0.8],
                                  np.array([0.5, 0.9]))
    h_star, h, _ = conditioned_hazard(np.array([5.0]), [60.0], 1.0, id_net, scalar_obs(0.0), [4.0, 0.8])
    assert h_star[1] == 0.0
    assert res.counts[1] == 0
    from scipy import stats
    lp = stats.poisson(h[0] * 0.2).logpmf(res.counts[0]) - h[1] * 0.2
    assert res.log_p == pytest.approx(lp, abs=1e-12)
    assert res.log_g == pytest.approx(stats.poisson(h_star[0] * 0.2).logpmf(res.counts[0]), abs=1e-12)


def test_conditioned_step_bootstrap_equal_densities(lv_net, rng):
    x = rng.integers(20, 200, size=(6, 2)).astype(float)
    res = conditioned_hazard_step(x, [50.0, 50.0], 1.0, 0.2, lv_net, ObservationModel(np.eye(2), 1.0),
                                  [0.5, 0.0025, 0.3], rng.random((6, 3)), bootstrap=True)
    np.testing.assert_array_equal(res.log_g, res.log_p)
