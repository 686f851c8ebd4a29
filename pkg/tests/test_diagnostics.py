import json
import math

import numpy as np
import pytest

from conftest import immigration_model
from skinfer.builtins import load_builtin
from skinfer.diagnostics import (
    chain_summary,
    ess,
    integrated_autocorr_time,
    mess,
    probe_rho_l,
    probe_sigma2,
    recommend_N,
    sigma2_target,
    tune,
)
from skinfer.forward_sim import Dataset


def test_ess_iid(rng):
    assert abs(ess(rng.standard_normal(10_000)) / 10_000 - 1) < 0.1


def test_ess_ar1(rng):
    phi, n = 0.9, 100_000
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - phi ** 2)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    expected = n * (1 - phi) / (1 + phi)
    assert abs(ess(x) / expected - 1) < 0.15


def test_ess_duplicated_series_roughly_same(rng):
    x = rng.standard_normal(5000)
    assert abs(ess(np.repeat(x, 2)) / ess(x) - 1) < 0.15


def test_ess_constant_series_flagged():
    assert ess(np.ones(50), return_flag=True) == (0.0, True)


def test_ess_too_short():
    with pytest.raises(ValueError):
        ess([1.0, 2.0])


def test_iat_of_iid_near_one(rng):
    assert abs(integrated_autocorr_time(rng.standard_normal(20000)) - 1) < 0.1


def test_mess_is_column_minimum(rng):
    a = rng.standard_normal(4000)
    b = np.repeat(rng.standard_normal(1000), 4)
    chain = np.column_stack([a, b])
    assert mess(chain) == pytest.approx(min(ess(a), ess(b)))


def test_chain_summary_fields(rng):
    theta = rng.normal(size=(500, 2))
    s = chain_summary(theta, ["a", "b"], accepted=np.arange(500) % 2 == 0)
    assert s["acceptance_rate"] == 0.5
    assert set(s["parameters"]) == {"a", "b"}
    assert s["parameters"]["a"]["quantiles"]["0.5"] == pytest.approx(np.median(theta[:, 0]))
    json.dumps(s)


def test_sigma2_target_values():
    assert sigma2_target(0.0) == pytest.approx(2.16)
    assert sigma2_target(0.97) == pytest.approx(2.16 / (1 - 0.9409))
    assert sigma2_target(0.97) == pytest.approx(36.5, abs=0.1)
    assert sigma2_target(1.0) == math.inf


def test_recommend_N_examples():
    assert recommend_N({1: 5.0, 2: 2.1}, 0.0) == (2, True)
    assert recommend_N({1: 5.0, 2: 4.0}, 0.0) == (2, False)
    assert recommend_N({10: 30.0, 5: 50.0}, 0.97) == (10, True)
    with pytest.raises(ValueError):
        recommend_N({}, 0.5)


def _kalman_data():
    g = np.random.default_rng(3)
    x = 10 + np.cumsum(np.r_[0.0, 2.0 + math.sqrt(2.0) * g.standard_normal(9)])
    return Dataset(np.arange(1.0, 11.0), (x + g.standard_normal(10))[:, None])


def test_variance_roughly_halves_when_N_doubles():
    model, data = immigration_model(), _kalman_data()
    a = probe_sigma2(model, data, [2.0], 40, 2000, seed=1).value
    b = probe_sigma2(model, data, [2.0], 80, 2000, seed=2).value
    assert 0.4 <= b / a <= 0.6


def test_deterministic_likelihood_has_zero_variance():
    b = load_builtin("immigration-death")
    model = b.model.replace(m=1)
    res = probe_sigma2(model, b.data, b.true_c, 1, 30, seed=0)
    assert res.value == 0.0
    assert res.n_dead == 0


def test_probe_rho_zero_and_one():
    model, data = immigration_model(), _kalman_data()
    r0 = probe_rho_l(model, data, [2.0], 5, 0.0, 400, seed=3).value
    assert abs(r0) < 3 / math.sqrt(400)
    assert probe_rho_l(model, data, [2.0], 5, 1.0, 100, seed=3).value == 1.0


def test_probe_replicate_minimums():
    model, data = immigration_model(), _kalman_data()
    with pytest.raises(ValueError):
        probe_sigma2(model, data, [2.0], 5, 10)
    with pytest.raises(ValueError):
        probe_rho_l(model, data, [2.0], 5, 0.9, 50)


def test_probe_independent_of_thread_count(monkeypatch):
    import skinfer.diagnostics as diag
    model, data = immigration_model(), _kalman_data()
    monkeypatch.setattr(diag, "CHUNK_BYTES", 8 * 200)
    monkeypatch.setenv("SKM_THREADS", "1")
    a = probe_sigma2(model, data, [2.0], 5, 60, seed=5).estimates
    monkeypatch.setenv("SKM_THREADS", "4")
    b = probe_sigma2(model, data, [2.0], 5, 60, seed=5).estimates
    np.testing.assert_array_equal(a, b)


def test_probe_counts_deaths():
    from skinfer.model_core import InitialCondition
    model = immigration_model(sigma=0.0, initial=InitialCondition("known", x=(10.0,)), approximation="poisson-leap")
    data = Dataset([1.0, 2.0, 3.0], [[10.0], [12.0], [11.0]])
    res = probe_sigma2(model, data, [2.0], 3, 30, seed=0)
    assert res.death_rate == 1.0
    assert math.isnan(res.value)


def test_tune_report():
    model, data = immigration_model(), _kalman_data()
    rep = tune(model, data, [2.0], [2, 10, 5], 0.99, 100, seed=0)
    assert rep.N_grid == [2, 5, 10]
    assert rep.recommended_N in rep.N_grid
    assert rep.target == pytest.approx(sigma2_target(min(rep.rho_l)))
    parsed = json.loads(rep.to_json())
    assert parsed["recommended_N"] == rep.recommended_N
    assert "recommended N" in rep.table()
