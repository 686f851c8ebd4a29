import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from oracles import poisson_cdf_naive, poisson_quantile_naive
from skinfer.auxvar import (
    AuxiliaryBlock,
    crank_nicolson_step,
    gauss_to_uniform,
    layout,
    poisson_quantile,
)


def test_layout_dimensions():
    assert layout(2, 1, 1, 1, 0).d == 2
    assert layout(51, 5, 3, 3, 0).d == 2300


def test_layout_dimension_by_enumeration():
    lay = layout(51, 5, 3, 3, 0)
    seen = {lay.resample_offset(t) for t in range(2, 52)}
    seen |= {lay.propagation_offset(t, i, k, j)
             for t in range(2, 52) for i in range(3) for k in range(5) for j in range(3)}
    assert seen == set(range(2300))


@given(st.integers(2, 6), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 3))
def test_offset_coords_bijection(n, m, N, q, init_dim):
    lay = layout(n, m, N, q, init_dim)
    for off in range(lay.d):
        assert lay.offset(lay.coords(off)) == off


def test_layout_rejects_zero_sizes():
    with pytest.raises(ValueError):
        layout(0, 1, 1, 1)


def test_block_views_follow_layout(rng):
    lay = layout(4, 2, 3, 2, 1)
    blk = AuxiliaryBlock.draw(lay, rng)
    assert blk.init_block().shape == (3, 1)
    assert blk.propagation().shape == (3, 3, 2, 2)
    assert blk.resample_scalars()[1] == blk.u[lay.resample_offset(3)]
    assert blk.propagation()[2, 1, 0, 1] == blk.u[lay.propagation_offset(4, 1, 0, 1)]
    with pytest.raises(ValueError):
        blk.u[0] = 1.0


def test_block_shape_checked():
    with pytest.raises(ValueError):
        AuxiliaryBlock(np.zeros(3), layout(2, 1, 1, 1))


def test_cn_special_cases(rng):
    u, w = rng.standard_normal(50), rng.standard_normal(50)
    np.testing.assert_array_equal(crank_nicolson_step(u, 0.0, w), w)
    np.testing.assert_array_equal(crank_nicolson_step(u, 1.0, w), u)


def test_cn_worked_example():
    np.testing.assert_allclose(crank_nicolson_step(np.array([1.0, -1.0]), 0.6, np.array([0.5, 0.5])), [1.0, -0.2],
                               atol=1e-15)


def test_cn_on_block_keeps_type(rng):
    lay = layout(3, 1, 2, 1)
    blk = AuxiliaryBlock.draw(lay, rng)
    out = crank_nicolson_step(blk, 0.5, rng.standard_normal(lay.d))
    assert isinstance(out, AuxiliaryBlock) and out.layout == lay
    with pytest.raises(ValueError):
        crank_nicolson_step(blk, 1.5, rng.standard_normal(lay.d))


def test_cn_preserves_standard_normal_one_step(rng):
    u = rng.standard_normal(200000)
    v = crank_nicolson_step(u, 0.9, rng.standard_normal(u.size))
    assert stats.kstest(v, "norm").pvalue > 0.001
    assert abs(np.corrcoef(u, v)[0, 1] - 0.9) < 0.01


def test_gauss_to_uniform_values():
    assert gauss_to_uniform(0.0) == 0.5
    assert gauss_to_uniform(1.959963984540054) == pytest.approx(0.975, abs=1e-12)
    assert 0 < gauss_to_uniform(-40.0) < 1e-15
    assert gauss_to_uniform(40.0) < 1.0


def test_poisson_quantile_examples():
    assert poisson_quantile(0.0, 0.9) == 0
    assert poisson_quantile(1.0, 0.5) == 1
    assert poisson_cdf_naive(0, 1.0) == pytest.approx(0.3679, abs=1e-4)
    assert poisson_cdf_naive(1, 1.0) == pytest.approx(0.7358, abs=1e-4)


@given(st.floats(0.0, 60.0), st.floats(1e-6, 1 - 1e-6))
def test_poisson_quantile_matches_naive(lam, p):
    assert int(poisson_quantile(lam, p)) == poisson_quantile_naive(lam, p)


def test_poisson_quantile_monotone_in_p():
    p = np.linspace(1e-6, 1 - 1e-6, 2001)
    for lam in (0.01, 0.7, 5.0, 123.4, 5e4):
        q = poisson_quantile(lam, p)
        assert np.all(np.diff(q) >= 0)


def test_poisson_quantile_rejects_negative_rate():
    with pytest.raises(ValueError):
        poisson_quantile(-1.0, 0.5)


def test_poisson_quantile_huge_rate_uses_normal():
    assert poisson_quantile(4e6, 0.5) == 4_000_000


def test_poisson_quantile_distribution_chi_square(rng):
    lam = 3.3
    r = poisson_quantile(lam, gauss_to_uniform(rng.standard_normal(50000)))
    kmax = 10
    obs = np.bincount(np.minimum(r, kmax), minlength=kmax + 1)
    probs = stats.poisson(lam).pmf(np.arange(kmax))
    probs = np.append(probs, 1 - probs.sum())
    assert stats.chisquare(obs, probs * len(r)).pvalue > 0.001
