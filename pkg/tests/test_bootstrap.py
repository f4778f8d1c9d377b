import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdnsm.bootstrap import (BootstrapDraws, MultiplierSpec, bootstrap_curves, draw_multipliers,
                             inf_quantile, modified_percentile_ci)
from hdnsm.dose_response import MomentTable, default_grids, estimate_curves
from hdnsm.kernels import TuningConfig
from hdnsm.simulation import DgpConfig, simulate_dgp


@pytest.mark.parametrize("dist,var", [("exponential", 1.0), ("normal", 1.0)])
def test_multiplier_moments(dist, var):
    eta = draw_multipliers(MultiplierSpec(dist, 1, seed=5), 10 ** 6, 0)
    assert abs(eta.mean() - 1) < 0.005
    assert abs(eta.var() - var) < 0.01


def test_multipliers_reproducible_and_distinct():
    spec = MultiplierSpec("exponential", 10, seed=42)
    a = draw_multipliers(spec, 50, 3)
    np.testing.assert_array_equal(a, draw_multipliers(spec, 50, 3))
    assert not np.array_equal(a, draw_multipliers(spec, 50, 4))
    assert not np.array_equal(a, draw_multipliers(MultiplierSpec("exponential", 10, seed=43), 50, 3))


def test_unknown_distribution():
    with pytest.raises(ValueError):
        MultiplierSpec("poisson")


@pytest.fixture(scope="module")
def fitted():
    d = simulate_dgp(DgpConfig(n=300, p=10, seed=2))
    cfg = TuningConfig(t_grid_size=7, u_grid_size=25)
    grids = default_grids(d, cfg)
    est = estimate_curves(d, grids, cfg)
    return d, cfg, grids, est


def test_unit_multipliers_reproduce_point_estimate(fitted):
    d, cfg, grids, est = fitted
    draws = bootstrap_curves(d, est.nuisances, grids, cfg, MultiplierSpec("ones", 12), est.h)
    point = est.statistics()
    for k, v in point.items():
        for rep in draws.draws[k]:
            np.testing.assert_array_equal(rep, v)
    band = modified_percentile_ci(draws, point)
    for k, v in point.items():
        np.testing.assert_array_equal(band.lower[k], v)
        np.testing.assert_array_equal(band.upper[k], v)


def test_moment_table_shortcut_is_identical(fitted):
    d, cfg, grids, est = fitted
    spec = MultiplierSpec("exponential", 5, seed=1)
    a = bootstrap_curves(d, est.nuisances, grids, cfg, spec, est.h)
    mt = MomentTable(d, est.nuisances, grids, est.h, cfg.kernel_spec)
    b = bootstrap_curves(d, est.nuisances, grids, cfg, spec, est.h, moments=mt)
    for k in a.draws:
        np.testing.assert_array_equal(a.draws[k], b.draws[k])


def test_exponential_replicates_vary_and_band_symmetric(fitted):
    d, cfg, grids, est = fitted
    draws = bootstrap_curves(d, est.nuisances, grids, cfg, MultiplierSpec("exponential", 30, 4), est.h)
    assert draws.b_effective == 30
    assert np.std(draws.draws["mu"], axis=0).min() > 0
    point = est.statistics()
    band = modified_percentile_ci(draws, point)
    for k, v in point.items():
        np.testing.assert_allclose(band.upper[k] - v, v - band.lower[k], atol=1e-12)
        assert np.all(band.upper[k] >= band.lower[k])


# ---------------------------------------------------------------- intervals

def band_for(values, point=0.0, alpha=0.05):
    draws = BootstrapDraws({"s": np.asarray(values, dtype=float)[:, None]}, len(values))
    b = modified_percentile_ci(draws, {"s": np.array([point])}, alpha)
    return b.lower["s"][0], b.upper["s"][0]


def test_symmetric_draws():
    lo, hi = band_for(np.r_[-np.ones(50), np.ones(50)])
    assert (lo, hi) == (-1.0, 1.0)


def test_skewed_draws_take_larger_tail():
    vals = np.r_[np.full(50, -0.5), np.full(50, 2.0)]
    lo, hi = band_for(vals, point=0.0)
    assert (lo, hi) == (-2.0, 2.0)


def test_normal_draws_approach_196():
    vals = np.random.default_rng(0).standard_normal(10_000)
    lo, hi = band_for(vals)
    assert hi == pytest.approx(1.96, rel=0.05)
    assert lo == -hi


def test_inf_quantile_rule():
    s = np.arange(1.0, 11.0)
    assert inf_quantile(s, 0.1) == 1.0
    assert inf_quantile(s, 0.11) == 2.0
    assert inf_quantile(s, 1.0) == 10.0


@given(st.lists(st.floats(-5, 5), min_size=10, max_size=60), st.floats(-2, 2))
@settings(max_examples=50)
def test_band_contains_max_abs_quantile(vals, point):
    vals = np.asarray(vals)
    lo, hi = band_for(vals, point)
    assert hi - point == pytest.approx(point - lo, abs=1e-12)
    c = np.sort(vals - point)
    assert hi - point >= -inf_quantile(c, 0.025) - 1e-12
    assert hi - point >= inf_quantile(c, 0.975) - 1e-12


@given(st.lists(st.floats(-5, 5), min_size=10, max_size=60), st.floats(0.01, 0.5), st.floats(0.01, 0.5))
@settings(max_examples=50)
def test_band_widens_as_alpha_shrinks(vals, a1, a2):
    lo_a, hi_a = sorted((a1, a2))
    _, wide = band_for(vals, 0.0, lo_a)
    _, narrow = band_for(vals, 0.0, hi_a)
    assert wide >= narrow


def test_insufficient_replicates():
    with pytest.raises(ValueError, match="insufficient replicates"):
        band_for(np.ones(9))
