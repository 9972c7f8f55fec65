import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from djensemble.gld import (
    FeatureMap,
    GldError,
    GldParams,
    extract_features,
    fit_gld,
    gld_quantile,
    sample_moments,
)
from djensemble.grid import Region, STGrid, generate_synthetic

UNIFORM = GldParams(0.5, 2.0, 1.0, 1.0)


def stratified(params: GldParams, n: int = 10_000) -> np.ndarray:
    return gld_quantile(params, (np.arange(n) + 0.5) / n)


def random_params(seed: int) -> GldParams:
    rng = np.random.default_rng(seed)
    return GldParams(
        rng.uniform(1.0, 10.0), rng.uniform(0.5, 3.0), rng.uniform(0.1, 1.2), rng.uniform(0.1, 1.2)
    )


class TestQuantile:
    def test_uniform_identity(self):
        assert gld_quantile(UNIFORM, 0.25) == pytest.approx(0.25, abs=1e-15)
        u = np.linspace(0.01, 0.99, 50)
        np.testing.assert_allclose(gld_quantile(UNIFORM, u), u, atol=1e-14)

    @pytest.mark.parametrize("lam", [0.13, 0.5, 1.0, 3.0])
    def test_median_of_symmetric_shape(self, lam):
        p = GldParams(7.0, 1.3, lam, lam)
        assert gld_quantile(p, 0.5) == pytest.approx(7.0, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(
        st.floats(-5, 5),
        st.floats(0.1, 5),
        st.floats(0.01, 3),
        st.floats(0.01, 3),
    )
    def test_monotone(self, l1, l2, l3, l4):
        p = GldParams(l1, l2, l3, l4)
        assert gld_quantile(p, 0.9) >= gld_quantile(p, 0.1)
        q = gld_quantile(p, np.linspace(0.001, 0.999, 200))
        assert np.all(np.diff(q) >= 0)

    def test_u_outside_open_interval(self):
        with pytest.raises(GldError):
            gld_quantile(UNIFORM, 0.0)
        with pytest.raises(GldError):
            gld_quantile(UNIFORM, [0.5, 1.0])

    def test_zero_lambda2(self):
        with pytest.raises(GldError):
            GldParams(0, 0, 1, 1)

    def test_moments_of_uniform(self):
        mean, var, skew, kurt = UNIFORM.moments()
        assert mean == pytest.approx(0.5)
        assert var == pytest.approx(1 / 12)
        assert skew == pytest.approx(0.0, abs=1e-12)
        assert kurt == pytest.approx(1.8)


class TestFit:
    def test_uniform_samples(self):
        x = np.random.default_rng(0).uniform(0, 1, 10_000)
        p = fit_gld(x)
        np.testing.assert_allclose(p.as_array(), UNIFORM.as_array(), atol=0.1)
        assert not p.degraded

    def test_symmetric_samples(self):
        half = np.random.default_rng(5).normal(0.0, 1.0, 5_000)
        p = fit_gld(np.concatenate([half, -half]))
        assert abs(p.lambda3 - p.lambda4) <= 0.05

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip_stratified(self, seed):
        truth = random_params(seed)
        p = fit_gld(stratified(truth))
        np.testing.assert_allclose(p.as_array(), truth.as_array(), rtol=0.05)

    def test_fit_matches_sample_moments(self):
        x = np.random.default_rng(3).gamma(4.0, 2.0, 5_000)
        p = fit_gld(x)
        fitted = np.array(p.moments())
        np.testing.assert_allclose(fitted, sample_moments(x), rtol=1e-3)

    def test_constant_series(self):
        with pytest.raises(GldError, match="zero variance"):
            fit_gld(np.full(100, 3.0))

    def test_too_few_samples(self):
        with pytest.raises(GldError, match="at least"):
            fit_gld(np.arange(10.0))

    def test_infeasible_moments_degrade(self):
        # two-point mass: kurtosis 1 lies outside the reachable region
        x = np.tile([0.0, 1.0], 100)
        p = fit_gld(x)
        assert p.degraded
        assert p.is_valid()


class TestFeatures:
    def test_shape_single_season(self):
        g = STGrid(np.random.default_rng(0).normal(size=(2, 2, 60)))
        fm = extract_features(g, 1)
        assert fm.vectors.shape == (4, 4)

    def test_shape_seasons(self):
        g = STGrid(np.random.default_rng(0).normal(size=(2, 3, 120)))
        fm = extract_features(g, 2)
        assert fm.params.shape == (2, 3, 2, 4)
        assert fm.vectors.shape == (6, 8)

    def test_identical_series(self):
        s = np.random.default_rng(1).normal(size=80)
        g = STGrid(np.broadcast_to(s, (3, 3, 80)))
        v = extract_features(g).vectors
        assert np.all(v == v[0])

    def test_season_too_short(self):
        with pytest.raises(GldError, match="too short"):
            extract_features(STGrid(np.zeros((1, 1, 60)) + np.arange(60)), 2)

    def test_scale_follows_spread(self):
        base = STGrid(np.full((4, 8, 200), 10.0))
        g = generate_synthetic(base, [(Region((0, 0), 4, 4), 0.1), (Region((0, 4), 4, 4), 0.75)], seed=2)
        fm = extract_features(g)
        inv_scale = 1.0 / np.abs(fm.params[..., 0, 1])
        left, right = inv_scale[:, :4].mean(), inv_scale[:, 4:].mean()
        std_left = g.values[:, :4].std(axis=2).mean()
        std_right = g.values[:, 4:].std(axis=2).mean()
        assert (right > left) == (std_right > std_left)
        assert right > left

    def test_csv_round_trip(self, tmp_path):
        g = STGrid(np.random.default_rng(0).normal(size=(2, 2, 60)))
        fm = extract_features(g)
        fm.to_csv(tmp_path / "f.csv")
        back = FeatureMap.from_csv(tmp_path / "f.csv")
        np.testing.assert_array_equal(back.params, fm.params)
