import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from djensemble.bench import benchmark_distance_matrix, fit_ratio_sweep, random_series
from djensemble.distance import dtw, dtw_distance, feature_distance, pairwise_dtw
from oracles import dtw_bruteforce

series = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=8)


class TestDtw:
    @settings(max_examples=50, deadline=None)
    @given(series)
    def test_identity(self, s):
        assert dtw_distance(s, s) == 0.0

    def test_two_by_two(self):
        assert dtw_distance([0, 0], [1, 1]) == 2.0

    @settings(max_examples=100, deadline=None)
    @given(series, series)
    def test_bruteforce(self, a, b):
        assert dtw_distance(a, b) == dtw_bruteforce(a, b)

    @settings(max_examples=50, deadline=None)
    @given(series, series)
    def test_symmetric(self, a, b):
        assert dtw_distance(a, b) == pytest.approx(dtw_distance(b, a), abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(series, series)
    def test_endpoint_lower_bound(self, a, b):
        d = dtw_distance(a, b)
        assert d >= abs(a[-1] - b[-1])
        assert d >= abs(a[0] - b[0])

    def test_path(self):
        res = dtw([0, 1, 2], [0, 2], return_path=True)
        assert res.path[0] == (0, 0) and res.path[-1] == (2, 1)
        cost = sum(abs([0, 1, 2][i] - [0, 2][j]) for i, j in res.path)
        assert cost == res.cost

    def test_band(self):
        a, b = [0, 5, 0, 0], [0, 0, 5, 0]
        assert dtw_distance(a, b, band=0) == 10.0
        assert dtw_distance(a, b) == 0.0
        assert dtw_distance(a, b, band=10) == dtw_distance(a, b)

    def test_squared_local(self):
        assert dtw_distance([0], [3], local="squared") == 9.0

    def test_empty(self):
        with pytest.raises(ValueError):
            dtw_distance([], [1])

    def test_pairwise_matches_scalar(self):
        x = np.random.default_rng(0).normal(size=(5, 12))
        m = pairwise_dtw(x)
        for i in range(5):
            for j in range(5):
                assert m[i, j] == pytest.approx(dtw_distance(x[i], x[j]), abs=1e-12)


class TestFeatureDistance:
    def test_equal(self):
        assert feature_distance([1, 2, 3, 4], [1, 2, 3, 4]) == 0.0

    def test_345(self):
        assert feature_distance([0, 0, 0, 0], [3, 4, 0, 0]) == 5.0

    @settings(max_examples=50)
    @given(*(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4) for _ in range(3)))
    def test_triangle(self, a, b, c):
        assert feature_distance(a, c) <= feature_distance(a, b) + feature_distance(b, c) + 1e-9

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            feature_distance([1, 2], [1, 2, 3])


class TestBenchmark:
    def test_small_report(self):
        rep = benchmark_distance_matrix(random_series(10, 10), repeats=1)
        assert rep["n"] == 10
        assert rep["t_feature_ms"] > 0 and rep["t_shape_ms"] > 0
        assert rep["ratio"] == pytest.approx(rep["t_shape_ms"] / rep["t_feature_ms"])

    def test_sweep_fit(self):
        rows = [{"n": n, "ratio": 2.0 * (n - 1)} for n in (10, 20, 30)]
        fit = fit_ratio_sweep(rows)
        assert fit.c == pytest.approx(2.0)
        assert fit.slope == pytest.approx(2.0)
        assert fit.r2 == pytest.approx(1.0)
