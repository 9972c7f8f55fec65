import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from djensemble.clustering import ClusterMap
from djensemble.grid import Region, STGrid
from djensemble.tiling import Tile, TileSet, build_tileset, medoid, medoid_index, tile_domain
from oracles import check_cover, medoid_bruteforce


def label_fields(max_side=12, max_k=4):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shapes.flatmap(lambda s: arrays(np.int64, s, elements=st.integers(0, max_k - 1)))


class TestTileDomain:
    def test_single_cluster(self):
        ts = tile_domain(np.zeros((10, 10), dtype=int))
        assert [t.region for t in ts] == [Region((0, 0), 10, 10)]

    def test_vertical_split(self):
        labels = np.zeros((10, 10), dtype=int)
        labels[:, 5:] = 1
        ts = tile_domain(labels)
        assert len(ts) == 2
        assert {t.region for t in ts} == {Region((0, 0), 10, 5), Region((0, 5), 10, 5)}

    def test_checkerboard(self):
        labels = np.indices((4, 4)).sum(axis=0) % 2
        ts = tile_domain(labels)
        assert len(ts) == 16
        assert all(t.region.area == 1 for t in ts)

    def test_accepts_cluster_map(self):
        cm = ClusterMap(np.array([[0, 0], [1, 1]]), 2, np.zeros((2, 4)))
        ts = tile_domain(cm)
        assert [t.cid for t in ts] == [0, 1]

    @settings(max_examples=100, deadline=None)
    @given(label_fields())
    def test_exact_cover_monochromatic(self, labels):
        ts = tile_domain(labels)
        cover = check_cover(labels.shape, [t.region for t in ts])
        assert (cover == 1).all()
        for t in ts:
            rs, cs = t.region.slices
            assert (labels[rs, cs] == t.cid).all()

    @settings(max_examples=50, deadline=None)
    @given(label_fields())
    def test_label_map(self, labels):
        ts = tile_domain(labels)
        lm = ts.label_map()
        assert (lm >= 0).all()
        for t in ts:
            rs, cs = t.region.slices
            assert (lm[rs, cs] == t.id).all()


class TestMedoid:
    def test_single_cell(self):
        g = STGrid(np.random.default_rng(0).normal(size=(3, 3, 5)))
        np.testing.assert_array_equal(medoid(g, Region((1, 2), 1, 1)), g.series(1, 2))

    def test_middle_series(self):
        series = np.array([[0.0, 0.0], [1.0, 1.0], [10.0, 10.0]])
        assert medoid_index(series) == 1

    def test_identical_series_first(self):
        g = STGrid(np.ones((3, 3, 4)))
        assert medoid_index(g.values.reshape(9, 4)) == 0

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 6)),
                  elements=st.integers(-5, 5).map(float)))
    def test_bruteforce(self, series):
        assert medoid_index(series) == medoid_bruteforce(series)

    def test_large_tile_path(self):
        x = np.random.default_rng(3).normal(size=(600, 8))
        x[123] = x.mean(axis=0)
        assert medoid_index(x) == 123

    def test_dtw_metric(self):
        series = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 1.0], [5.0, 5.0, 5.0]])
        assert medoid_index(series, "dtw") == 1
        with pytest.raises(ValueError):
            medoid_index(series, "cosine")


def test_build_and_save(tmp_path):
    g = STGrid(np.random.default_rng(0).normal(size=(4, 4, 6)))
    labels = np.zeros((4, 4), dtype=int)
    labels[2:] = 1
    cm = ClusterMap(labels, 2, np.zeros((2, 4)))
    ts = build_tileset(g, cm)
    assert ts.time_count == 6
    assert all(t.centroid.shape == (6,) for t in ts)
    ts.save(tmp_path / "t.json", tmp_path / "c.stg1")
    back = TileSet.load(tmp_path / "t.json", tmp_path / "c.stg1")
    assert [t.region for t in back] == [t.region for t in ts]
    for a, b in zip(back, ts):
        np.testing.assert_allclose(a.centroid, b.centroid, rtol=1e-6)
    assert back.by_id(1).cid == 1
    with pytest.raises(KeyError):
        back.by_id(9)


def test_tile_with_centroid():
    t = Tile(0, Region((0, 0), 1, 1), 0).with_centroid([1, 2])
    assert t.centroid.dtype == np.float64
