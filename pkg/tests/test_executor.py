from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from djensemble.executor import (
    ExecutionError,
    PredictionGrid,
    execute_plan,
    gather_input,
    placements,
    predict_region,
    rmse,
    rollout,
)
from djensemble.grid import Region, STGrid
from djensemble.planner import single_model_plan
from djensemble.registry import AR1, CallablePredictor, ModelRecord, Persistence, Registry
from djensemble.tiling import Tile
from oracles import ar1_closed_form, check_cover, rmse_two_pass


def rec(mid="m", frame=(10, 10), n=2, k=2, backend="builtin:persistence") -> ModelRecord:
    return ModelRecord(mid, "x", Region((0, 0), *frame), frame, n, k, backend)


def constant_model(value: float, k: int = 2) -> CallablePredictor:
    return CallablePredictor(lambda f: np.full((k, *f.shape[1:]), value, dtype=np.float32))


class TestPlacements:
    def test_exact(self):
        tile = Region((0, 0), 10, 40)
        ps = placements(tile, (10, 10))
        assert len(ps) == 4
        assert all(p.clip == p.instance for p in ps)

    def test_clipped(self):
        tile = Region((8, 70), 2, 30)
        ps = placements(tile, (10, 10))
        assert len(ps) == 3
        assert all(p.clip.height == 2 and p.clip.width == 10 for p in ps)
        assert ps[0].instance == Region((8, 70), 10, 10)

    @settings(max_examples=80, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 7), st.integers(1, 7))
    def test_cover(self, th, tw, fh, fw):
        tile = Region((3, 4), th, tw)
        ps = placements(tile, (fh, fw))
        cover = check_cover((3 + th, 4 + tw), [p.clip for p in ps])
        rs, cs = tile.slices
        assert (cover[rs, cs] == 1).all() and cover.sum() == tile.area


class TestGather:
    def test_replicate_padding(self):
        frames = np.arange(3 * 2 * 2, dtype=np.float32).reshape(3, 2, 2)
        out = gather_input(frames, Region((1, 1), 2, 2), 4)
        assert out.shape == (4, 2, 2)
        np.testing.assert_array_equal(out[0], out[1])  # time padding repeats frame 0
        np.testing.assert_array_equal(out[-1], [[frames[2, 1, 1]] * 2] * 2)

    def test_t_end(self):
        frames = np.arange(5, dtype=np.float32).reshape(5, 1, 1)
        np.testing.assert_array_equal(gather_input(frames, Region((0, 0), 1, 1), 2, t_end=3).ravel(), [1, 2])


class TestRollout:
    def test_persistence_ptime(self):
        history = np.random.default_rng(0).normal(size=(6, 10, 10)).astype(np.float32)
        r = rec(n=3, k=2)
        out, calls = predict_region(r, Persistence(2), history, Region((0, 0), 10, 10), 3)
        assert calls == 2
        for f in out:
            np.testing.assert_array_equal(f, history[-1])

    def test_ar1_closed_form(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(-1, 1, size=(4, 4))
        b = rng.uniform(0.2, 0.9, size=(4, 4))
        k = 3
        model = AR1(k, np.stack([a, b]))
        r = rec(frame=(4, 4), n=2, k=k, backend="builtin:ar1")
        inputs = rng.normal(size=(2, 4, 4)).astype(np.float32)
        out, calls = rollout(r, model, inputs, 2 * k)
        assert calls == 2
        expected = ar1_closed_form(a, b, inputs[-1].astype(np.float64), 2 * k)
        np.testing.assert_allclose(out, expected, atol=1e-5)

    def test_window_shift(self):
        seen = []

        def fn(frames):
            seen.append(frames[:, 0, 0].copy())
            return frames[-1:] + 1

        r = rec(frame=(1, 1), n=3, k=1)
        rollout(r, CallablePredictor(fn), np.array([1, 2, 3], dtype=np.float32).reshape(3, 1, 1), 3)
        np.testing.assert_array_equal(seen[1], [2, 3, 4])
        np.testing.assert_array_equal(seen[2], [3, 4, 5])


class TestPredictionGrid:
    def test_write_once(self):
        pg = PredictionGrid(Region((0, 0), 2, 2), 1)
        pg.write(Region((0, 0), 1, 2), np.zeros((1, 1, 2)), "a")
        with pytest.raises(ExecutionError):
            pg.write(Region((0, 1), 2, 1), np.zeros((1, 2, 1)), "b")
        assert not pg.complete

    def test_outside(self):
        pg = PredictionGrid(Region((0, 0), 2, 2), 1)
        with pytest.raises(ExecutionError):
            pg.write(Region((1, 1), 2, 2), np.zeros((1, 2, 2)), "a")


class TestExecute:
    def test_piecewise_constant(self):
        reg = Registry()
        reg.add(rec("one", frame=(4, 3)), constant_model(1.0))
        reg.add(rec("three", frame=(4, 3)), constant_model(3.0))
        history = np.zeros((5, 4, 6), dtype=np.float32)
        tiles = [Tile(0, Region((0, 0), 4, 2), 0), Tile(1, Region((0, 2), 4, 4), 1)]
        p = single_model_plan(Region((0, 0), 4, 6), tiles, "one")
        p.assignments[1] = replace(p.assignments[1], model_id="three")
        ex = execute_plan(p, history, 2, reg)
        assert ex.report.ok and ex.prediction.complete
        v = ex.prediction.values
        assert (v[:, :2] == 1).all() and (v[:, 2:] == 3).all()
        assert (ex.prediction.provenance[:, :2] == "one").all()
        assert (ex.prediction.provenance[:, 2:] == "three").all()
        assert ex.report.total_invocations == 1 + 2

    def test_failure_is_reported(self):
        reg = Registry()
        reg.add(rec("bad", frame=(2, 2), k=1), constant_model(np.nan, 1))
        tiles = [Tile(0, Region((0, 0), 2, 2), 0)]
        ex = execute_plan(single_model_plan(Region((0, 0), 2, 2), tiles, "bad"), np.zeros((3, 2, 2)), 1, reg)
        assert not ex.report.ok
        assert ex.report.failed[0]["tile"] == 0
        assert not ex.prediction.complete

    def test_truth_rmse(self):
        reg = Registry()
        reg.add(rec("one", frame=(2, 2)), constant_model(1.0))
        tiles = [Tile(0, Region((0, 0), 2, 2), 0)]
        truth = np.zeros((2, 2, 2))
        ex = execute_plan(single_model_plan(Region((0, 0), 2, 2), tiles, "one"), np.zeros((3, 2, 2)), 2, reg,
                          truth=truth)
        assert ex.report.per_tile[0]["rmse"] == 1.0

    def test_workers_same_result(self):
        reg = Registry()
        reg.add(rec("p", frame=(3, 3), n=2, k=2), Persistence(2))
        history = np.random.default_rng(0).normal(size=(4, 9, 9)).astype(np.float32)
        tiles = [Tile(i, Region((3 * (i // 3), 3 * (i % 3)), 3, 3), 0) for i in range(9)]
        p = single_model_plan(Region((0, 0), 9, 9), tiles, "p")
        a = execute_plan(p, history, 3, reg, workers=1).prediction.values
        b = execute_plan(p, history, 3, reg, workers=4).prediction.values
        np.testing.assert_array_equal(a, b)

    def test_to_grid(self):
        reg = Registry()
        reg.add(rec("one", frame=(2, 2)), constant_model(1.0))
        tiles = [Tile(0, Region((0, 0), 2, 2), 0)]
        ex = execute_plan(single_model_plan(Region((0, 0), 2, 2), tiles, "one"), np.zeros((3, 2, 2)), 2, reg)
        g = ex.prediction.to_grid()
        assert isinstance(g, STGrid) and g.shape == (2, 2, 2)


class TestRmse:
    def test_equal(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        assert rmse(x, x) == 0.0

    def test_offset(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        assert rmse(x + 1, x) == pytest.approx(1.0)

    @settings(max_examples=40)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), st.integers(0, 1000))
    def test_two_pass(self, values, seed):
        p = np.array(values)
        t = np.random.default_rng(seed).normal(size=p.shape)
        assert rmse(p, t) == pytest.approx(rmse_two_pass(p, t), rel=1e-9, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rmse(np.zeros(3), np.zeros(4))
