import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from djensemble.curve import LearningCurve
from djensemble.grid import Region
from djensemble.planner import (
    AllocationPlan,
    Assignment,
    Candidate,
    CandidateCost,
    PlanError,
    aggregate_plan_rmse,
    allocate,
    cost,
    drop_outlier_models,
    exhaustive_allocate,
    exhaustive_plan,
    invocation_count,
    plan,
    plan_gap,
    query_tiles,
    tile_costs,
    tukey_outliers,
)
from djensemble.registry import ModelRecord, Persistence, Registry
from djensemble.tiling import Tile, TileSet, tile_domain
from oracles import check_cover


def flat_curve(err: float, slope: float = 0.0) -> LearningCurve:
    pts = [(float(d), err + slope * d) for d in range(10)]
    return LearningCurve([err, slope], 1, err, pts, 9.0)


def registry_with(models, centroid_len=5) -> Registry:
    """``models``: list of (id, error, frame, uc)."""
    reg = Registry()
    for mid, err, frame, uc in models:
        rec = ModelRecord(mid, "x", Region((0, 0), *frame), frame, 1, 1, "builtin:persistence",
                          learning_curve=flat_curve(err), unitary_cost=uc,
                          training_centroid=np.zeros(centroid_len))
        reg.add(rec, Persistence(1))
    return reg


def four_tiles() -> TileSet:
    regions = [Region((0, 0), 10, 40), Region((0, 40), 10, 30), Region((0, 70), 8, 30), Region((8, 70), 2, 30)]
    tiles = [Tile(i, r, i, np.zeros(5)) for i, r in enumerate(regions)]
    return TileSet(tiles, Region((0, 0), 10, 100), 5)


class TestQueryTiles:
    def test_whole_domain(self):
        ts = four_tiles()
        assert [t.region for t in query_tiles(ts.extent, ts)] == [t.region for t in ts]

    def test_inside_one_tile(self):
        q = Region((2, 5), 3, 4)
        out = query_tiles(q, four_tiles())
        assert len(out) == 1 and out[0].region == q and out[0].id == 0

    def test_outside(self):
        with pytest.raises(PlanError):
            query_tiles(Region((5, 90), 10, 20), four_tiles())

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_random_cover(self, data):
        labels = np.array(data.draw(st.lists(st.lists(st.integers(0, 2), min_size=9, max_size=9),
                                             min_size=7, max_size=7)))
        ts = tile_domain(labels)
        r0, c0 = data.draw(st.integers(0, 6)), data.draw(st.integers(0, 8))
        q = Region((r0, c0), data.draw(st.integers(1, 7 - r0)), data.draw(st.integers(1, 9 - c0)))
        pieces = query_tiles(q, ts)
        cover = check_cover((7, 9), [p.region for p in pieces])
        rs, cs = q.slices
        assert (cover[rs, cs] == 1).all()
        assert cover.sum() == q.area


class TestInvocations:
    @pytest.mark.parametrize(
        "tile,frame,expected",
        [((10, 40), (10, 10), 4), ((8, 30), (10, 20), 2), ((2, 30), (10, 10), 3)],
    )
    def test_examples(self, tile, frame, expected):
        assert invocation_count(Region((0, 0), *tile), frame) == expected

    def test_bad_frame(self):
        with pytest.raises(ValueError):
            invocation_count(Region((0, 0), 1, 1), (0, 1))


class TestOutliers:
    def test_far_values_dropped(self):
        errs = [3.61, 3.2, 2.1, 2.9, 81.0]
        kept = drop_outlier_models([Candidate(f"m{i}", e) for i, e in enumerate(errs)])
        assert [c.model_id for c in kept] == ["m0", "m1", "m2", "m3"]

    def test_three_high_of_six_not_outliers(self):
        # with half the set near 80, the upper quartile sits there too and the fence is far above
        errs = [3.61, 80, 3.2, 81, 2.1, 79]
        assert not tukey_outliers(errs).any()

    def test_equal_values(self):
        kept = drop_outlier_models([Candidate(f"m{i}", 2.0) for i in range(5)])
        assert len(kept) == 5

    def test_single(self):
        c = Candidate("a", 100.0)
        assert drop_outlier_models([c]) == [c]

    def test_exec_time_outlier(self):
        cands = [Candidate(f"m{i}", 1.0, 1, 1.0) for i in range(4)] + [Candidate("slow", 1.0, 1, 50.0)]
        assert "slow" not in {c.model_id for c in drop_outlier_models(cands)}

    def test_empty(self):
        with pytest.raises(PlanError):
            drop_outlier_models([])

    def test_fence_multiplier(self):
        errs = [1.0, 1.0, 1.0, 2.0, 3.6]
        assert tukey_outliers(errs, 1.5)[-1]
        assert not tukey_outliers(errs, 3.0)[-1]


class TestCost:
    def test_mu_zero(self):
        c = cost(2.0, 3, 0.5, 0.0, 4.0, 6.0)
        assert c.cost == c.norm_error == 0.5

    def test_mu_one(self):
        c = cost(2.0, 3, 0.5, 1.0, 4.0, 6.0)
        assert c.cost == c.norm_time == 0.25

    def test_hand_example(self):
        c = cost(2.0, 2, 0.5, 0.4, 4.0, 2.0)
        assert c.cost == pytest.approx(0.5)

    def test_bad_maxima(self):
        with pytest.raises(PlanError):
            cost(1.0, 1, 1.0, 0.5, 0.0, 1.0)

    def test_bad_mu(self):
        with pytest.raises(PlanError):
            tile_costs({0: [Candidate("a", 1.0)]}, 1.5)


def random_instance(rng):
    tiles = int(rng.integers(1, 5))
    models = int(rng.integers(1, 6))
    return {
        t: [Candidate(f"m{j}", float(rng.uniform(0, 10)), int(rng.integers(1, 6)), float(rng.uniform(0.01, 1)))
            for j in range(models)]
        for t in range(tiles)
    }


class TestAllocate:
    def test_cross_assignment(self):
        cands = {0: [Candidate("m0", 1.0), Candidate("m1", 2.0)], 1: [Candidate("m0", 2.0), Candidate("m1", 1.0)]}
        choice, _ = exhaustive_allocate(cands, 0.0)
        assert {t: c.model_id for t, c in choice.items()} == {0: "m0", 1: "m1"}

    def test_single_tile_argmin(self):
        cands = {0: [Candidate("a", 3.0), Candidate("b", 1.0), Candidate("c", 2.0)]}
        choice, _ = exhaustive_allocate(cands, 0.0)
        assert choice[0].model_id == "b"

    def test_tie_breaks(self):
        # equal cost at mu=1: lower error wins, then model id
        cands = {0: [Candidate("b", 2.0, 1, 1.0), Candidate("a", 3.0, 1, 1.0), Candidate("c", 2.0, 1, 1.0)]}
        choice, _, _ = allocate(cands, 1.0)
        assert choice[0].model_id == "b"

    @pytest.mark.parametrize("seed", range(200))
    def test_greedy_equals_exhaustive(self, seed):
        rng = np.random.default_rng(seed)
        cands = random_instance(rng)
        mu = float(rng.uniform())
        greedy, total, _ = allocate(cands, mu)
        best, best_total = exhaustive_allocate(cands, mu)
        assert total == best_total
        assert {t: c.model_id for t, c in greedy.items()} == {t: c.model_id for t, c in best.items()}

    @pytest.mark.parametrize("seed", range(30))
    def test_scale_invariance(self, seed):
        rng = np.random.default_rng(seed)
        cands = random_instance(rng)
        mu = float(rng.uniform())
        scaled = {t: [Candidate(c.model_id, c.est_error * 7.3, c.invocations, c.uc) for c in cs]
                  for t, cs in cands.items()}
        a, _, _ = allocate(cands, mu)
        b, _, _ = allocate(scaled, mu)
        assert {t: c.model_id for t, c in a.items()} == {t: c.model_id for t, c in b.items()}

    @pytest.mark.parametrize("seed", range(30))
    def test_mu_monotone(self, seed):
        rng = np.random.default_rng(seed)
        cands = random_instance(rng)
        prev = None
        for mu in np.linspace(0, 1, 21):
            choice, _, _ = allocate(cands, float(mu))
            if prev is not None:
                for t in cands:
                    assert choice[t].exec_est <= prev[t].exec_est
                    assert choice[t].est_error >= prev[t].est_error
            prev = choice

    def test_global_normalization(self):
        cands = {0: [Candidate("a", 1.0)], 1: [Candidate("a", 4.0)]}
        costs, _ = tile_costs(cands, 0.0, "global")
        assert costs[0][0].norm_error == 0.25 and costs[1][0].norm_error == 1.0
        with pytest.raises(PlanError):
            tile_costs(cands, 0.0, "bogus")

    def test_all_zero_errors(self):
        choice, total, _ = allocate({0: [Candidate("a", 0.0), Candidate("b", 0.0)]}, 0.0)
        assert total == 0.0 and choice[0].model_id == "a"


class TestPlan:
    def test_single_model_everywhere(self):
        reg = registry_with([("only", 2.0, (10, 10), 0.1)])
        p = plan(Region((0, 0), 10, 100), four_tiles(), reg, 0.5)
        assert set(p.mapping().values()) == {"only"}
        assert len(p.assignments) == 4

    def test_specialist_by_distance(self):
        reg = Registry()
        for mid, level in (("low", 0.0), ("high", 5.0)):
            rec = ModelRecord(mid, "x", Region((0, 0), 1, 1), (1, 1), 1, 1, "builtin:persistence",
                              learning_curve=flat_curve(0.5, 1.0), unitary_cost=0.1,
                              training_centroid=np.full(5, level))
            reg.add(rec, Persistence(1))
        tiles = TileSet([Tile(0, Region((0, 0), 1, 1), 0, np.zeros(5)), Tile(1, Region((0, 1), 1, 1), 1,
                                                                              np.full(5, 5.0))],
                        Region((0, 0), 1, 2), 5)
        p = plan(tiles.extent, tiles, reg, 0.0)
        assert p.mapping() == {0: "low", 1: "high"}

    def test_no_eligible(self):
        reg = Registry()
        rec = ModelRecord("x", "x", Region((0, 0), 1, 1), (1, 1), 1, 1, "builtin:persistence")
        reg.add(rec, Persistence(1))
        with pytest.raises(PlanError, match="no eligible"):
            plan(Region((0, 0), 10, 100), four_tiles(), reg, 0.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_plan_equals_exhaustive_plan(self, seed):
        rng = np.random.default_rng(seed)
        models = [(f"m{j}", float(rng.uniform(0.5, 5)), (int(rng.integers(1, 11)), int(rng.integers(1, 21))),
                   float(rng.uniform(0.01, 1))) for j in range(int(rng.integers(1, 6)))]
        reg = registry_with(models)
        mu = float(rng.uniform())
        a = plan(Region((0, 0), 10, 100), four_tiles(), reg, mu)
        b = exhaustive_plan(Region((0, 0), 10, 100), four_tiles(), reg, mu)
        assert a.total_cost == b.total_cost
        assert a.mapping() == b.mapping()

    def test_validate_rejects_gaps_and_overlap(self):
        ts = four_tiles()
        cc = CandidateCost("m", 0, 1.0, 1, 1.0, 1.0, 1.0, 1.0)
        gap = AllocationPlan(ts.extent, 0.0, [Assignment(ts.tiles[0], "m", cc)], 1.0)
        with pytest.raises(PlanError):
            gap.validate()
        dup = AllocationPlan(ts.extent, 0.0, [Assignment(t, "m", cc) for t in ts.tiles + ts.tiles[:1]], 1.0)
        with pytest.raises(PlanError):
            dup.validate()

    def test_to_dict(self):
        reg = registry_with([("a", 1.0, (10, 10), 0.1)])
        doc = plan(Region((0, 0), 10, 100), four_tiles(), reg, 0.0).to_dict()
        assert doc["mu_e"] == 0.0 and len(doc["assignments"]) == 4
        assert doc["assignments"][3]["invocations"] == 3


class TestAggregate:
    def test_tabulated_layouts(self):
        t = aggregate_plan_rmse([3.61, 1.69, 2.11, 2.21])
        w = aggregate_plan_rmse([4.36, 2.14, 1.92, 2.56])
        assert t == pytest.approx(2.405)
        assert w == pytest.approx(2.745)
        assert plan_gap(w, t) == pytest.approx(0.1414, abs=5e-5)

    def test_single(self):
        assert aggregate_plan_rmse([2.35]) == 2.35

    def test_gap(self):
        assert plan_gap(2.35, 2.24) == pytest.approx(0.0491, abs=5e-5)

    def test_empty(self):
        with pytest.raises(PlanError):
            aggregate_plan_rmse([])


def test_exhaustive_enumerates_product():
    cands = {0: [Candidate("a", 1.0), Candidate("b", 2.0)], 1: [Candidate("a", 3.0), Candidate("b", 1.0)],
             2: [Candidate("a", 1.0), Candidate("b", 1.5)]}
    costs, _ = tile_costs(cands, 0.0)
    totals = [sum(c.cost for c in combo) for combo in itertools.product(*costs.values())]
    _, best = exhaustive_allocate(cands, 0.0)
    assert best == pytest.approx(min(totals))
