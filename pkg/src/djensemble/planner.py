"""Cost-based allocation of one model per query tile.

Per tile, every eligible model gets an estimated error (its learning curve
at the DTW distance between its training centroid and the tile centroid)
and an estimated execution time (invocations times unitary cost). Outliers
are dropped, both quantities are normalized by their maxima and blended by
``mu_e``, and the cheapest model wins. Tile costs are independent, so the
per-tile argmin is also the global optimum.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .curve import estimate_error
from .distance import dtw_distance
from .grid import Region, STGrid
from .tiling import Tile, TileSet, medoid

TUKEY_K = 1.5


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Candidate:
    """Raw per-(tile, model) estimates before normalization."""

    model_id: str
    est_error: float
    invocations: int = 1
    uc: float = 1.0

    @property
    def exec_est(self) -> float:
        return self.invocations * self.uc


@dataclass(frozen=True)
class CandidateCost:
    model_id: str
    tile_id: int
    est_error: float
    invocations: int
    exec_est: float
    norm_error: float
    norm_time: float
    cost: float

    def to_dict(self) -> dict:
        return {
            "tile": self.tile_id,
            "model": self.model_id,
            "est_error": self.est_error,
            "invocations": self.invocations,
            "exec_est": self.exec_est,
            "norm_error": self.norm_error,
            "norm_time": self.norm_time,
            "cost": self.cost,
        }


@dataclass(frozen=True)
class Assignment:
    tile: Tile
    model_id: str
    cost: CandidateCost


@dataclass
class AllocationPlan:
    region: Region
    mu_e: float
    assignments: list[Assignment]
    total_cost: float
    dropped: dict[int, list[str]] = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def mapping(self) -> dict[int, str]:
        return {a.tile.id: a.model_id for a in self.assignments}

    def to_dict(self) -> dict:
        return {
            "query": self.region.to_dict(),
            "mu_e": self.mu_e,
            "assignments": [a.cost.to_dict() | {"region": a.tile.region.to_dict()} for a in self.assignments],
            "total_cost": self.total_cost,
            "dropped": {str(k): v for k, v in self.dropped.items()},
        }

    def validate(self) -> None:
        """Check one model per tile and a disjoint exact cover of the region."""
        ids = [a.tile.id for a in self.assignments]
        if len(ids) != len(set(ids)):
            raise PlanError("a tile is assigned more than once")
        cover = np.zeros((self.region.height, self.region.width), dtype=np.int64)
        for a in self.assignments:
            if not self.region.contains(a.tile.region):
                raise PlanError(f"tile {a.tile.id} outside query region")
            rs, cs = a.tile.region.shift(-self.region.start[0], -self.region.start[1]).slices
            cover[rs, cs] += 1
        if (cover != 1).any():
            raise PlanError("assigned tiles do not cover the query region exactly once")


def query_tiles(region: Region, tiles: TileSet) -> list[Tile]:
    """Tiles clipped to ``region``; clipped tiles keep id, cid and centroid."""
    if not tiles.extent.contains(region):
        raise PlanError(f"query region {region} outside domain {tiles.extent}")
    out = []
    for t in tiles:
        clip = t.region.intersect(region)
        if clip is not None:
            out.append(Tile(t.id, clip, t.cid, t.centroid))
    return out


def invocation_count(region: Region, frame: tuple[int, int]) -> int:
    h, w = frame
    if h < 1 or w < 1:
        raise ValueError(f"frame dims must be >= 1, got {frame}")
    return math.ceil(region.height / h) * math.ceil(region.width / w)


def tukey_outliers(values, k: float = TUKEY_K) -> np.ndarray:
    """Mask of values above ``Q3 + k * IQR``."""
    v = np.asarray(values, dtype=np.float64)
    q1, q3 = np.percentile(v, [25, 75])
    return v > q3 + k * (q3 - q1)


def drop_outlier_models(candidates: list[Candidate], k: float = TUKEY_K) -> list[Candidate]:
    """Remove candidates whose error or execution estimate is an upper outlier.

    At least one candidate always survives: the one with the lowest error.
    """
    if not candidates:
        raise PlanError("empty candidate list")
    bad = tukey_outliers([c.est_error for c in candidates], k) | tukey_outliers(
        [c.exec_est for c in candidates], k
    )
    kept = [c for c, b in zip(candidates, bad) if not b]
    if not kept:
        kept = [min(candidates, key=lambda c: (c.est_error, c.model_id))]
    return kept


def cost(
    est_error: float, invocations: int, uc: float, mu_e: float, max_error: float, max_time: float,
    model_id: str = "", tile_id: int = -1,
) -> CandidateCost:
    if max_error <= 0 or max_time <= 0:
        raise PlanError(f"normalization maxima must be positive, got {max_error}, {max_time}")
    exec_est = invocations * uc
    ne = est_error / max_error
    nt = exec_est / max_time
    return CandidateCost(model_id, tile_id, est_error, invocations, exec_est, ne, nt, (1.0 - mu_e) * ne + mu_e * nt)


def _maxima(cands: list[Candidate]) -> tuple[float, float]:
    max_e = max(c.est_error for c in cands)
    max_t = max(c.exec_est for c in cands)
    # all-zero errors carry no information; any positive scale keeps them at 0
    return (max_e if max_e > 0 else 1.0), (max_t if max_t > 0 else 1.0)


def tile_costs(
    candidates_by_tile: dict[int, list[Candidate]],
    mu_e: float,
    normalization: str = "tile",
    drop_outliers: bool = True,
    outlier_k: float = TUKEY_K,
) -> tuple[dict[int, list[CandidateCost]], dict[int, list[str]]]:
    """Normalized costs of the surviving candidates of every tile."""
    if not 0.0 <= mu_e <= 1.0:
        raise PlanError(f"mu_e must lie in [0, 1], got {mu_e}")
    if normalization not in ("tile", "global"):
        raise PlanError(f"unknown normalization {normalization!r}")
    survivors = {}
    dropped = {}
    for tid, cands in candidates_by_tile.items():
        if not cands:
            raise PlanError(f"no eligible models for tile {tid}")
        kept = drop_outlier_models(cands, outlier_k) if drop_outliers else list(cands)
        survivors[tid] = kept
        dropped[tid] = sorted({c.model_id for c in cands} - {c.model_id for c in kept})
    if normalization == "global":
        gmax = _maxima([c for cs in survivors.values() for c in cs])
    out = {}
    for tid, kept in survivors.items():
        max_e, max_t = gmax if normalization == "global" else _maxima(kept)
        out[tid] = [cost(c.est_error, c.invocations, c.uc, mu_e, max_e, max_t, c.model_id, tid) for c in kept]
    return out, dropped


def _rank(c: CandidateCost):
    return (c.cost, c.est_error, c.model_id)


def allocate(
    candidates_by_tile: dict[int, list[Candidate]],
    mu_e: float,
    normalization: str = "tile",
    drop_outliers: bool = True,
    outlier_k: float = TUKEY_K,
) -> tuple[dict[int, CandidateCost], float, dict[int, list[str]]]:
    """Per-tile argmin; ties go to the lower error, then the smaller model id.

    Returns ``(choice per tile, total cost, dropped model ids per tile)``.
    """
    costs, dropped = tile_costs(candidates_by_tile, mu_e, normalization, drop_outliers, outlier_k)
    choice = {tid: min(cs, key=_rank) for tid, cs in costs.items()}
    total = 0.0
    for tid in candidates_by_tile:
        total += choice[tid].cost
    return choice, total, dropped


def exhaustive_allocate(
    candidates_by_tile: dict[int, list[Candidate]],
    mu_e: float,
    normalization: str = "tile",
    drop_outliers: bool = True,
    outlier_k: float = TUKEY_K,
) -> tuple[dict[int, CandidateCost], float]:
    """Minimum total cost over every joint assignment (test oracle)."""
    costs, _ = tile_costs(candidates_by_tile, mu_e, normalization, drop_outliers, outlier_k)
    tids = list(candidates_by_tile)
    best, best_total = None, math.inf
    for combo in itertools.product(*(costs[t] for t in tids)):
        total = 0.0
        for c in combo:
            total += c.cost
        if total < best_total:
            best, best_total = combo, total
    return dict(zip(tids, best)), best_total


def candidates_for(
    tiles: list[Tile], records, grid: STGrid | None = None, recompute_centroid: bool = False, band: int | None = None
):
    """Estimated error and invocations of every model on every tile.

    Returns ``(candidates_by_tile, timings)`` where timings split DTW time
    from learning-function evaluation time.
    """
    out = {}
    dtw_s = lf_s = 0.0
    for t in tiles:
        centroid = t.centroid
        if recompute_centroid or centroid is None:
            if grid is None:
                raise PlanError(f"tile {t.id} has no centroid and no grid was given")
            centroid = medoid(grid, t.region)
        cands = []
        for rec in records:
            t0 = time.perf_counter()
            dist = dtw_distance(rec.training_centroid, centroid, band=band)
            t1 = time.perf_counter()
            err = estimate_error(rec.learning_curve, dist)
            t2 = time.perf_counter()
            dtw_s += t1 - t0
            lf_s += t2 - t1
            cands.append(Candidate(rec.id, err, invocation_count(t.region, rec.frame), rec.unitary_cost))
        out[t.id] = cands
    return out, {"dtw_s": dtw_s, "lf_s": lf_s, "n_models": len(records), "n_tiles": len(tiles)}


def _plan_inputs(region, tiles, registry, model_ids, grid, recompute_centroid, band):
    records = registry.eligible()
    if model_ids is not None:
        records = [r for r in records if r.id in set(model_ids)]
    if not records:
        raise PlanError("no eligible models")
    qtiles = query_tiles(region, tiles)
    cands, timings = candidates_for(qtiles, records, grid, recompute_centroid, band)
    return qtiles, cands, timings


def plan(
    region: Region,
    tiles: TileSet,
    registry,
    mu_e: float,
    normalization: str = "tile",
    drop_outliers: bool = True,
    grid: STGrid | None = None,
    recompute_centroid: bool = False,
    model_ids: list[str] | None = None,
    outlier_k: float = TUKEY_K,
    band: int | None = None,
) -> AllocationPlan:
    """Allocate the cheapest eligible model to every tile of ``region``."""
    t0 = time.perf_counter()
    qtiles, cands, timings = _plan_inputs(region, tiles, registry, model_ids, grid, recompute_centroid, band)
    choice, total, dropped = allocate(cands, mu_e, normalization, drop_outliers, outlier_k)
    timings["plan_s"] = time.perf_counter() - t0
    assignments = [Assignment(t, choice[t.id].model_id, choice[t.id]) for t in qtiles]
    out = AllocationPlan(region, mu_e, assignments, total, dropped, timings)
    out.validate()
    return out


def exhaustive_plan(
    region: Region,
    tiles: TileSet,
    registry,
    mu_e: float,
    normalization: str = "tile",
    drop_outliers: bool = True,
    grid: STGrid | None = None,
    recompute_centroid: bool = False,
    model_ids: list[str] | None = None,
    outlier_k: float = TUKEY_K,
    band: int | None = None,
) -> AllocationPlan:
    """Same inputs as :func:`plan`, solved by enumerating every joint assignment."""
    qtiles, cands, timings = _plan_inputs(region, tiles, registry, model_ids, grid, recompute_centroid, band)
    choice, total = exhaustive_allocate(cands, mu_e, normalization, drop_outliers, outlier_k)
    assignments = [Assignment(t, choice[t.id].model_id, choice[t.id]) for t in qtiles]
    out = AllocationPlan(region, mu_e, assignments, total, timings=timings)
    out.validate()
    return out


def single_model_plan(region: Region, tiles: list[Tile], model_id: str) -> AllocationPlan:
    """Plan assigning ``model_id`` everywhere, without cost estimates."""
    assignments = [
        Assignment(t, model_id, CandidateCost(model_id, t.id, 0.0, 1, 0.0, 0.0, 0.0, 0.0)) for t in tiles
    ]
    return AllocationPlan(region, 0.0, assignments, 0.0)


def aggregate_plan_rmse(per_tile_rmse) -> float:
    """Unweighted mean of per-tile RMSEs."""
    vals = [float(v) for v in per_tile_rmse]
    if not vals:
        raise PlanError("no tile RMSEs to aggregate")
    return sum(vals) / len(vals)


def plan_gap(value: float, reference: float) -> float:
    """Relative excess of ``value`` over ``reference``."""
    return (value - reference) / reference
