"""Comparison strategies: single model, averaged ensembles and stacking."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .curve import estimate_error
from .distance import dtw_distance
from .executor import Execution, ExecutionReport, PredictionGrid, execute_plan, predict_region
from .grid import Region, STGrid
from .planner import invocation_count, single_model_plan
from .tiling import Tile, medoid

RIDGE = 1e-6


class BaselineError(ValueError):
    pass


def _history_grid(history: STGrid | np.ndarray) -> STGrid:
    if isinstance(history, STGrid):
        return history
    return STGrid(np.moveaxis(np.asarray(history), 0, 2))


def run_single_model(model_id: str, region: Region, history, ptime: int, registry, tiles=None) -> Execution:
    """One model tiled over the whole query (or over the given clipped tiles)."""
    tiles = tiles if tiles is not None else [Tile(0, region, 0)]
    return execute_plan(single_model_plan(region, tiles, model_id), history, ptime, registry)


def _member_runs(model_ids, region, history, ptime, registry):
    preds, report = {}, ExecutionReport(nts=ptime)
    t_start = time.perf_counter()
    for mid in model_ids:
        t0 = time.perf_counter()
        out, calls = predict_region(registry.get(mid), registry.predictor(mid), history, region, ptime)
        preds[mid] = out
        report.per_tile.append({"tile": 0, "model": mid, "invocations": calls, "elapsed_s": time.perf_counter() - t0})
        report.total_invocations += calls
    report.total_elapsed_s = time.perf_counter() - t_start
    return preds, report


def _mean_grid(region: Region, preds: dict[str, np.ndarray], tag: str) -> PredictionGrid:
    stack = np.stack([preds[m].astype(np.float64) for m in sorted(preds)])
    return PredictionGrid.from_frames(region, stack.mean(axis=0).astype(np.float32), tag)


def run_traditional_ensemble(model_ids, region: Region, history, ptime: int, registry) -> Execution:
    """Every model covers the whole query; per-cell unweighted mean."""
    if not model_ids:
        raise BaselineError("empty ensemble")
    preds, report = _member_runs(model_ids, region, history, ptime, registry)
    return Execution(_mean_grid(region, preds, "ensemble"), report)


def estimated_errors(model_ids, registry, centroid: np.ndarray) -> dict[str, float]:
    out = {}
    for mid in model_ids:
        rec = registry.get(mid)
        out[mid] = estimate_error(rec.learning_curve, dtw_distance(rec.training_centroid, centroid))
    return out


def filter_models(model_ids, registry, centroid: np.ndarray, threshold: float) -> list[str]:
    est = estimated_errors(model_ids, registry, centroid)
    return [m for m in model_ids if est[m] <= threshold]


def run_dtw_filtered_ensemble(model_ids, region: Region, history, ptime: int, registry, threshold: float) -> Execution:
    """Average of the models whose estimated error on the query medoid is within ``threshold``."""
    grid = _history_grid(history)
    survivors = filter_models(model_ids, registry, medoid(grid, region), threshold)
    if not survivors:
        raise BaselineError("no models survive")
    preds, report = _member_runs(survivors, region, grid, ptime, registry)
    return Execution(_mean_grid(region, preds, "dtw-ensemble"), report)


def run_tile_aware_ensemble(
    model_ids, region: Region, tiles: list[Tile], history, ptime: int, registry, threshold: float
) -> Execution:
    """Per tile, average the models whose estimated error on the tile centroid is within ``threshold``."""
    grid = _history_grid(history)
    result = PredictionGrid(region, ptime)
    report = ExecutionReport(nts=ptime)
    t_start = time.perf_counter()
    for t in tiles:
        centroid = t.centroid if t.centroid is not None else medoid(grid, t.region)
        survivors = filter_models(model_ids, registry, centroid, threshold)
        if not survivors:
            raise BaselineError(f"no models survive on tile {t.id}")
        t0 = time.perf_counter()
        preds, sub = _member_runs(survivors, t.region, grid, ptime, registry)
        mean = np.mean([preds[m].astype(np.float64) for m in sorted(preds)], axis=0).astype(np.float32)
        result.write(t.region, mean, "+".join(sorted(survivors)))
        report.per_tile.append(
            {"tile": t.id, "models": sorted(survivors), "invocations": sub.total_invocations,
             "elapsed_s": time.perf_counter() - t0}
        )
        report.total_invocations += sub.total_invocations
    report.total_elapsed_s = time.perf_counter() - t_start
    return Execution(result, report)


@dataclass(frozen=True)
class StackingWeights:
    model_ids: tuple[str, ...]
    intercept: float
    coef: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.intercept) and np.all(np.isfinite(self.coef))):
            raise BaselineError("non-finite stacking weights")

    def apply(self, preds: list[np.ndarray]) -> np.ndarray:
        out = np.full(preds[0].shape, self.intercept)
        for b, p in zip(self.coef, preds):
            out += b * p.astype(np.float64)
        return out


def fit_stacking(model_ids, preds: list[np.ndarray], truth: np.ndarray, ridge: float = RIDGE) -> StackingWeights:
    """Least squares ``truth ~ b0 + sum(bm * pred_m)`` pooled over all cells and steps.

    A small ridge term keeps the normal equations solvable when member
    predictions are collinear or constant.
    """
    if len(preds) != len(model_ids) or not preds:
        raise BaselineError("need one prediction array per model")
    y = np.asarray(truth, dtype=np.float64).ravel()
    x = np.column_stack([np.ones_like(y)] + [np.asarray(p, dtype=np.float64).ravel() for p in preds])
    if x.shape[0] != y.shape[0]:
        raise BaselineError("prediction and truth sizes differ")
    gram = x.T @ x + ridge * np.eye(x.shape[1])
    beta = np.linalg.solve(gram, x.T @ y)
    return StackingWeights(tuple(model_ids), float(beta[0]), beta[1:])


def stacking_history(model_ids, region: Region, history, ptime: int, registry):
    """Member predictions for the last ``ptime`` steps of ``history`` and the matching truth.

    The fit window ends where the query window starts, so the two never overlap.
    """
    frames = history.frames() if isinstance(history, STGrid) else np.asarray(history)
    t_end = frames.shape[0] - ptime
    if t_end < 1:
        raise BaselineError("history too short for a stacking fit window")
    preds = []
    for mid in model_ids:
        out, _ = predict_region(registry.get(mid), registry.predictor(mid), frames, region, ptime, t_end=t_end)
        preds.append(out)
    rs, cs = region.slices
    return preds, frames[t_end:, rs, cs]


def run_stacking(weights: StackingWeights, region: Region, history, ptime: int, registry) -> Execution:
    preds, report = _member_runs(list(weights.model_ids), region, history, ptime, registry)
    out = weights.apply([preds[m] for m in weights.model_ids]).astype(np.float32)
    return Execution(PredictionGrid.from_frames(region, out, "stacking"), report)


def ensemble_invocations(model_ids, region: Region, ptime: int, registry) -> int:
    total = 0
    for mid in model_ids:
        rec = registry.get(mid)
        total += invocation_count(region, rec.frame) * math.ceil(ptime / rec.output_frames)
    return total
