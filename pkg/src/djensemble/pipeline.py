"""Offline phases glued together, with per-phase wall-clock accounting."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterMap, choose_k
from .curve import D_MAX, MIN_GAIN, LearningCurve, build_learning_curve, holdout_error
from .executor import gather_input
from .gld import FeatureMap, extract_features
from .grid import Region, STGrid
from .registry import FrameBatch, ModelRecord, Registry, measure_unitary_cost, register_model
from .tiling import TileSet, build_tileset


@dataclass
class Preprocessed:
    features: FeatureMap
    clusters: ClusterMap
    tiles: TileSet
    timings: dict = field(default_factory=dict)


def preprocess(
    grid: STGrid,
    seasonality: int = 1,
    k_min: int = 2,
    k_max: int = 10,
    seed: int = 0,
    medoid_metric: str = "euclidean",
) -> Preprocessed:
    """Features, clustering and tiling; timings sum to the reported total."""
    t0 = time.perf_counter()
    features = extract_features(grid, seasonality)
    t1 = time.perf_counter()
    k_max = min(k_max, grid.lat_count * grid.lon_count)
    clusters = choose_k(features, k_min, k_max, seed)
    t2 = time.perf_counter()
    tiles = build_tileset(grid, clusters, medoid_metric)
    t3 = time.perf_counter()
    timings = {"gld_s": t1 - t0, "clustering_s": t2 - t1, "tiling_s": t3 - t2, "total_s": t3 - t0}
    return Preprocessed(features, clusters, tiles, timings)


def sample_batch(record: ModelRecord, training: STGrid) -> FrameBatch:
    """First ``n`` frames over the top-left frame of the training region."""
    frames = training.frames()
    inst = Region(record.training_region.start, *record.frame)
    return FrameBatch(gather_input(frames, inst, record.input_frames, t_end=record.t0 + record.input_frames))


@dataclass
class Calibration:
    record: ModelRecord
    curve: LearningCurve
    timings: dict


def calibrate(
    record: ModelRecord,
    registry: Registry,
    training: STGrid,
    sigmas,
    seed: int = 0,
    eval_regions=None,
    d_max: int = D_MAX,
    min_gain: float = MIN_GAIN,
    measure: bool = True,
) -> Calibration:
    """Measure unitary cost and build the learning curve of a registered model.

    Without explicit ``eval_regions`` the clean training block is perturbed.
    """
    predictor = registry.predictor(record.id)
    block = training.slice(record.training_region, record.t0, record.t_len)
    if measure:
        measure_unitary_cost(registry, record.id, sample_batch(record, training))
    base = holdout_error(record, predictor, block)
    regions = [block] if eval_regions is None else eval_regions
    curve = build_learning_curve(record, predictor, regions, sigmas, seed, base, d_max=d_max, min_gain=min_gain)
    registry.update(record.id, learning_curve=curve)
    timings = dict(curve.timings)
    timings["total_s"] = sum(timings.values())
    return Calibration(record, curve, timings)


def register_and_calibrate(manifest, training: STGrid, registry: Registry, sigmas, seed: int = 0, predictor=None,
                           **kw) -> Calibration:
    record = register_model(manifest, training, registry, predictor)
    return calibrate(record, registry, training, sigmas, seed, **kw)


def default_sigmas(count: int = 20, lo: float = 0.05, hi: float = 0.5) -> list[float]:
    return [float(s) for s in np.linspace(lo, hi, count)]
