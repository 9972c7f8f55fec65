"""Synthetic four-tile benchmark with per-tile specialized predictors.

The domain is a 10 x 100 grid over 200 steps split into four rectangles,
each with its own level and noise intensity on top of a shared seasonal
signal. Each specialized predictor is a climatology model trained on data
resembling one rectangle; two more are trained on an average level and
carry a large positive or negative bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Region, STGrid, generate_synthetic
from .pipeline import Preprocessed, calibrate, default_sigmas, preprocess
from .registry import ModelRecord, Registry, register_model
from .tiling import Tile, TileSet, medoid

TILE_REGIONS = (
    Region((0, 0), 10, 40),
    Region((0, 40), 10, 30),
    Region((0, 70), 8, 30),
    Region((8, 70), 2, 30),
)
SIGMAS = (0.1, 0.25, 0.45, 0.75)
LEVELS = (20.0, 23.0, 26.0, 29.0)
FRAMES = ((10, 10), (10, 15), (8, 10), (5, 10))
AMPLITUDE = 2.0
PERIOD = 50
STEPS = 200
INPUT_FRAMES = 5
OUTPUT_FRAMES = 5
POOR_BIAS = 6.0


def seasonal_base(levels: np.ndarray, steps: int = STEPS) -> np.ndarray:
    """``levels[lat, lon] + A sin(2 pi t / P)`` as a ``(lat, lon, time)`` array."""
    t = np.arange(steps)
    return levels[:, :, None] + AMPLITUDE * np.sin(2 * np.pi * t / PERIOD)[None, None, :]


def domain_grid(seed: int = 0) -> STGrid:
    levels = np.zeros((10, 100))
    for reg, lvl in zip(TILE_REGIONS, LEVELS):
        rs, cs = reg.slices
        levels[rs, cs] = lvl
    base = STGrid(seasonal_base(levels))
    return generate_synthetic(base, list(zip(TILE_REGIONS, SIGMAS)), seed)


def training_grid(level: float, sigma: float, seed: int) -> STGrid:
    base = STGrid(seasonal_base(np.full((10, 10), level)))
    return generate_synthetic(base, [(base.extent, sigma)], seed)


@dataclass
class Scenario:
    grid: STGrid
    history: STGrid
    truth: np.ndarray
    region: Region
    ptime: int
    registry: Registry
    tiles: TileSet
    specialized: dict[int, str]
    poor: tuple[str, ...]
    pre: Preprocessed | None = None

    def close(self) -> None:
        self.registry.close()


def truth_tiles(history: STGrid) -> TileSet:
    tiles = [Tile(i, r, i).with_centroid(medoid(history, r)) for i, r in enumerate(TILE_REGIONS)]
    return TileSet(tiles, history.extent, history.time_count)


def four_tile_scenario(seed: int = 0, ptime: int = 10, tiling: str = "truth", curve_sigmas=None) -> Scenario:
    """Build the grid, register and calibrate six models, and tile the history.

    ``tiling="preprocess"`` derives tiles from features and clustering;
    ``"truth"`` uses the generating rectangles.
    """
    grid = domain_grid(seed)
    t_split = STEPS - ptime
    history = grid.slice(grid.extent, 0, t_split)
    truth = grid.values[:, :, t_split:]
    sigmas = default_sigmas() if curve_sigmas is None else curve_sigmas

    registry = Registry()
    specialized = {}
    models = [
        (f"spec{i}", LEVELS[i], SIGMAS[i], FRAMES[i], 0.0) for i in range(len(TILE_REGIONS))
    ] + [
        ("poor-hi", float(np.mean(LEVELS)), 0.3, (10, 20), POOR_BIAS),
        ("poor-lo", float(np.mean(LEVELS)), 0.3, (10, 20), -POOR_BIAS),
    ]
    for j, (mid, level, sigma, frame, bias) in enumerate(models):
        train = training_grid(level, sigma, seed + 100 + j)
        rec = ModelRecord(
            id=mid,
            dataset_ref=f"synthetic:{mid}",
            training_region=train.extent,
            frame=frame,
            input_frames=INPUT_FRAMES,
            output_frames=OUTPUT_FRAMES,
            backend="builtin:oracle-noise",
            params={"bias": bias},
        )
        register_model(rec, train, registry)
        calibrate(rec, registry, train, sigmas, seed + 200 + j)
        if mid.startswith("spec"):
            specialized[int(mid[4:])] = mid

    pre = None
    if tiling == "preprocess":
        pre = preprocess(history, seed=seed)
        tiles = pre.tiles
    elif tiling == "truth":
        tiles = truth_tiles(history)
    else:
        raise ValueError(f"unknown tiling {tiling!r}")
    return Scenario(grid, history, truth, grid.extent, ptime, registry, tiles, specialized,
                    ("poor-hi", "poor-lo"), pre)
