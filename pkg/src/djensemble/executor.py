"""Plan execution: frame placement, autoregressive rollout and composition.

Histories are ``(t, lat, lon)`` frame stacks aligned with the domain, so
region coordinates index them directly. Cells a placement needs outside
the domain are filled by replicating the nearest border cell.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grid import Region, STGrid
from .registry import BackendError, ModelRecord, Predictor, RegistryError, predict


class ExecutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Placement:
    model_id: str
    instance: Region
    clip: Region


def placements(tile: Region, frame: tuple[int, int], model_id: str = "") -> list[Placement]:
    """Frame-sized instances laid out from the tile's top-left corner.

    Instances reaching past the tile keep their position and are clipped,
    so they never overlap each other.
    """
    h, w = frame
    if h < 1 or w < 1:
        raise ValueError(f"frame dims must be >= 1, got {frame}")
    out = []
    for i in range(math.ceil(tile.height / h)):
        for j in range(math.ceil(tile.width / w)):
            inst = Region((tile.start[0] + i * h, tile.start[1] + j * w), h, w)
            out.append(Placement(model_id, inst, inst.intersect(tile)))
    return out


def as_frames(history: STGrid | np.ndarray) -> np.ndarray:
    return history.frames() if isinstance(history, STGrid) else np.asarray(history, dtype=np.float32)


def gather_input(frames: np.ndarray, instance: Region, n: int, t_end: int | None = None) -> np.ndarray:
    """``n`` frames ending at ``t_end`` over ``instance``, replicate-padded in space and time."""
    t_total, nrow, ncol = frames.shape
    t_end = t_total if t_end is None else t_end
    ts = np.clip(np.arange(t_end - n, t_end), 0, t_total - 1)
    rows = np.clip(np.arange(instance.start[0], instance.stop[0]), 0, nrow - 1)
    cols = np.clip(np.arange(instance.start[1], instance.stop[1]), 0, ncol - 1)
    return np.ascontiguousarray(frames[np.ix_(ts, rows, cols)])


def rollout(record: ModelRecord, predictor: Predictor, inputs: np.ndarray, ptime: int) -> tuple[np.ndarray, int]:
    """Produce ``ptime`` frames, feeding outputs back as inputs when ``ptime > K``.

    Returns the frames and the number of predictor invocations.
    """
    window = inputs
    produced = []
    calls = 0
    while sum(len(p) for p in produced) < ptime:
        out = predict(record, predictor, window).frames
        calls += 1
        produced.append(out)
        window = np.concatenate([window, out])[-record.input_frames :]
    return np.concatenate(produced)[:ptime], calls


def predict_region(
    record: ModelRecord,
    predictor: Predictor,
    history: STGrid | np.ndarray,
    region: Region,
    ptime: int,
    t_end: int | None = None,
) -> tuple[np.ndarray, int]:
    """Cover ``region`` with one model; returns ``(ptime, h, w)`` and invocation count."""
    frames = as_frames(history)
    out = np.empty((ptime, region.height, region.width), dtype=np.float32)
    calls = 0
    for pl in placements(region, record.frame, record.id):
        inputs = gather_input(frames, pl.instance, record.input_frames, t_end)
        pred, n = rollout(record, predictor, inputs, ptime)
        calls += n
        _paste(out, region, pl, pred)
    return out, calls


def _paste(out: np.ndarray, region: Region, pl: Placement, pred: np.ndarray) -> None:
    dst = pl.clip.shift(-region.start[0], -region.start[1])
    src = pl.clip.shift(-pl.instance.start[0], -pl.instance.start[1])
    out[:, dst.slices[0], dst.slices[1]] = pred[:, src.slices[0], src.slices[1]]


@dataclass
class PredictionGrid:
    """Query-region forecast, ``values`` in ``(lat, lon, time)`` order, plus per-cell model id."""

    region: Region
    ptime: int
    values: np.ndarray = None
    provenance: np.ndarray = None

    def __post_init__(self):
        if self.values is None:
            self.values = np.full((self.region.height, self.region.width, self.ptime), np.nan, dtype=np.float32)
        if self.provenance is None:
            self.provenance = np.full((self.region.height, self.region.width), "", dtype=object)

    def write(self, clip: Region, block: np.ndarray, model_id: str) -> None:
        """Write ``(ptime, h, w)`` frames for ``clip``; each cell may be written once."""
        if not self.region.contains(clip):
            raise ExecutionError(f"{clip} lies outside the query region {self.region}")
        if block.shape != (self.ptime, clip.height, clip.width):
            raise ExecutionError(f"block shape {block.shape} does not match {clip} x {self.ptime} steps")
        local = clip.shift(-self.region.start[0], -self.region.start[1])
        rs, cs = local.slices
        if (self.provenance[rs, cs] != "").any():
            raise ExecutionError(f"cells of {clip} written twice")
        self.values[rs, cs] = np.moveaxis(block, 0, 2)
        self.provenance[rs, cs] = model_id

    @property
    def complete(self) -> bool:
        return bool((self.provenance != "").all()) and bool(np.isfinite(self.values).all())

    def to_grid(self) -> STGrid:
        if not self.complete:
            raise ExecutionError("prediction grid has unwritten cells")
        return STGrid(self.values)

    @classmethod
    def from_frames(cls, region: Region, frames: np.ndarray, model_id: str) -> PredictionGrid:
        pg = cls(region, frames.shape[0])
        pg.write(region, frames, model_id)
        return pg


def rmse(pred, truth) -> float:
    """Root mean square error over all cells and steps."""
    p = _as_values(pred)
    t = _as_values(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    d = p.astype(np.float64) - t.astype(np.float64)
    return float(np.sqrt(np.mean(d * d)))


def _as_values(x) -> np.ndarray:
    if isinstance(x, (PredictionGrid, STGrid)):
        return x.values
    return np.asarray(x)


@dataclass
class ExecutionReport:
    per_tile: list[dict] = field(default_factory=list)
    total_elapsed_s: float = 0.0
    total_invocations: int = 0
    nts: int = 0
    failed: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed

    @property
    def et_s(self) -> float:
        """Mean wall time per invocation."""
        busy = sum(t["elapsed_s"] for t in self.per_tile)
        return busy / self.total_invocations if self.total_invocations else 0.0

    def to_dict(self) -> dict:
        return {
            "per_tile": self.per_tile,
            "total_elapsed_s": self.total_elapsed_s,
            "total_invocations": self.total_invocations,
            "ne": self.total_invocations,
            "et_s": self.et_s,
            "nts": self.nts,
            "failed": self.failed,
        }


@dataclass
class Execution:
    prediction: PredictionGrid
    report: ExecutionReport


def _run_tile(registry, tile, model_id, frames, ptime, t_end):
    record, pred = registry.get(model_id), registry.predictor(model_id)
    t0 = time.perf_counter()
    pieces = []
    calls = 0
    for pl in placements(tile.region, record.frame, model_id):
        inputs = gather_input(frames, pl.instance, record.input_frames, t_end)
        out, n = rollout(record, pred, inputs, ptime)
        calls += n
        pieces.append((pl, out))
    return pieces, calls, time.perf_counter() - t0


def execute_plan(plan, history: STGrid | np.ndarray, ptime: int, registry, workers: int = 1, truth=None,
                 t_end: int | None = None) -> Execution:
    """Run every assignment of ``plan`` and compose the query-wide forecast.

    ``truth`` (``(lat, lon, ptime)`` over the query region) adds per-tile RMSE
    to the report. A failing tile is recorded in ``report.failed`` and its
    cells stay unwritten.
    """
    frames = as_frames(history)
    region = plan.region
    result = PredictionGrid(region, ptime)
    report = ExecutionReport(nts=ptime)
    truth_v = None if truth is None else _as_values(truth)
    start = time.perf_counter()

    def job(a):
        try:
            return a, _run_tile(registry, a.tile, a.model_id, frames, ptime, t_end), None
        except (BackendError, RegistryError) as exc:
            return a, None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, plan.assignments))
    else:
        results = [job(a) for a in plan.assignments]

    for a, res, err in results:
        if err is not None:
            report.failed.append({"tile": a.tile.id, "model": a.model_id, "error": err})
            continue
        pieces, calls, elapsed = res
        for pl, out in pieces:
            block = np.empty((ptime, pl.clip.height, pl.clip.width), dtype=np.float32)
            _paste(block, pl.clip, pl, out)
            result.write(pl.clip, block, a.model_id)
        entry = {"tile": a.tile.id, "model": a.model_id, "invocations": calls, "elapsed_s": elapsed}
        if truth_v is not None:
            local = a.tile.region.shift(-region.start[0], -region.start[1])
            rs, cs = local.slices
            entry["rmse"] = rmse(result.values[rs, cs], truth_v[rs, cs])
        report.per_tile.append(entry)
        report.total_invocations += calls
    report.total_elapsed_s = time.perf_counter() - start
    return Execution(result, report)


def truth_frames(grid: STGrid, region: Region, t_start: int, ptime: int) -> np.ndarray:
    """``(lat, lon, ptime)`` truth block of ``region`` starting at ``t_start``."""
    return grid.slice(region, t_start, ptime).values

