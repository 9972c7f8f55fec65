"""Model registry: black-box predictor handles, their metadata and backends.

A predictor maps ``n`` input frames of shape ``(h, w)`` to ``K`` output
frames of the same shape. Builtin predictors run in-process; subprocess
predictors speak the framing in :mod:`djensemble.wire` over stdio.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from . import wire
from .grid import Region, STGrid
from .tiling import medoid

DEFAULT_TIMEOUT = 30.0


class RegistryError(ValueError):
    pass


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class FrameBatch:
    """``count`` frames of identical ``(h, w)`` shape, stored as ``(count, h, w)``."""

    frames: np.ndarray

    def __post_init__(self):
        arr = np.array(self.frames, dtype=np.float32, copy=True)
        if arr.ndim != 3 or 0 in arr.shape:
            raise RegistryError(f"frame batch must be a non-empty (count, h, w) array, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise RegistryError("frame batch contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "frames", arr)

    @property
    def count(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


class Predictor(Protocol):
    def predict(self, frames: np.ndarray) -> np.ndarray: ...

    def close(self) -> None: ...


@dataclass
class ModelRecord:
    id: str
    dataset_ref: str
    training_region: Region
    frame: tuple[int, int]
    input_frames: int
    output_frames: int
    backend: str
    t0: int = 0
    t_len: int | None = None
    params: dict = field(default_factory=dict)
    learning_curve: object | None = None
    unitary_cost: float | None = None
    training_centroid: np.ndarray | None = field(default=None, repr=False)
    state: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.frame = (int(self.frame[0]), int(self.frame[1]))
        if min(self.frame) < 1 or self.input_frames < 1 or self.output_frames < 1:
            raise RegistryError(f"model {self.id!r}: frame dims and frame counts must be >= 1")

    @property
    def eligible(self) -> bool:
        return self.learning_curve is not None and self.unitary_cost is not None and self.training_centroid is not None

    def to_manifest(self) -> dict:
        doc = {
            "id": self.id,
            "dataset_ref": self.dataset_ref,
            "training_region": {**self.training_region.to_dict(), "t0": self.t0, "t_len": self.t_len},
            "frame": list(self.frame),
            "input_frames": self.input_frames,
            "output_frames": self.output_frames,
            "backend": self.backend,
        }
        if self.params:
            doc["params"] = self.params
        if self.state:
            doc["state"] = self.state
        if self.learning_curve is not None:
            doc["curve"] = self.learning_curve.to_dict()
        if self.unitary_cost is not None:
            doc["unitary_cost"] = self.unitary_cost
        if self.training_centroid is not None:
            doc["training_centroid"] = [float(v) for v in self.training_centroid]
        return doc

    @classmethod
    def from_manifest(cls, doc: dict) -> ModelRecord:
        from .curve import LearningCurve

        tr = doc["training_region"]
        centroid = doc.get("training_centroid")
        curve = doc.get("curve")
        return cls(
            id=str(doc["id"]),
            dataset_ref=str(doc.get("dataset_ref", "")),
            training_region=Region.from_dict(tr),
            frame=tuple(doc["frame"]),
            input_frames=int(doc["input_frames"]),
            output_frames=int(doc["output_frames"]),
            backend=str(doc["backend"]),
            t0=int(tr.get("t0", 0)),
            t_len=tr.get("t_len"),
            params=dict(doc.get("params", {})),
            learning_curve=LearningCurve.from_dict(curve) if curve else None,
            unitary_cost=doc.get("unitary_cost"),
            training_centroid=None if centroid is None else np.asarray(centroid, dtype=np.float64),
            state=dict(doc.get("state", {})),
        )


# builtin predictors


def _pool_by_frame(values: np.ndarray, frame: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Map each training cell to frame cell ``(r % h, c % w)``; returns cell ids and series."""
    h, w = frame
    nrow, ncol, _ = values.shape
    rows, cols = np.meshgrid(np.arange(nrow), np.arange(ncol), indexing="ij")
    ids = ((rows % h) * w + cols % w).ravel()
    return ids, values.reshape(nrow * ncol, -1).astype(np.float64)


class Persistence:
    kind = "persistence"

    def __init__(self, k: int):
        self.k = k

    def predict(self, frames: np.ndarray) -> np.ndarray:
        return np.repeat(frames[-1:], self.k, axis=0)

    def close(self) -> None:
        pass


class WindowMean(Persistence):
    kind = "window-mean"

    def predict(self, frames: np.ndarray) -> np.ndarray:
        mean = frames.astype(np.float64).mean(axis=0, keepdims=True)
        return np.repeat(mean, self.k, axis=0).astype(np.float32)


class AR1(Persistence):
    """Per-cell ``x[t+1] = a + b * x[t]``, iterated K steps from the last frame."""

    kind = "ar1"

    def __init__(self, k: int, coef: np.ndarray):
        super().__init__(k)
        self.coef = np.asarray(coef, dtype=np.float64)

    @classmethod
    def fit(cls, k: int, training: np.ndarray, frame: tuple[int, int]) -> AR1:
        ids, series = _pool_by_frame(training, frame)
        coef = np.zeros((2, frame[0] * frame[1]))
        for cell in range(frame[0] * frame[1]):
            s = series[ids == cell]
            x = s[:, :-1].ravel()
            y = s[:, 1:].ravel()
            if x.size == 0:
                coef[:, cell] = (0.0, 1.0)
                continue
            design = np.column_stack([np.ones_like(x), x])
            coef[:, cell] = np.linalg.lstsq(design, y, rcond=None)[0]
        return cls(k, coef.reshape(2, *frame))

    def state(self) -> dict:
        return {"coef": self.coef.tolist()}

    def predict(self, frames: np.ndarray) -> np.ndarray:
        a, b = self.coef
        x = frames[-1].astype(np.float64)
        out = np.empty((self.k, *x.shape))
        for i in range(self.k):
            x = a + b * x
            out[i] = x
        return out.astype(np.float32)


class Climatology(Persistence):
    """Training-period mean per frame cell plus a fixed bias; ignores its input."""

    kind = "oracle-noise"

    def __init__(self, k: int, clim: np.ndarray, bias: float = 0.0):
        super().__init__(k)
        self.clim = np.asarray(clim, dtype=np.float64)
        self.bias = float(bias)

    @classmethod
    def fit(cls, k: int, training: np.ndarray, frame: tuple[int, int], bias: float = 0.0) -> Climatology:
        ids, series = _pool_by_frame(training, frame)
        sums = np.bincount(ids, weights=series.mean(axis=1), minlength=frame[0] * frame[1])
        counts = np.bincount(ids, minlength=frame[0] * frame[1])
        clim = np.where(counts > 0, sums / np.maximum(counts, 1), series.mean())
        return cls(k, clim.reshape(frame), bias)

    def state(self) -> dict:
        return {"clim": self.clim.tolist(), "bias": self.bias}

    def predict(self, frames: np.ndarray) -> np.ndarray:
        if frames.shape[1:] != self.clim.shape:
            raise BackendError(f"frame shape {frames.shape[1:]} != climatology shape {self.clim.shape}")
        out = np.broadcast_to(self.clim + self.bias, (self.k, *self.clim.shape))
        return out.astype(np.float32)


BUILTIN_KINDS = ("persistence", "window-mean", "ar1", "oracle-noise")


class CallablePredictor:
    """Wrap an in-process function ``frames -> frames``."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn

    def predict(self, frames: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(frames), dtype=np.float32)

    def close(self) -> None:
        pass


class SubprocessPredictor:
    """Long-lived child process answering one request at a time over stdio.

    The child is started lazily and restarted after a timeout or protocol
    violation. Closing stdin asks it to exit.
    """

    def __init__(self, argv: list[str], timeout: float = DEFAULT_TIMEOUT):
        self.argv = argv
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL
                )
            except OSError as exc:
                raise BackendError(f"backend unresolvable: {exc}") from exc
        return self._proc

    def _kill(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            for stream in (self._proc.stdin, self._proc.stdout):
                if stream:
                    stream.close()
            self._proc = None

    def _read_exact(self, fd: int, n: int, deadline: float) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            left = deadline - time.monotonic()
            if left <= 0:
                raise BackendError(f"timeout after {self.timeout}s")
            ready, _, _ = select.select([fd], [], [], left)
            if not ready:
                raise BackendError(f"timeout after {self.timeout}s")
            chunk = os.read(fd, n - len(buf))
            if not chunk:
                code = self._proc.wait()
                raise BackendError(f"predictor exited with code {code}")
            buf += chunk
        return bytes(buf)

    def predict(self, frames: np.ndarray) -> np.ndarray:
        with self._lock:
            proc = self._ensure()
            deadline = time.monotonic() + self.timeout
            try:
                proc.stdin.write(wire.encode(frames))
                proc.stdin.flush()
                fd = proc.stdout.fileno()
                count, h, w = wire.parse_header(self._read_exact(fd, wire.HEADER.size, deadline))
                body = self._read_exact(fd, wire.payload_size(count, h, w), deadline)
                return wire.decode_payload(body, count, h, w)
            except wire.ProtocolError as exc:
                self._kill()
                raise BackendError(f"protocol violation: {exc}") from exc
            except BrokenPipeError as exc:
                self._kill()
                raise BackendError("predictor closed its input") from exc
            except BackendError:
                self._kill()
                raise

    def close(self) -> None:
        with self._lock:
            if self._proc is None:
                return
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (subprocess.TimeoutExpired, BrokenPipeError):
                self._proc.kill()
                self._proc.wait()
            self._proc.stdout.close()
            self._proc = None


def resolve_backend(record: ModelRecord, training: np.ndarray | None = None, timeout: float = DEFAULT_TIMEOUT):
    """Build the predictor behind ``record.backend``.

    Builtins with learned state are fitted from ``training`` (lat, lon, time)
    or restored from ``record.state``.
    """
    scheme, _, target = record.backend.partition(":")
    k = record.output_frames
    if scheme == "builtin":
        if target == "persistence":
            return Persistence(k)
        if target == "window-mean":
            return WindowMean(k)
        if target == "ar1":
            if "coef" in record.state:
                return AR1(k, np.asarray(record.state["coef"]))
            if training is None:
                raise RegistryError("ar1 needs training data")
            return AR1.fit(k, training, record.frame)
        if target == "oracle-noise":
            bias = float(record.params.get("bias", 0.0))
            if "clim" in record.state:
                return Climatology(k, np.asarray(record.state["clim"]), bias)
            if training is None:
                raise RegistryError("oracle-noise needs training data")
            return Climatology.fit(k, training, record.frame, bias)
        raise RegistryError(f"backend unresolvable: unknown builtin {target!r}")
    if scheme == "subprocess":
        argv = shlex.split(target)
        if not argv:
            raise RegistryError("backend unresolvable: empty command")
        exe = argv[0]
        path = shutil.which(exe) if os.sep not in exe else (exe if os.access(exe, os.X_OK) else None)
        if path is None or not os.path.isfile(path):
            raise RegistryError(f"backend unresolvable: {exe!r} is not executable")
        return SubprocessPredictor([path, *argv[1:]], timeout=float(record.params.get("timeout", timeout)))
    raise RegistryError(f"backend unresolvable: {record.backend!r}")


class Registry:
    """Thread-safe id -> (record, predictor) map."""

    def __init__(self):
        self._records: dict[str, ModelRecord] = {}
        self._predictors: dict[str, Predictor] = {}
        self._lock = threading.RLock()

    def add(self, record: ModelRecord, predictor: Predictor) -> ModelRecord:
        with self._lock:
            if record.id in self._records:
                raise RegistryError(f"duplicate id {record.id!r}")
            self._records[record.id] = record
            self._predictors[record.id] = predictor
        return record

    def get(self, model_id: str) -> ModelRecord:
        with self._lock:
            try:
                return self._records[model_id]
            except KeyError:
                raise RegistryError(f"unknown model {model_id!r}") from None

    def predictor(self, model_id: str) -> Predictor:
        with self._lock:
            return self._predictors[model_id]

    def update(self, model_id: str, **fields) -> ModelRecord:
        with self._lock:
            rec = self.get(model_id)
            for name, value in fields.items():
                setattr(rec, name, value)
            return rec

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self._records)

    def records(self) -> list[ModelRecord]:
        with self._lock:
            return [self._records[i] for i in sorted(self._records)]

    def eligible(self) -> list[ModelRecord]:
        return [r for r in self.records() if r.eligible]

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, model_id: str) -> bool:
        return model_id in self._records

    def predict(self, model_id: str, batch: FrameBatch | np.ndarray) -> FrameBatch:
        return predict(self.get(model_id), self.predictor(model_id), batch)

    def close(self) -> None:
        with self._lock:
            for p in self._predictors.values():
                p.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _training_block(record: ModelRecord, grid: STGrid) -> np.ndarray:
    if not grid.extent.contains(record.training_region):
        raise RegistryError(f"training region {record.training_region} outside training grid {grid.extent}")
    t_len = grid.time_count - record.t0 if record.t_len is None else record.t_len
    if record.t0 < 0 or t_len < 1 or record.t0 + t_len > grid.time_count:
        raise RegistryError(f"training time range [{record.t0}, {record.t0 + t_len}) outside grid")
    record.t_len = t_len
    return grid.slice(record.training_region, record.t0, t_len).values


def register_model(
    manifest: dict | ModelRecord,
    training_grid: STGrid,
    registry: Registry,
    predictor: Predictor | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> ModelRecord:
    """Resolve the backend, compute the training centroid and store the model."""
    record = manifest if isinstance(manifest, ModelRecord) else ModelRecord.from_manifest(manifest)
    if record.id in registry:
        raise RegistryError(f"duplicate id {record.id!r}")
    block = _training_block(record, training_grid)
    if predictor is None:
        predictor = resolve_backend(record, block, timeout)
        if hasattr(predictor, "state"):
            record.state = predictor.state()
    local = STGrid(block)
    record.training_centroid = medoid(local, local.extent)
    return registry.add(record, predictor)


def predict(record: ModelRecord, predictor: Predictor, batch: FrameBatch | np.ndarray) -> FrameBatch:
    """Validated call into a predictor."""
    frames = batch.frames if isinstance(batch, FrameBatch) else np.asarray(batch, dtype=np.float32)
    if frames.ndim != 3 or frames.shape[1:] != record.frame:
        raise RegistryError(f"model {record.id!r} expects frames {record.frame}, got {frames.shape[1:]}")
    if frames.shape[0] != record.input_frames:
        raise RegistryError(f"model {record.id!r} expects {record.input_frames} input frames, got {frames.shape[0]}")
    out = predictor.predict(np.ascontiguousarray(frames, dtype=np.float32))
    out = np.asarray(out, dtype=np.float32)
    if out.shape != (record.output_frames, *record.frame):
        raise BackendError(
            f"model {record.id!r} returned shape {out.shape}, expected {(record.output_frames, *record.frame)}"
        )
    if not np.all(np.isfinite(out)):
        raise BackendError(f"model {record.id!r} returned non-finite values")
    return FrameBatch(out)


def measure_unitary_cost(
    registry: Registry, model_id: str, sample: FrameBatch, warmup: int = 2, runs: int = 10
) -> float:
    """Mean wall time of ``runs`` predict calls after ``warmup`` discarded ones."""
    record, pred = registry.get(model_id), registry.predictor(model_id)
    for _ in range(warmup):
        predict(record, pred, sample)
    elapsed = []
    for _ in range(runs):
        t0 = time.perf_counter()
        predict(record, pred, sample)
        elapsed.append(time.perf_counter() - t0)
    uc = max(float(np.mean(elapsed)), 1e-9)
    registry.update(model_id, unitary_cost=uc)
    return uc


def save_manifest(record: ModelRecord, path: str | Path) -> None:
    Path(path).write_text(json.dumps(record.to_manifest(), indent=2))


def load_manifest(path: str | Path) -> ModelRecord:
    return ModelRecord.from_manifest(json.loads(Path(path).read_text()))
