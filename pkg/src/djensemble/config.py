"""Run configuration: JSON file values over built-in defaults."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

STORE_ENV = "DJE_STORE"
DEFAULT_STORE = "dje_store"


@dataclass(frozen=True)
class Config:
    seed: int = 0
    d_max: int = 5
    min_gain: float = 0.01
    outlier_k: float = 1.5
    dtw_band: int | None = None
    timeout: float = 30.0
    normalization: str = "tile"
    workers: int = 1

    @classmethod
    def load(cls, path: str | Path | None = None) -> Config:
        if path is None:
            return cls()
        doc = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def store_root(explicit: str | None = None) -> Path:
    return Path(explicit or os.environ.get(STORE_ENV) or DEFAULT_STORE)
