"""On-disk layout for datasets, preprocessing artifacts and model manifests.

::

    <root>/datasets/<id>.stg1
    <root>/preprocessed/<id>/{features.csv, clusters.csv, clusters.json, tiles.json, centroids.stg1, report.json}
    <root>/models/<model id>.json
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from .clustering import ClusterMap
from .gld import FeatureMap
from .grid import STGrid, load_grid, write_grid
from .registry import ModelRecord, Registry, load_manifest, resolve_backend, save_manifest
from .tiling import TileSet

_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


class StoreError(ValueError):
    pass


def _check_id(name: str) -> str:
    if not _ID.match(name):
        raise StoreError(f"invalid id {name!r}: use letters, digits, '.', '_' or '-'")
    return name


class Store:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _dir(self, *parts: str) -> Path:
        path = self.root.joinpath(*parts)
        path.mkdir(parents=True, exist_ok=True)
        return path

    # datasets

    def dataset_path(self, dataset_id: str) -> Path:
        return self.root / "datasets" / f"{_check_id(dataset_id)}.stg1"

    def put_dataset(self, dataset_id: str, grid: STGrid) -> Path:
        self._dir("datasets")
        path = self.dataset_path(dataset_id)
        write_grid(grid, path)
        return path

    def dataset(self, dataset_id: str) -> STGrid:
        path = self.dataset_path(dataset_id)
        if not path.exists():
            raise StoreError(f"unknown dataset {dataset_id!r}")
        return load_grid(path)

    # preprocessing artifacts

    def prep_dir(self, dataset_id: str) -> Path:
        return self._dir("preprocessed", _check_id(dataset_id))

    def put_preprocessed(self, dataset_id: str, features: FeatureMap, clusters: ClusterMap, tiles: TileSet,
                         report: dict) -> Path:
        d = self.prep_dir(dataset_id)
        features.to_csv(d / "features.csv")
        clusters.save(d / "clusters.csv", d / "clusters.json")
        tiles.save(d / "tiles.json", d / "centroids.stg1")
        (d / "report.json").write_text(json.dumps(report, indent=2))
        return d

    def tiles(self, dataset_id: str) -> TileSet:
        d = self.root / "preprocessed" / _check_id(dataset_id)
        if not (d / "tiles.json").exists():
            raise StoreError(f"dataset {dataset_id!r} has not been preprocessed")
        return TileSet.load(d / "tiles.json", d / "centroids.stg1")

    # models

    def model_path(self, model_id: str) -> Path:
        return self.root / "models" / f"{_check_id(model_id)}.json"

    def put_model(self, record: ModelRecord) -> Path:
        self._dir("models")
        path = self.model_path(record.id)
        save_manifest(record, path)
        return path

    def model_ids(self) -> list[str]:
        d = self.root / "models"
        return sorted(p.stem for p in d.glob("*.json")) if d.exists() else []

    def registry(self, timeout: float = 30.0) -> Registry:
        """Registry with every stored model, backends resolved from saved state."""
        reg = Registry()
        for mid in self.model_ids():
            rec = load_manifest(self.model_path(mid))
            training = None
            if rec.backend in ("builtin:ar1", "builtin:oracle-noise") and not rec.state:
                grid = self.dataset(rec.dataset_ref)
                training = grid.slice(rec.training_region, rec.t0, rec.t_len).values
            reg.add(rec, resolve_backend(rec, training, timeout))
        return reg
