"""Aligned non-regular tiling of a clustered domain and tile medoids."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .clustering import ClusterMap
from .distance import pairwise_dtw
from .grid import Region, STGrid, load_grid, write_grid


@dataclass(frozen=True)
class Tile:
    id: int
    region: Region
    cid: int
    centroid: np.ndarray | None = field(default=None, compare=False, repr=False)

    def with_centroid(self, centroid: np.ndarray) -> Tile:
        return replace(self, centroid=np.asarray(centroid, dtype=np.float64))


@dataclass
class TileSet:
    tiles: list[Tile]
    extent: Region
    time_count: int | None = None

    def __iter__(self):
        return iter(self.tiles)

    def __len__(self) -> int:
        return len(self.tiles)

    def by_id(self, tile_id: int) -> Tile:
        for t in self.tiles:
            if t.id == tile_id:
                return t
        raise KeyError(tile_id)

    def label_map(self) -> np.ndarray:
        """Tile id per cell of the extent, -1 where uncovered."""
        out = np.full((self.extent.height, self.extent.width), -1, dtype=np.int64)
        for t in self.tiles:
            rs, cs = t.region.shift(-self.extent.start[0], -self.extent.start[1]).slices
            out[rs, cs] = t.id
        return out

    def save(self, json_path: str | Path, centroid_path: str | Path | None = None) -> None:
        doc = {
            "extent": self.extent.to_dict(),
            "time_count": self.time_count,
            "tiles": [{"id": t.id, **t.region.to_dict(), "cid": t.cid} for t in self.tiles],
        }
        Path(json_path).write_text(json.dumps(doc, indent=2))
        if centroid_path is not None and self.tiles and all(t.centroid is not None for t in self.tiles):
            stacked = np.stack([t.centroid for t in self.tiles])[:, None, :]
            write_grid(STGrid(stacked), centroid_path)

    @classmethod
    def load(cls, json_path: str | Path, centroid_path: str | Path | None = None) -> TileSet:
        doc = json.loads(Path(json_path).read_text())
        tiles = [Tile(int(d["id"]), Region.from_dict(d), int(d["cid"])) for d in doc["tiles"]]
        if centroid_path is not None and Path(centroid_path).exists():
            cents = load_grid(centroid_path).values[:, 0, :]
            tiles = [t.with_centroid(c) for t, c in zip(tiles, cents)]
        return cls(tiles, Region.from_dict(doc["extent"]), doc.get("time_count"))


def tile_domain(clusters: ClusterMap | np.ndarray) -> TileSet:
    """Cover the label field with monochromatic rectangles.

    Cells are scanned row-major from (0, 0). Each untiled cell starts a tile
    that grows right while the cid matches, then down while the whole row
    segment matches and is untiled.
    """
    labels = clusters.labels if isinstance(clusters, ClusterMap) else np.asarray(clusters)
    nrow, ncol = labels.shape
    taken = np.zeros(labels.shape, dtype=bool)
    tiles = []
    for r in range(nrow):
        for c in range(ncol):
            if taken[r, c]:
                continue
            cid = labels[r, c]
            w = 1
            while c + w < ncol and not taken[r, c + w] and labels[r, c + w] == cid:
                w += 1
            h = 1
            while (
                r + h < nrow
                and not taken[r + h, c : c + w].any()
                and (labels[r + h, c : c + w] == cid).all()
            ):
                h += 1
            taken[r : r + h, c : c + w] = True
            tiles.append(Tile(len(tiles), Region((r, c), h, w), int(cid)))
    return TileSet(tiles, Region((0, 0), nrow, ncol))


def _euclidean_sums(series: np.ndarray, chunk: int = 256) -> np.ndarray:
    sq = (series * series).sum(axis=1)
    sums = np.zeros(len(series))
    for lo in range(0, len(series), chunk):
        block = series[lo : lo + chunk]
        d2 = (block * block).sum(axis=1)[:, None] + sq[None, :] - 2.0 * block @ series.T
        sums[lo : lo + chunk] = np.sqrt(np.maximum(d2, 0.0)).sum(axis=1)
    return sums


def medoid_index(series: np.ndarray, metric: str = "euclidean") -> int:
    """Index of the row minimizing summed distance to all other rows.

    Ties go to the lowest index.
    """
    series = np.asarray(series, dtype=np.float64)
    if len(series) == 0:
        raise ValueError("empty tile")
    if len(series) == 1:
        return 0
    if metric == "euclidean":
        # exact pairwise differences; the Gram expansion can misorder near-ties
        if len(series) <= 512:
            diff = series[:, None, :] - series[None, :, :]
            sums = np.sqrt((diff * diff).sum(axis=2)).sum(axis=1)
        else:
            sums = _euclidean_sums(series)
    elif metric == "dtw":
        sums = pairwise_dtw(series).sum(axis=1)
    else:
        raise ValueError(f"unknown medoid metric {metric!r}")
    return int(np.argmin(sums))


def medoid(grid: STGrid, tile: Tile | Region, metric: str = "euclidean") -> np.ndarray:
    """The member series closest (summed distance) to all others in the tile."""
    region = tile.region if isinstance(tile, Tile) else tile
    rs, cs = region.slices
    block = grid.values[rs, cs].reshape(region.area, -1)
    return block[medoid_index(block, metric)].astype(np.float64)


def build_tileset(grid: STGrid, clusters: ClusterMap, metric: str = "euclidean") -> TileSet:
    ts = tile_domain(clusters)
    ts.tiles = [t.with_centroid(medoid(grid, t, metric)) for t in ts.tiles]
    ts.time_count = grid.time_count
    return ts
