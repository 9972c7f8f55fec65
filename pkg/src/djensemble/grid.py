"""Spatio-temporal grids: storage, slicing, file formats and synthetic generation.

Values are held in ``(lat, lon, time)`` order so that the time series of one
spatial point is contiguous in memory.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"STG1"
_HEADER = struct.Struct("<4sIIIddd")


class GridError(ValueError):
    """Raised for malformed grid files or invalid grid operations."""


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle of grid cells, ``start`` is ``(lat, lon)``."""

    start: tuple[int, int]
    height: int
    width: int

    def __post_init__(self):
        object.__setattr__(self, "start", (int(self.start[0]), int(self.start[1])))
        if self.height < 1 or self.width < 1:
            raise GridError(f"region extent must be >= 1, got {self.height}x{self.width}")

    @property
    def stop(self) -> tuple[int, int]:
        return self.start[0] + self.height, self.start[1] + self.width

    @property
    def area(self) -> int:
        return self.height * self.width

    @property
    def slices(self) -> tuple[slice, slice]:
        (r0, c0), (r1, c1) = self.start, self.stop
        return slice(r0, r1), slice(c0, c1)

    def contains(self, other: Region) -> bool:
        return (
            self.start[0] <= other.start[0]
            and self.start[1] <= other.start[1]
            and other.stop[0] <= self.stop[0]
            and other.stop[1] <= self.stop[1]
        )

    def intersect(self, other: Region) -> Region | None:
        r0 = max(self.start[0], other.start[0])
        c0 = max(self.start[1], other.start[1])
        r1 = min(self.stop[0], other.stop[0])
        c1 = min(self.stop[1], other.stop[1])
        if r1 <= r0 or c1 <= c0:
            return None
        return Region((r0, c0), r1 - r0, c1 - c0)

    def shift(self, dlat: int, dlon: int) -> Region:
        return Region((self.start[0] + dlat, self.start[1] + dlon), self.height, self.width)

    def cells(self) -> Iterable[tuple[int, int]]:
        for r in range(self.start[0], self.stop[0]):
            for c in range(self.start[1], self.stop[1]):
                yield r, c

    def to_dict(self) -> dict:
        return {"start": list(self.start), "height": self.height, "width": self.width}

    @classmethod
    def from_dict(cls, d: dict) -> Region:
        return cls(tuple(d["start"]), int(d["height"]), int(d["width"]))

    @classmethod
    def parse(cls, text: str) -> Region:
        """Parse ``"lat0,lon0,h,w"``."""
        try:
            lat0, lon0, h, w = (int(x) for x in text.split(","))
        except ValueError as exc:
            raise GridError(f"region must be 'lat0,lon0,h,w', got {text!r}") from exc
        return cls((lat0, lon0), h, w)


@dataclass(frozen=True)
class STGrid:
    """Dense lat x lon x time grid of float32 observations.

    The array is stored read-only; every operation that changes values
    returns a new grid.
    """

    values: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)
    cell_size: float = 1.0
    units: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32, copy=True, order="C")
        if values.ndim != 3 or 0 in values.shape:
            raise GridError(f"grid values must be a non-empty 3D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("grid contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def lat_count(self) -> int:
        return self.values.shape[0]

    @property
    def lon_count(self) -> int:
        return self.values.shape[1]

    @property
    def time_count(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def extent(self) -> Region:
        return Region((0, 0), self.lat_count, self.lon_count)

    def series(self, lat: int, lon: int) -> np.ndarray:
        return self.values[lat, lon]

    def frames(self, t_start: int = 0, t_len: int | None = None) -> np.ndarray:
        """Return a ``(t, lat, lon)`` copy, the layout predictors consume."""
        t_len = self.time_count - t_start if t_len is None else t_len
        return np.ascontiguousarray(np.moveaxis(self.values[:, :, t_start : t_start + t_len], 2, 0))

    def slice(self, region: Region, t_start: int = 0, t_len: int | None = None) -> STGrid:
        return slice_grid(self, region, t_start, t_len)

    def __eq__(self, other):
        if not isinstance(other, STGrid):
            return NotImplemented
        return (
            self.origin == other.origin
            and self.cell_size == other.cell_size
            and self.shape == other.shape
            and bool(np.array_equal(self.values, other.values))
        )

    __hash__ = None


@dataclass(frozen=True)
class Query:
    """A predictive query: forecast ``ptime`` steps of ``variable`` over ``region``.

    ``input`` holds the observed history restricted to ``region``.
    """

    region: Region
    ptime: int
    input: STGrid
    variable: str = "value"
    metric: str = "rmse"
    mu_e: float = 0.0

    def __post_init__(self):
        if self.ptime < 1:
            raise GridError(f"ptime must be >= 1, got {self.ptime}")
        if (self.input.lat_count, self.input.lon_count) != (self.region.height, self.region.width):
            raise GridError("query input extent does not match query region")
        if not 0.0 <= self.mu_e <= 1.0:
            raise GridError(f"mu_e must lie in [0, 1], got {self.mu_e}")


def from_frames(frames: np.ndarray, **kwargs) -> STGrid:
    """Build a grid from a ``(t, lat, lon)`` array."""
    return STGrid(np.moveaxis(np.asarray(frames), 0, 2), **kwargs)


def slice_grid(grid: STGrid, region: Region, t_start: int = 0, t_len: int | None = None) -> STGrid:
    """Copy out ``region`` x ``[t_start, t_start + t_len)`` of ``grid``."""
    if t_len is None:
        t_len = grid.time_count - t_start
    if not grid.extent.contains(region):
        raise GridError(f"region {region} outside grid extent {grid.extent}")
    if t_start < 0 or t_len < 1 or t_start + t_len > grid.time_count:
        raise GridError(f"time range [{t_start}, {t_start + t_len}) outside [0, {grid.time_count})")
    rs, cs = region.slices
    origin = (
        grid.origin[0] + region.start[0] * grid.cell_size,
        grid.origin[1] + region.start[1] * grid.cell_size,
    )
    return STGrid(
        grid.values[rs, cs, t_start : t_start + t_len],
        origin=origin,
        cell_size=grid.cell_size,
        units=grid.units,
    )


# --------------------------------------------------------------------------- io


def _interpolate_missing(values: np.ndarray) -> np.ndarray:
    out = values.astype(np.float64)
    t = np.arange(out.shape[2])
    for r, c in zip(*np.nonzero(~np.all(np.isfinite(out), axis=2))):
        s = out[r, c]
        ok = np.isfinite(s)
        if not ok.any():
            raise GridError(f"series at ({r}, {c}) has no finite values to interpolate from")
        out[r, c] = np.interp(t, t[ok], s[ok])
    return out


def _apply_missing_policy(values: np.ndarray, missing: str) -> np.ndarray:
    if np.all(np.isfinite(values)):
        return values
    if missing == "reject":
        raise GridError("non-finite values in grid payload")
    if missing == "interpolate":
        return _interpolate_missing(values)
    raise GridError(f"unknown missing-value policy {missing!r}")


def read_stg1(data: bytes, missing: str = "reject") -> STGrid:
    if len(data) < _HEADER.size:
        raise GridError("malformed header: file shorter than STG1 header")
    magic, nlat, nlon, nt, lat0, lon0, cell = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise GridError(f"malformed header: bad magic {magic!r}")
    if min(nlat, nlon, nt) < 1:
        raise GridError("malformed header: zero dimension")
    expected = nlat * nlon * nt * 4
    payload = data[_HEADER.size :]
    if len(payload) != expected:
        raise GridError(f"payload size mismatch: header implies {expected} bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4").reshape(nlat, nlon, nt)
    return STGrid(_apply_missing_policy(values, missing), origin=(lat0, lon0), cell_size=cell)


def to_stg1(grid: STGrid) -> bytes:
    header = _HEADER.pack(MAGIC, grid.lat_count, grid.lon_count, grid.time_count, *grid.origin, grid.cell_size)
    return header + grid.values.astype("<f4").tobytes(order="C")


def read_csv(path: str | Path, missing: str = "reject") -> STGrid:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["lat", "lon", "t", "value"]:
            raise GridError(f"malformed header: expected 'lat,lon,t,value', got {header!r}")
        rows = [row for row in reader if row]
    if not rows:
        raise GridError("csv grid has no rows")
    try:
        idx = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows])
        vals = np.array([float(r[3]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise GridError(f"malformed csv row: {exc}") from exc
    if idx.min() < 0:
        raise GridError("negative grid index in csv")
    shape = tuple(int(x) + 1 for x in idx.max(axis=0))
    if len(rows) != shape[0] * shape[1] * shape[2]:
        raise GridError(f"payload size mismatch: {len(rows)} rows for dims {shape}")
    values = np.full(shape, np.nan)
    seen = np.zeros(shape, dtype=bool)
    seen[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    if not seen.all():
        raise GridError("csv grid has duplicate or missing cells")
    values[idx[:, 0], idx[:, 1], idx[:, 2]] = vals
    return STGrid(_apply_missing_policy(values, missing))


def write_csv(grid: STGrid, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lat", "lon", "t", "value"])
        for (r, c, t), v in np.ndenumerate(grid.values):
            w.writerow([r, c, t, repr(float(v))])


def _normalize_format(fmt: str) -> str:
    fmt = fmt.lower()
    if fmt in ("binary", "stg1"):
        return "stg1"
    if fmt == "csv":
        return "csv"
    raise GridError(f"unknown grid format {fmt!r}")


def load_grid(path: str | Path, format: str = "binary", missing: str = "reject") -> STGrid:
    """Load a grid from an STG1 binary or ``lat,lon,t,value`` CSV file.

    ``missing`` is ``"reject"`` (default) or ``"interpolate"`` for linear
    temporal interpolation of NaN cells.
    """
    if _normalize_format(format) == "csv":
        return read_csv(path, missing)
    return read_stg1(Path(path).read_bytes(), missing)


def write_grid(grid: STGrid, path: str | Path, format: str = "binary") -> None:
    if _normalize_format(format) == "csv":
        write_csv(grid, path)
    else:
        Path(path).write_bytes(to_stg1(grid))


# -------------------------------------------------------------------- synthetic


def check_partition(extent: Region, regions: Sequence[Region]) -> None:
    """Raise unless ``regions`` are pairwise disjoint and exactly cover ``extent``."""
    cover = np.zeros((extent.height, extent.width), dtype=np.int32)
    for reg in regions:
        if not extent.contains(reg):
            raise GridError(f"tile {reg} lies outside {extent}")
        rs, cs = reg.shift(-extent.start[0], -extent.start[1]).slices
        cover[rs, cs] += 1
    if (cover > 1).any():
        raise GridError("overlapping tiles")
    if (cover == 0).any():
        raise GridError("tiles do not cover the region")


def generate_synthetic(
    base: STGrid, tiles: Sequence[tuple[Region, float]], seed: int
) -> STGrid:
    """Add i.i.d. Gaussian noise with a per-tile sigma to every cell-timestep.

    Tiles must partition ``base``'s extent. Noise is drawn tile by tile in
    list order from one generator seeded with ``seed``.
    """
    check_partition(base.extent, [reg for reg, _ in tiles])
    rng = np.random.default_rng(seed)
    out = base.values.astype(np.float64)
    for reg, sigma in tiles:
        if sigma < 0:
            raise GridError(f"noise sigma must be >= 0, got {sigma}")
        if sigma == 0:
            continue
        rs, cs = reg.slices
        out[rs, cs, :] += rng.normal(0.0, sigma, size=(reg.height, reg.width, base.time_count))
    return STGrid(out, origin=base.origin, cell_size=base.cell_size, units=base.units)


def parse_tile_spec(text: str) -> list[tuple[Region, float]]:
    """Parse ``"lat,lon,h,w,sigma;..."`` into (region, sigma) pairs."""
    tiles = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        fields = part.split(",")
        if len(fields) != 5:
            raise GridError(f"tile spec entry must be 'lat,lon,h,w,sigma', got {part!r}")
        lat, lon, h, w = (int(x) for x in fields[:4])
        tiles.append((Region((lat, lon), h, w), float(fields[4])))
    return tiles
