"""Distance kernels: dynamic time warping and feature-vector Euclidean distance."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

_ABS = 0
_SQUARED = 1
_LOCAL_COSTS = {"abs": _ABS, "squared": _SQUARED}


@dataclass(frozen=True)
class DtwResult:
    cost: float
    path: list[tuple[int, int]] | None = None


@numba.njit(cache=True)
def _dtw_matrix(a, b, local, window):
    n, m = a.shape[0], b.shape[0]
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        lo = 1
        hi = m
        if window >= 0:
            lo = max(1, i - window)
            hi = min(m, i + window)
        for j in range(lo, hi + 1):
            d = a[i - 1] - b[j - 1]
            c = d * d if local == 1 else abs(d)
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = best + c
    return acc


@numba.njit(cache=True)
def _dtw_cost(a, b, local, window):
    # two-row version of _dtw_matrix for the hot path
    n, m = a.shape[0], b.shape[0]
    prev = np.full(m + 1, np.inf)
    cur = np.full(m + 1, np.inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[:] = np.inf
        lo = 1
        hi = m
        if window >= 0:
            lo = max(1, i - window)
            hi = min(m, i + window)
        for j in range(lo, hi + 1):
            d = a[i - 1] - b[j - 1]
            c = d * d if local == 1 else abs(d)
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = best + c
        prev, cur = cur, prev
    return prev[m]


@numba.njit(cache=True)
def _pairwise_dtw(series, local, window):
    n = series.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = _dtw_cost(series[i], series[j], local, window)
            out[i, j] = d
            out[j, i] = d
    return out


def _window(n: int, m: int, band: int | None) -> int:
    if band is None:
        return -1
    if band < 0:
        raise ValueError("band must be non-negative")
    # a band narrower than the length difference admits no path
    return max(band, abs(n - m))


def _as_series(x) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("empty series")
    return arr


def _traceback(acc: np.ndarray) -> list[tuple[int, int]]:
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        steps = [(acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1)]
        _, i, j = min(steps, key=lambda s: s[0])
        path.append((i - 1, j - 1))
    path.reverse()
    return path


def dtw(a, b, *, local: str = "abs", band: int | None = None, return_path: bool = False) -> DtwResult:
    """Dynamic time warping cost between two 1-D series.

    Steps are ``(1, 0)``, ``(0, 1)`` and ``(1, 1)``; the local cost is
    ``|a_i - b_j|`` (``local="abs"``) or its square. ``band`` is an optional
    Sakoe-Chiba half-width.
    """
    a, b = _as_series(a), _as_series(b)
    code = _LOCAL_COSTS[local]
    window = _window(a.size, b.size, band)
    if not return_path:
        return DtwResult(float(_dtw_cost(a, b, code, window)))
    acc = _dtw_matrix(a, b, code, window)
    return DtwResult(float(acc[-1, -1]), _traceback(acc))


def dtw_distance(a, b, *, local: str = "abs", band: int | None = None) -> float:
    return dtw(a, b, local=local, band=band).cost


def pairwise_dtw(series, *, local: str = "abs", band: int | None = None) -> np.ndarray:
    """Symmetric matrix of DTW costs between the rows of ``series``."""
    arr = np.ascontiguousarray(series, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ValueError("series must be a non-empty 2D array")
    return _pairwise_dtw(arr, _LOCAL_COSTS[local], _window(arr.shape[1], arr.shape[1], band))


def feature_distance(fa, fb) -> float:
    fa = np.asarray(fa, dtype=np.float64)
    fb = np.asarray(fb, dtype=np.float64)
    if fa.shape != fb.shape:
        raise ValueError(f"feature length mismatch: {fa.shape} vs {fb.shape}")
    return float(np.linalg.norm(fa - fb))
