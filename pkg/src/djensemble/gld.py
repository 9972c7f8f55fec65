"""Generalized Lambda Distribution (RS parametrization) fitting.

The quantile function is

    Q(u) = l1 + (u**l3 - (1 - u)**l4) / l2

Parameters are estimated by the method of moments: the shape pair
``(l3, l4)`` is found by a bounded Nelder-Mead search matching sample
skewness and kurtosis, then ``l1`` and ``l2`` follow in closed form from the
sample mean and standard deviation.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numba
import numpy as np
from scipy.optimize import minimize
from scipy.special import beta as _beta_vec

from .grid import STGrid

log = logging.getLogger(__name__)

MIN_SAMPLES = 50
MOMENT_RTOL = 1e-4
# fourth moments exist only for shape parameters above -1/4
_NEG_BOUNDS = (-0.245, -0.005)
_POS_BOUNDS = (0.005, 25.0)
_U_CHECK = np.linspace(0.0, 1.0, 1002)[1:-1]


class GldError(ValueError):
    pass


@dataclass(frozen=True)
class GldParams:
    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float
    degraded: bool = False

    def __post_init__(self):
        if self.lambda2 == 0:
            raise GldError("lambda2 must be non-zero")

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2, self.lambda3, self.lambda4])

    def quantile(self, u):
        return gld_quantile(self, u)

    def is_valid(self) -> bool:
        q = _quantile(self, _U_CHECK)
        if not np.all(np.isfinite(q)):
            return False
        scale = max(1.0, float(np.max(np.abs(q))))
        return bool(np.all(np.diff(q) >= -1e-9 * scale))

    def moments(self) -> tuple[float, float, float, float]:
        """Mean, variance, skewness and kurtosis implied by the parameters."""
        m1, var, skew, kurt = _z_moments(self.lambda3, self.lambda4)
        mean = self.lambda1 + m1 / self.lambda2
        return mean, var / self.lambda2**2, math.copysign(1.0, self.lambda2) * skew, kurt


def _quantile(p: GldParams, u):
    u = np.asarray(u, dtype=np.float64)
    return p.lambda1 + (u**p.lambda3 - (1.0 - u) ** p.lambda4) / p.lambda2


def gld_quantile(params: GldParams, u):
    """Evaluate the RS quantile function at ``u`` in the open interval (0, 1)."""
    arr = np.asarray(u, dtype=np.float64)
    if np.any((arr <= 0.0) | (arr >= 1.0)):
        raise GldError("u must lie strictly inside (0, 1)")
    out = _quantile(params, arr)
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------------ moments


@numba.njit(cache=True)
def _z_moments(l3, l4):
    """Mean, variance, skewness and kurtosis of Z = U**l3 - (1-U)**l4."""
    raw = np.empty(4)
    for k in range(1, 5):
        s = 0.0
        binom = 1.0
        for j in range(k + 1):
            a = l3 * (k - j) + 1.0
            b = l4 * j + 1.0
            lb = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
            s += binom * (-1.0) ** j * math.exp(lb)
            binom = binom * (k - j) / (j + 1)
        raw[k - 1] = s
    m1, m2, m3, m4 = raw[0], raw[1], raw[2], raw[3]
    var = m2 - m1 * m1
    c3 = m3 - 3 * m1 * m2 + 2 * m1**3
    c4 = m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1**4
    if var <= 0.0:
        return m1, var, np.nan, np.nan
    return m1, var, c3 / var**1.5, c4 / var**2


def _shape_moments_grid(l3: np.ndarray, l4: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    raw = []
    for k in (1, 2, 3, 4):
        s = np.zeros_like(l3)
        for j in range(k + 1):
            s = s + math.comb(k, j) * (-1) ** j * _beta_vec(l3 * (k - j) + 1.0, l4 * j + 1.0)
        raw.append(s)
    m1, m2, m3, m4 = raw
    var = m2 - m1 * m1
    c3 = m3 - 3 * m1 * m2 + 2 * m1**3
    c4 = m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1**4
    return c3 / var**1.5, c4 / var**2


@lru_cache(maxsize=1)
def _search_tables():
    """Skewness/kurtosis lookup tables over both same-sign quadrants."""
    pos = np.geomspace(_POS_BOUNDS[0], _POS_BOUNDS[1], 80)
    neg = -np.geomspace(-_NEG_BOUNDS[1], -_NEG_BOUNDS[0], 30)
    tables = []
    for axis, sign in ((pos, 1.0), (neg, -1.0)):
        l3, l4 = np.meshgrid(axis, axis, indexing="ij")
        skew, kurt = _shape_moments_grid(l3, l4)
        # for the negative quadrant l2 < 0 flips the sign of skewness
        tables.append((l3, l4, sign * skew, kurt, sign))
    return tables


def sample_moments(samples) -> tuple[float, float, float, float]:
    """Mean, (population) variance, skewness and kurtosis of ``samples``."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    mean = x.mean()
    d = x - mean
    var = np.mean(d * d)
    if not var > 0:
        raise GldError("zero variance")
    skew = np.mean(d**3) / var**1.5
    kurt = np.mean(d**4) / var**2
    return float(mean), float(var), float(skew), float(kurt)


@numba.njit(cache=True)
def _objective(theta, sign, skew, kurt):
    _, var, s, k = _z_moments(theta[0], theta[1])
    if not (var > 0.0 and math.isfinite(k)):
        return 1e6
    return (sign * s - skew) ** 2 + (k - kurt) ** 2


def _newton_polish(theta, sign, skew, kurt, bounds, steps: int = 8):
    """Refine a Nelder-Mead solution with finite-difference Newton steps."""
    th = np.array(theta, dtype=np.float64)
    lo, hi = bounds

    def resid(t):
        _, _, s, k = _z_moments(t[0], t[1])
        return np.array([sign * s - skew, k - kurt])

    r = resid(th)
    for _ in range(steps):
        if not np.all(np.isfinite(r)) or np.max(np.abs(r)) < 1e-13:
            break
        h = 1e-7 * np.maximum(np.abs(th), 1e-3)
        jac = np.empty((2, 2))
        for i in range(2):
            tp = th.copy()
            tp[i] += h[i]
            jac[:, i] = (resid(tp) - r) / h[i]
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            break
        cand = np.clip(th + step, lo, hi)
        rc = resid(cand)
        if not np.all(np.isfinite(rc)) or np.sum(rc * rc) >= np.sum(r * r):
            break
        th, r = cand, rc
    return float(th[0]), float(th[1])


def _local_minima(obj: np.ndarray, limit: int) -> list[tuple[int, int]]:
    padded = np.pad(obj, 1, constant_values=np.inf)
    centre = padded[1:-1, 1:-1]
    is_min = np.ones_like(obj, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                nb = padded[1 + di : padded.shape[0] - 1 + di, 1 + dj : padded.shape[1] - 1 + dj]
                is_min &= centre <= nb
    idx = np.argwhere(is_min)
    order = np.argsort(obj[is_min], kind="stable")
    return [tuple(idx[i]) for i in order[:limit]]


def _moments_match(theta, sign, skew, kurt) -> bool:
    _, _, s, k = _z_moments(theta[0], theta[1])
    return abs(sign * s - skew) <= MOMENT_RTOL * max(1.0, abs(skew)) and abs(k - kurt) <= MOMENT_RTOL * kurt


def _quantile_misfit(p: GldParams, x_sorted: np.ndarray) -> float:
    u = (np.arange(x_sorted.size) + 0.5) / x_sorted.size
    return float(np.mean((_quantile(p, u) - x_sorted) ** 2))


def fit_gld(samples, *, max_starts: int = 6, basin_tol: float = 0.05, min_samples: int = MIN_SAMPLES) -> GldParams:
    """Fit RS GLD parameters to ``samples`` by the method of moments.

    The shape moment map folds over itself, so a skewness/kurtosis pair can
    have several exact solutions. Every basin of the lookup table within
    ``basin_tol`` is refined. Among solutions matching the moments to
    ``MOMENT_RTOL``, those whose quantile function fits the sorted sample
    (L2) within a factor two of the best are kept and the smallest
    ``|l3| + |l4|`` wins. If nothing matches, the closest valid fit is
    returned with ``degraded=True``.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if x.size < min_samples:
        raise GldError(f"need at least {min_samples} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise GldError("samples contain non-finite values")
    mean, var, skew, kurt = sample_moments(x)

    candidates = []
    for l3g, l4g, skew_g, kurt_g, sign in _search_tables():
        obj = (skew_g - skew) ** 2 + (kurt_g - kurt) ** 2
        obj = np.where(np.isfinite(obj), obj, np.inf)
        bounds = _POS_BOUNDS if sign > 0 else _NEG_BOUNDS
        minima = _local_minima(obj, max_starts)
        starts = [ij for ij in minima if obj[ij] <= basin_tol] or minima[:1]
        for i, j in starts:
            res = minimize(
                _objective,
                x0=[l3g[i, j], l4g[i, j]],
                args=(sign, skew, kurt),
                method="Nelder-Mead",
                bounds=[bounds, bounds],
                options={"xatol": 1e-7, "fatol": 1e-14, "maxiter": 400},
            )
            theta = _newton_polish(res.x, sign, skew, kurt, bounds)
            candidates.append((theta, sign, float(_objective(np.array(theta), sign, skew, kurt))))

    matched = [c for c in candidates if _moments_match(c[0], c[1], skew, kurt)]
    scored = []
    for theta, sign, fun in matched or candidates:
        p = _from_shape(theta, sign, mean, var, degraded=not matched)
        if p.is_valid():
            scored.append((_quantile_misfit(p, x) if matched else fun, p))
    if not scored:
        raise GldError("no valid GLD fit found")
    best = min(m for m, _ in scored)
    if matched:
        # misfits within sampling noise of the best do not discriminate;
        # prefer the least extreme shape among them
        near = [p for m, p in scored if m <= 2.0 * best + 1e-15]
        params = min(near, key=lambda p: abs(p.lambda3) + abs(p.lambda4))
    else:
        params = next(p for m, p in scored if m == best)
    if params.degraded:
        log.debug("degraded GLD fit: skew=%.4g kurt=%.4g", skew, kurt)
    return params


def _from_shape(theta, sign, mean, var, degraded=False) -> GldParams:
    l3, l4 = theta
    m1, zvar, _, _ = _z_moments(l3, l4)
    l2 = sign * math.sqrt(zvar / var)
    l1 = mean - m1 / l2
    return GldParams(l1, l2, l3, l4, degraded=degraded)


# ------------------------------------------------------------------ features


@dataclass(frozen=True)
class FeatureMap:
    """GLD parameters per point and season.

    ``params`` has shape ``(lat, lon, seasons, 4)``; ``degraded`` flags fits
    that did not reach the moment tolerance.
    """

    params: np.ndarray
    degraded: np.ndarray

    @property
    def lat_count(self) -> int:
        return self.params.shape[0]

    @property
    def lon_count(self) -> int:
        return self.params.shape[1]

    @property
    def seasons(self) -> int:
        return self.params.shape[2]

    @property
    def vectors(self) -> np.ndarray:
        """Feature matrix ``(points, 4 * seasons)`` in row-major point order."""
        n = self.lat_count * self.lon_count
        return self.params.reshape(n, -1)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lat", "lon", "season", "l1", "l2", "l3", "l4"])
            for r in range(self.lat_count):
                for c in range(self.lon_count):
                    for s in range(self.seasons):
                        w.writerow([r, c, s, *(repr(float(v)) for v in self.params[r, c, s])])

    @classmethod
    def from_csv(cls, path: str | Path) -> FeatureMap:
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        idx = rows[:, :3].astype(int)
        shape = tuple(idx.max(axis=0) + 1) + (4,)
        params = np.zeros(shape)
        params[idx[:, 0], idx[:, 1], idx[:, 2]] = rows[:, 3:]
        return cls(params, np.zeros(shape[:3], dtype=bool))


def extract_features(grid: STGrid, seasonality: int = 1) -> FeatureMap:
    """Fit one GLD per point and season.

    ``seasonality`` is the number of seasons the time axis is split into;
    a trailing remainder shorter than one season is ignored.
    """
    if seasonality < 1:
        raise GldError("seasonality must be >= 1")
    season_len = grid.time_count // seasonality
    if season_len < MIN_SAMPLES:
        raise GldError(f"season too short for fitting: {season_len} < {MIN_SAMPLES} observations")
    params = np.zeros((grid.lat_count, grid.lon_count, seasonality, 4))
    degraded = np.zeros((grid.lat_count, grid.lon_count, seasonality), dtype=bool)
    cache: dict[bytes, GldParams] = {}
    for r in range(grid.lat_count):
        for c in range(grid.lon_count):
            series = grid.values[r, c]
            for s in range(seasonality):
                chunk = series[s * season_len : (s + 1) * season_len]
                key = chunk.tobytes()
                if key not in cache:
                    cache[key] = fit_gld(chunk)
                p = cache[key]
                params[r, c, s] = p.as_array()
                degraded[r, c, s] = p.degraded
    return FeatureMap(params, degraded)
