"""Learning curves: estimated RMSE of a model as a function of DTW distance.

Data is perturbed with cumulative Gaussian noise, the model is run on each
perturbed copy, and a polynomial in the distance between the model's
training centroid and the copy's medoid is fitted to the observed errors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .distance import dtw_distance
from .executor import predict_region, rmse
from .grid import STGrid
from .registry import ModelRecord, Predictor
from .tiling import medoid

D_MAX = 5
FOLDS = 5
MIN_GAIN = 0.01
MIN_POINTS = 10


class CurveError(ValueError):
    pass


@dataclass
class LearningCurve:
    """Polynomial ``coefficients`` in increasing-power order over raw distance."""

    coefficients: list[float]
    degree: int
    base_error: float
    fit_points: list[tuple[float, float]]
    dist_max: float
    cv_rmse: list[float] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.fit_points:
            raise CurveError("learning curve needs at least one fit point")

    def estimate(self, dist: float) -> float:
        if dist < 0:
            raise CurveError(f"distance must be non-negative, got {dist}")
        x = min(float(dist), self.dist_max)
        return max(float(np.polynomial.polynomial.polyval(x, self.coefficients)), 0.0)

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "coefficients": [float(c) for c in self.coefficients],
            "base_error": self.base_error,
            "dist_max": self.dist_max,
            "fit_points": [[float(d), float(e)] for d, e in self.fit_points],
            "cv_rmse": [float(v) for v in self.cv_rmse],
            "timings": self.timings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> LearningCurve:
        return cls(
            coefficients=[float(c) for c in d["coefficients"]],
            degree=int(d["degree"]),
            base_error=float(d.get("base_error", 0.0)),
            fit_points=[(float(a), float(b)) for a, b in d["fit_points"]],
            dist_max=float(d["dist_max"]),
            cv_rmse=[float(v) for v in d.get("cv_rmse", [])],
            timings=dict(d.get("timings", {})),
        )


def estimate_error(curve: LearningCurve | None, dist: float) -> float:
    """Curve value at ``min(dist, dist_max)``, floored at 0."""
    if curve is None:
        raise CurveError("model has no fitted learning curve")
    return curve.estimate(dist)


def perturb_sequence(base: STGrid, sigmas, seed: int = 0) -> list[STGrid]:
    """Cumulative noise: ``r0 = base + N(0, s0)``, ``ri = r(i-1) + N(0, si)``."""
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise CurveError("need at least one sigma")
    if any(s < 0 for s in sigmas):
        raise CurveError("sigmas must be non-negative")
    if any(b < a for a, b in zip(sigmas, sigmas[1:])):
        raise CurveError("sigmas must be ascending")
    rng = np.random.default_rng(seed)
    cur = base.values.astype(np.float64)
    out = []
    for s in sigmas:
        if s > 0:
            cur = cur + rng.normal(0.0, s, size=cur.shape)
        out.append(STGrid(cur, base.origin, base.cell_size, base.units))
    return out


def _design_fit(x: np.ndarray, y: np.ndarray, degree: int) -> np.ndarray:
    # fit in a scaled domain for conditioning, report plain power-basis coefficients
    if np.ptp(x) == 0:
        return np.array([y.mean()] + [0.0] * degree)
    coef = Polynomial.fit(x, y, degree).convert().coef
    return np.pad(coef, (0, degree + 1 - len(coef)))


def cv_rmse(x: np.ndarray, y: np.ndarray, degree: int, folds: int = FOLDS) -> float:
    """k-fold CV RMSE with interleaved folds over distance-sorted points."""
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    fold = np.arange(len(x)) % folds
    sq = 0.0
    for k in range(folds):
        test = fold == k
        if not test.any():
            continue
        coef = _design_fit(x[~test], y[~test], degree)
        resid = np.polynomial.polynomial.polyval(x[test], coef) - y[test]
        sq += float(resid @ resid)
    return float(np.sqrt(sq / len(x)))


def select_degree(x, y, d_max: int = D_MAX, min_gain: float = MIN_GAIN, folds: int = FOLDS):
    """Raise the degree from 1 while CV RMSE improves by at least ``min_gain``.

    Returns ``(degree, coefficients, cv_scores)``. Once the CV error is at
    floating-point noise level relative to the data, higher degrees cannot
    be told apart and the search stops.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    scale = max(float(np.abs(y).max()), 1e-300)
    scores = [cv_rmse(x, y, 1, folds)]
    degree = 1
    for d in range(2, d_max + 1):
        if scores[-1] <= 1e-9 * scale:
            break
        if len(x) - (len(x) + folds - 1) // folds < d + 1:
            break
        s = cv_rmse(x, y, d, folds)
        scores.append(s)
        if s > scores[-2] * (1.0 - min_gain):
            break
        degree = d
    return degree, _design_fit(x, y, degree), scores


def fit_curve(points, base_error: float = 0.0, d_max: int = D_MAX, min_gain: float = MIN_GAIN) -> LearningCurve:
    """Fit a curve to ``(dist, rmse)`` pairs."""
    pts = [(float(d), float(e)) for d, e in points]
    if len(pts) < MIN_POINTS:
        raise CurveError(f"need at least {MIN_POINTS} evaluation points, got {len(pts)}")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    degree, coef, scores = select_degree(x, y, d_max, min_gain)
    return LearningCurve([float(c) for c in coef], degree, float(base_error), pts, float(x.max()), scores)


def _split(item, horizon: int) -> tuple[STGrid, int]:
    # joint grid so that perturbation hits input and truth alike
    if isinstance(item, STGrid):
        return item, item.time_count - horizon
    inp, truth = item
    joined = np.concatenate([inp.values, truth.values], axis=2)
    return STGrid(joined, inp.origin, inp.cell_size, inp.units), inp.time_count


def evaluate(record: ModelRecord, predictor: Predictor, grid: STGrid, t_split: int) -> tuple[float, float]:
    """``(dist, rmse)`` for one dataset: history before ``t_split``, truth after it."""
    horizon = grid.time_count - t_split
    history = grid.slice(grid.extent, 0, t_split)
    dist = dtw_distance(record.training_centroid, medoid(history, history.extent))
    pred, _ = predict_region(record, predictor, history, history.extent, horizon)
    truth = np.moveaxis(grid.values[:, :, t_split:], 2, 0)
    return dist, rmse(pred, truth)


def holdout_error(record: ModelRecord, predictor: Predictor, training: STGrid, horizon: int | None = None) -> float:
    """RMSE on the last ``horizon`` steps of the clean training data."""
    horizon = record.output_frames if horizon is None else horizon
    if training.time_count <= horizon:
        raise CurveError("training data too short for a holdout split")
    return evaluate(record, predictor, training, training.time_count - horizon)[1]


def build_learning_curve(
    record: ModelRecord,
    predictor: Predictor,
    eval_regions,
    sigmas,
    seed: int = 0,
    base_error: float | None = None,
    horizon: int | None = None,
    d_max: int = D_MAX,
    min_gain: float = MIN_GAIN,
) -> LearningCurve:
    """Perturb each evaluation region, measure ``(dist, rmse)`` and fit a curve.

    ``eval_regions`` holds grids (the last ``horizon`` steps are the truth)
    or ``(input, truth)`` pairs. Region ``i`` uses seed ``seed + i``.
    """
    if record.training_centroid is None:
        raise CurveError(f"model {record.id!r} has no training centroid")
    horizon = record.output_frames if horizon is None else horizon
    timings = {"apply_noise_s": 0.0, "apply_model_s": 0.0, "fit_s": 0.0}
    points = []
    failures = 0
    for i, item in enumerate(eval_regions):
        grid, t_split = _split(item, horizon)
        t0 = time.perf_counter()
        perturbed = perturb_sequence(grid, sigmas, seed + i)
        timings["apply_noise_s"] += time.perf_counter() - t0
        for g in perturbed:
            history = g.slice(g.extent, 0, t_split)
            t0 = time.perf_counter()
            dist = dtw_distance(record.training_centroid, medoid(history, history.extent))
            timings["apply_noise_s"] += time.perf_counter() - t0
            t0 = time.perf_counter()
            try:
                pred, _ = predict_region(record, predictor, history, history.extent, g.time_count - t_split)
            except RuntimeError:
                failures += 1
                continue
            finally:
                timings["apply_model_s"] += time.perf_counter() - t0
            points.append((dist, rmse(pred, np.moveaxis(g.values[:, :, t_split:], 2, 0))))
    if not points:
        raise CurveError("all predictions failed")
    t0 = time.perf_counter()
    curve = fit_curve(points, 0.0, d_max, min_gain)
    timings["fit_s"] = time.perf_counter() - t0
    curve.base_error = float(curve.estimate(0.0) if base_error is None else base_error)
    curve.timings = timings
    return curve


def is_monotone(curve: LearningCurve, samples: int = 100, rtol: float = 1e-9) -> bool:
    """Whether the estimate is non-decreasing on ``[0, dist_max]``."""
    xs = np.linspace(0.0, curve.dist_max, samples)
    ys = np.array([curve.estimate(x) for x in xs])
    return bool(np.all(np.diff(ys) >= -rtol * max(1.0, float(np.abs(ys).max()))))
