"""Benchmarks: feature- vs shape-based distance cost, and table-driven planning."""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distance import pairwise_dtw
from .gld import fit_gld
from .planner import Candidate, aggregate_plan_rmse, allocate, plan_gap

REPEATS = 5
MIN_SERIES = 10
MIN_BENCH_LENGTH = 4


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _feature_path(series: np.ndarray) -> None:
    # short benchmark series fall below the fitting floor; only the timing matters here
    feats = np.array([fit_gld(s, min_samples=MIN_BENCH_LENGTH).as_array() for s in series])
    sq = (feats * feats).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * feats @ feats.T
    np.sqrt(np.maximum(d2[np.triu_indices(len(feats), 1)], 0.0))


def random_series(n: int, length: int, seed: int = 0) -> np.ndarray:
    """Noisy seasonal series with a random level and amplitude per row."""
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    level = rng.uniform(10, 30, size=(n, 1))
    amp = rng.uniform(1, 5, size=(n, 1))
    return level + amp * np.sin(2 * np.pi * t / 50) + rng.normal(0, 1, size=(n, length))


def benchmark_distance_matrix(series, repeats: int = REPEATS) -> dict:
    """Median wall time of the feature path and the DTW path over ``series``.

    Feature path: one GLD fit per series plus all pairwise Euclidean
    distances. Shape path: all pairwise DTW distances.
    """
    series = np.asarray(series, dtype=np.float64)
    n = len(series)
    if n < MIN_SERIES:
        raise ValueError(f"need at least {MIN_SERIES} series, got {n}")
    pairwise_dtw(series[:2])  # compile outside the timed region
    t_feature = _median_time(lambda: _feature_path(series), repeats)
    t_shape = _median_time(lambda: pairwise_dtw(series), repeats)
    return {"n": n, "t_feature_ms": t_feature * 1e3, "t_shape_ms": t_shape * 1e3, "ratio": t_shape / t_feature}


@dataclass
class SweepFit:
    slope: float
    c: float
    r2: float


def fit_ratio_sweep(rows: list[dict]) -> SweepFit:
    """Least-squares ``ratio = c * (n - 1)`` and the slope of an ordinary line fit."""
    n = np.array([r["n"] for r in rows], dtype=np.float64)
    ratio = np.array([r["ratio"] for r in rows])
    x = n - 1
    c = float(x @ ratio / (x @ x))
    ss_res = float(((ratio - c * x) ** 2).sum())
    ss_tot = float(((ratio - ratio.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    slope = float(np.polyfit(n, ratio, 1)[0]) if len(n) > 1 else 0.0
    return SweepFit(slope, c, r2)


def distance_sweep(ns, length: int = 200, seed: int = 0, repeats: int = REPEATS) -> tuple[list[dict], SweepFit]:
    series = random_series(max(ns), length, seed)
    rows = [benchmark_distance_matrix(series[:n], repeats) for n in ns]
    return rows, fit_ratio_sweep(rows)


def write_distance_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["n", "t_feature_ms", "t_shape_ms", "ratio"])
        w.writeheader()
        w.writerows(rows)


def read_error_table(path: str | Path) -> dict[str, dict[str, list[Candidate]]]:
    """Parse ``layout,tile,model,error[,invocations,uc]`` rows, keeping file order."""
    layouts: dict[str, dict[str, list[Candidate]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"layout", "tile", "model", "error"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"error table lacks columns {sorted(missing)}")
        for row in reader:
            inv = int(row.get("invocations") or 1)
            uc = float(row.get("uc") or 1.0)
            cand = Candidate(row["model"], float(row["error"]), inv, uc)
            layouts.setdefault(row["layout"], {}).setdefault(row["tile"], []).append(cand)
    return layouts


def paper_tables(layouts: dict[str, dict[str, list[Candidate]]], mu_e: float = 0.0) -> dict:
    """Plan every layout and compare aggregate errors against the best layout."""
    report = {"mu_e": mu_e, "layouts": {}}
    for name, cands in layouts.items():
        choice, total, dropped = allocate(cands, mu_e)
        chosen = [(tile, choice[tile].model_id, choice[tile].est_error) for tile in cands]
        report["layouts"][name] = {
            "plan": [[t, m] for t, m, _ in chosen],
            "errors": [e for _, _, e in chosen],
            "aggregate": aggregate_plan_rmse([e for _, _, e in chosen]),
            "total_cost": total,
            "dropped": dropped,
        }
    best = min(report["layouts"], key=lambda k: report["layouts"][k]["aggregate"])
    ref = report["layouts"][best]["aggregate"]
    report["best_layout"] = best
    report["gaps"] = {k: plan_gap(v["aggregate"], ref) for k, v in report["layouts"].items()}
    return report
