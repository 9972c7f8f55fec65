"""Command-line entry point.

Reports go to stdout as JSON; short human-readable tables go to stderr.
Exit status is 0 on success, 1 on usage or input errors, and 2 when some
placements of a plan failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, bench
from .config import Config, store_root
from .executor import execute_plan, rmse
from .grid import GridError, Region, generate_synthetic, load_grid, parse_tile_spec, write_grid
from .pipeline import calibrate, preprocess
from .planner import PlanError, plan, query_tiles
from .registry import BackendError, ModelRecord, Registry, RegistryError, register_model
from .store import Store, StoreError

EXIT_PARTIAL = 2


def _emit(doc) -> None:
    json.dump(doc, sys.stdout, indent=2, default=_json_default)
    sys.stdout.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _table(rows: list[dict], cols: list[str]) -> None:
    def fmt(v):
        return f"{v:.4g}" if isinstance(v, float) else str(v)

    cells = [[fmt(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c) for i, c in enumerate(cols)]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)), file=sys.stderr)
    for row in cells:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)), file=sys.stderr)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _k_range(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("..")
    if not sep:
        raise argparse.ArgumentTypeError(f"k range must look like 'a..b', got {text!r}")
    return int(lo), int(hi)


# commands


def cmd_ingest(args, cfg: Config) -> int:
    grid = load_grid(args.input, args.format, args.missing)
    store = Store(store_root(args.out))
    dataset_id = args.id or Path(args.input).stem
    path = store.put_dataset(dataset_id, grid)
    _emit({"dataset": dataset_id, "path": str(path), "shape": list(grid.shape)})
    return 0


def cmd_preprocess(args, cfg: Config) -> int:
    store = Store(store_root(args.store))
    grid = store.dataset(args.dataset)
    k_min, k_max = args.k_range
    seed = cfg.seed if args.seed is None else args.seed
    pre = preprocess(grid, args.seasonality, k_min, k_max, seed, args.medoid)
    report = {
        "dataset": args.dataset,
        "k": pre.clusters.k,
        "silhouette": pre.clusters.silhouette,
        "n_tiles": len(pre.tiles),
        "degraded_fits": int(pre.features.degraded.sum()),
        "cost_dataset": pre.timings,
    }
    store.put_preprocessed(args.dataset, pre.features, pre.clusters, pre.tiles, report)
    _table([{"phase": k, "seconds": v} for k, v in pre.timings.items()], ["phase", "seconds"])
    _emit(report)
    return 0


def cmd_register_model(args, cfg: Config) -> int:
    store = Store(store_root(args.store))
    doc = json.loads(Path(args.manifest).read_text())
    if args.training:
        doc["dataset_ref"] = args.training
    record = ModelRecord.from_manifest(doc)
    if record.id in store.model_ids():
        raise RegistryError(f"duplicate id {record.id!r}")
    training = store.dataset(record.dataset_ref)
    seed = cfg.seed if args.seed is None else args.seed
    registry = Registry()
    try:
        register_model(record, training, registry, timeout=cfg.timeout)
        cal = calibrate(record, registry, training, _floats(args.noise), seed, d_max=cfg.d_max,
                        min_gain=cfg.min_gain)
    finally:
        registry.close()
    path = store.put_model(record)
    timings = cal.timings
    report = {
        "model": record.id,
        "manifest": str(path),
        "unitary_cost": record.unitary_cost,
        "degree": cal.curve.degree,
        "fit_points": len(cal.curve.fit_points),
        "base_error": cal.curve.base_error,
        "cost_model": {
            "apply_noise_s": timings["apply_noise_s"],
            "apply_model_s": timings["apply_model_s"],
            "fit_s": timings["fit_s"],
            "total_s": timings["total_s"],
        },
    }
    if args.curve_csv:
        with open(args.curve_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dist", "rmse", "estimate"])
            for d, e in cal.curve.fit_points:
                w.writerow([d, e, cal.curve.estimate(d)])
    _table([{"phase": k, "seconds": v} for k, v in report["cost_model"].items()], ["phase", "seconds"])
    _emit(report)
    return 0


def _truth_block(args, grid, region: Region, t_end: int, ptime: int):
    if args.truth_from_dataset:
        if t_end + ptime > grid.time_count:
            raise GridError("dataset has no truth beyond the history cutoff")
        return grid.slice(region, t_end, ptime).values
    if not args.truth:
        return None
    truth = load_grid(args.truth, args.truth_format)
    if (truth.lat_count, truth.lon_count) == (region.height, region.width):
        return truth.values[:, :, :ptime]
    return truth.slice(region, 0, ptime).values


def _run_strategy(args, cfg, strategy, mu_e, region, tiles, history, ptime, registry, truth):
    eligible = [r.id for r in registry.eligible()]
    if strategy == "djensemble":
        p = plan(region, tiles, registry, mu_e, cfg.normalization, grid=history, outlier_k=cfg.outlier_k,
                 band=cfg.dtw_band)
        ex = execute_plan(p, history, ptime, registry, cfg.workers, truth)
        extra = {"plan": p.to_dict(), "cost_query": p.timings}
    elif strategy == "single":
        model = args.model or min(registry.eligible(), key=lambda r: (r.learning_curve.base_error, r.id)).id
        ex = baselines.run_single_model(model, region, history, ptime, registry)
        extra = {"model": model}
    elif strategy == "ensemble":
        ex = baselines.run_traditional_ensemble(eligible, region, history, ptime, registry)
        extra = {"models": eligible}
    elif strategy == "dtw-ensemble":
        ex = baselines.run_dtw_filtered_ensemble(eligible, region, history, ptime, registry, args.threshold)
        extra = {"threshold": args.threshold}
    elif strategy == "tile-ensemble":
        qt = query_tiles(region, tiles)
        ex = baselines.run_tile_aware_ensemble(eligible, region, qt, history, ptime, registry, args.threshold)
        extra = {"threshold": args.threshold}
    elif strategy == "stacking":
        preds, fit_truth = baselines.stacking_history(eligible, region, history, ptime, registry)
        weights = baselines.fit_stacking(eligible, preds, fit_truth)
        ex = baselines.run_stacking(weights, region, history, ptime, registry)
        extra = {"weights": {"intercept": weights.intercept, "coef": dict(zip(eligible, weights.coef.tolist()))}}
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    out = {"strategy": strategy, "mu_e": mu_e, "execution": ex.report.to_dict(), **extra}
    if truth is not None and ex.prediction.complete:
        out["rmse"] = rmse(ex.prediction, truth)
    return out, ex


def cmd_query(args, cfg: Config) -> int:
    store = Store(store_root(args.store))
    grid = store.dataset(args.dataset)
    tiles = store.tiles(args.dataset)
    region = Region.parse(args.region)
    t_end = grid.time_count if args.t_end is None else args.t_end
    history = grid.slice(grid.extent, 0, t_end)
    truth = _truth_block(args, grid, region, t_end, args.ptime)
    registry = store.registry(cfg.timeout)
    rows, status = [], 0
    try:
        if not registry.eligible():
            raise PlanError("no eligible models")
        for mu_e in _floats(args.mu_e):
            out, ex = _run_strategy(args, cfg, args.strategy, mu_e, region, tiles, history, args.ptime, registry,
                                    truth)
            if not ex.report.ok:
                status = EXIT_PARTIAL
            rows.append(out)
            if args.prediction_out and ex.prediction.complete:
                write_grid(ex.prediction.to_grid(), args.prediction_out)
    finally:
        registry.close()
    summary = [
        {"mu_e": r["mu_e"], "rmse": r.get("rmse", float("nan")),
         "invocations": r["execution"]["total_invocations"], "failed": len(r["execution"]["failed"])}
        for r in rows
    ]
    _table(summary, ["mu_e", "rmse", "invocations", "failed"])
    if args.sweep_csv:
        with open(args.sweep_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["mu_e", "rmse", "invocations", "failed"])
            w.writeheader()
            w.writerows(summary)
    _emit(rows[0] if len(rows) == 1 else {"sweep": rows})
    return status


def cmd_synth(args, cfg: Config) -> int:
    base = load_grid(args.base, args.format)
    seed = cfg.seed if args.seed is None else args.seed
    out = generate_synthetic(base, parse_tile_spec(args.tiles), seed)
    write_grid(out, args.out, args.format)
    _emit({"out": args.out, "shape": list(out.shape), "seed": seed})
    return 0


def cmd_bench_distance(args, cfg: Config) -> int:
    ns = [int(x) for x in args.n.split(",")]
    if min(ns) < bench.MIN_SERIES:
        raise ValueError(f"every n must be >= {bench.MIN_SERIES}")
    seed = cfg.seed if args.seed is None else args.seed
    rows, fit = bench.distance_sweep(ns, args.length, seed, args.repeats)
    if args.csv:
        bench.write_distance_csv(rows, args.csv)
    _table(rows, ["n", "t_feature_ms", "t_shape_ms", "ratio"])
    _emit({"rows": rows, "fit": {"slope": fit.slope, "c": fit.c, "r2": fit.r2}})
    return 0


def cmd_bench_tables(args, cfg: Config) -> int:
    report = bench.paper_tables(bench.read_error_table(args.file), args.mu_e)
    rows = [
        {"layout": k, "aggregate": v["aggregate"], "gap": report["gaps"][k],
         "plan": " ".join(f"{t}:{m}" for t, m in v["plan"])}
        for k, v in report["layouts"].items()
    ]
    _table(rows, ["layout", "aggregate", "gap", "plan"])
    _emit(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="djensemble", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON config file")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="store a grid file as a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="stg1", choices=["stg1", "binary", "csv"])
    p.add_argument("--missing", default="reject", choices=["reject", "interpolate"])
    p.add_argument("--out", help="store directory (default: $DJE_STORE)")
    p.add_argument("--id", help="dataset id (default: input file stem)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="features, clustering and tiling")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seasonality", type=int, default=1)
    p.add_argument("--k-range", type=_k_range, default=(2, 10))
    p.add_argument("--seed", type=int)
    p.add_argument("--medoid", default="euclidean", choices=["euclidean", "dtw"])
    p.add_argument("--store")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("register-model", help="register a model and build its learning curve")
    p.add_argument("--manifest", required=True)
    p.add_argument("--training", help="dataset id holding the training region")
    p.add_argument("--noise", required=True, help="comma-separated ascending sigmas")
    p.add_argument("--seed", type=int)
    p.add_argument("--curve-csv", help="write (dist, rmse, estimate) rows here")
    p.add_argument("--store")
    p.set_defaults(func=cmd_register_model)

    p = sub.add_parser("query", help="plan and execute a predictive query")
    p.add_argument("--dataset", required=True)
    p.add_argument("--region", required=True, help="lat0,lon0,h,w")
    p.add_argument("--ptime", type=int, required=True)
    p.add_argument("--mu-e", default="0", help="weight, or comma-separated weights for a sweep")
    p.add_argument("--strategy", default="djensemble",
                   choices=["djensemble", "single", "ensemble", "dtw-ensemble", "tile-ensemble", "stacking"])
    p.add_argument("--model", help="model for --strategy single")
    p.add_argument("--threshold", type=float, default=5.0, help="error cut for filtered ensembles")
    p.add_argument("--t-end", type=int, help="history cutoff (default: whole dataset)")
    p.add_argument("--truth")
    p.add_argument("--truth-format", default="stg1", choices=["stg1", "binary", "csv"])
    p.add_argument("--truth-from-dataset", action="store_true", help="score against the dataset after --t-end")
    p.add_argument("--sweep-csv")
    p.add_argument("--prediction-out")
    p.add_argument("--store")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("synth", help="add per-tile Gaussian noise to a base grid")
    p.add_argument("--base", required=True)
    p.add_argument("--tiles", required=True, help="'lat,lon,h,w,sigma;...'")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="stg1", choices=["stg1", "binary", "csv"])
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="benchmarks")
    bsub = p.add_subparsers(dest="bench", required=True)
    b = bsub.add_parser("distance", help="feature vs DTW distance-matrix cost")
    b.add_argument("--n", default="100,200,300,400,500")
    b.add_argument("--length", type=int, default=200)
    b.add_argument("--repeats", type=int, default=bench.REPEATS)
    b.add_argument("--seed", type=int)
    b.add_argument("--csv")
    b.set_defaults(func=cmd_bench_distance)
    b = bsub.add_parser("paper-tables", help="plan over a supplied (layout, tile, model, error) table")
    b.add_argument("--file", required=True)
    b.add_argument("--mu-e", type=float, default=0.0)
    b.set_defaults(func=cmd_bench_tables)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = Config.load(args.config)
        return args.func(args, cfg)
    except (GridError, StoreError, RegistryError, PlanError, BackendError, ValueError, OSError) as exc:
        print(f"djensemble: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
