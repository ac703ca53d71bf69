"""Command-line surface: simulate | ingest | estimate | evaluate | sweep | diagnose.

Every command is deterministic given its effective configuration, which
is echoed (with timings) into run_manifest.json in the output directory.
A JSON config file can supply any of a command's parameters; explicit
flags override it, and unknown keys are rejected.

Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
import time
from pathlib import Path


from . import __version__, fileio
from .errors import DataError, NumericalError
from .estimator import EstimateOptions, estimate, estimate_oracle, save_estimate, load_estimate
from .evaluation import (
    CellRecord,
    SweepConfig,
    align_and_score,
    compare_P_estimators,
    fit_sweep,
    run_sweep_cell,
    singular_diagnostics,
)
from .ingest import GridSpec, ingest_coordinate_trips, ingest_labeled_trips
from .markov import count_transitions, sample_trajectory
from .spectral import scale_counts, top_r_svd
from .synth import SynthSpec, check_regularity, generate_model

log = logging.getLogger("softagg")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse parser that exits with code 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_count(token) -> int:
    """Parse a sample-size token; supports fractional exponents like 1e4.5."""
    if isinstance(token, (int, float)):
        return int(round(token))
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return int(round(float(token)))
    except ValueError:
        pass
    m = re.fullmatch(r"([0-9.]*)e([+-]?[0-9.]+)", token, flags=re.IGNORECASE)
    if m:
        mantissa = float(m.group(1)) if m.group(1) else 1.0
        return int(round(mantissa * 10.0 ** float(m.group(2))))
    raise ValueError(f"cannot parse count {token!r}")


def parse_grid(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(parse_count(v) for v in value)
    return tuple(parse_count(tok) for tok in str(value).split(","))


DEFAULTS: dict[str, dict] = {
    "simulate": {
        "p": 200, "r": 4, "anchors": 10, "alpha": 1.0, "margin": 0.25,
        "n": 100_000, "seed": 0, "x0": "stationary", "model_dir": None, "out": None,
    },
    "ingest": {
        "csv": None, "format": "labeled", "origin_col": "origin", "dest_col": "dest",
        "origin_lat_col": "pickup_lat", "origin_lon_col": "pickup_lon",
        "dest_lat_col": "dropoff_lat", "dest_lon_col": "dropoff_lon",
        "lat_min": None, "lat_max": None, "lon_min": None, "lon_max": None,
        "grid_rows": None, "grid_cols": None, "out": None,
    },
    "estimate": {
        "counts": None, "oracle": None, "r": None, "delta0": 0.1, "hunter": "spa",
        "cluster_l": None, "seed": 0, "smoothing": 0.0, "drop_unvisited": False,
        "score_floor": None, "out": None,
    },
    "evaluate": {"estimate_dir": None, "model_dir": None, "out": None},
    "sweep": {
        "mode": "fixed_p", "p": 200, "r": 4, "anchors": 25, "alpha": 1.0,
        "margin": 0.25, "n_grid": "1e4,3e4,1e5,3e5,1e6", "p_grid": "100,200,400,800",
        "ratio": 1000.0, "anchor_fraction": 0.125, "reps": 5, "delta0": 0.1,
        "hunter": "spa", "seed": 0, "workers": None, "out": None,
    },
    "diagnose": {
        "counts": None, "model_dir": None, "r": None, "delta0": 0.1,
        "smoothing": 0.0, "seed": 0, "out": None,
    },
}


def build_parser() -> _Parser:
    parser = _Parser(prog="softagg", description=__doc__)
    parser.add_argument("--version", action="version", version=f"softagg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: _Parser):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--log-level", default="warning",
                       choices=["debug", "info", "warning", "error"])

    ps = sub.add_parser("simulate", help="generate a model, sample a trajectory, write counts")
    common(ps)
    ps.add_argument("--p", type=int)
    ps.add_argument("--r", type=int)
    ps.add_argument("--anchors", type=int, help="planted anchors per meta-state")
    ps.add_argument("--alpha", type=float, help="Dirichlet concentration")
    ps.add_argument("--margin", type=float, help="non-anchor vertex margin")
    ps.add_argument("--n", type=str, help="number of transitions (1e5 style accepted)")
    ps.add_argument("--x0", type=str, help="start state index or 'stationary'")
    ps.add_argument("--model-dir", help="load this model archive instead of generating")

    pi = sub.add_parser("ingest", help="turn a trip CSV into transition counts")
    common(pi)
    pi.add_argument("--csv", help="input CSV path")
    pi.add_argument("--format", choices=["labeled", "coordinate"])
    pi.add_argument("--origin-col")
    pi.add_argument("--dest-col")
    pi.add_argument("--origin-lat-col")
    pi.add_argument("--origin-lon-col")
    pi.add_argument("--dest-lat-col")
    pi.add_argument("--dest-lon-col")
    pi.add_argument("--lat-min", type=float)
    pi.add_argument("--lat-max", type=float)
    pi.add_argument("--lon-min", type=float)
    pi.add_argument("--lon-max", type=float)
    pi.add_argument("--grid-rows", type=int)
    pi.add_argument("--grid-cols", type=int)

    pe = sub.add_parser("estimate", help="run the aggregation estimator on counts")
    common(pe)
    pe.add_argument("--counts", help="counts file (header 'p n', then 'i j count' triplets)")
    pe.add_argument("--oracle", help="model archive directory: run in noiseless oracle mode")
    pe.add_argument("--r", type=int, help="number of meta-states")
    pe.add_argument("--delta0", type=float, help="anchor threshold")
    pe.add_argument("--hunter", choices=["spa", "cluster-sp"])
    pe.add_argument("--cluster-l", type=int, help="k-means cluster count for cluster-sp")
    pe.add_argument("--smoothing", type=float)
    pe.add_argument("--drop-unvisited", action="store_const", const=True,
                    help="drop never-entered states instead of erroring")
    pe.add_argument("--score-floor", type=float)

    pv = sub.add_parser("evaluate", help="score an estimate against a ground-truth model")
    common(pv)
    pv.add_argument("--estimate-dir")
    pv.add_argument("--model-dir")

    pw = sub.add_parser("sweep", help="synthetic error-rate sweep with a log-log slope fit")
    common(pw)
    pw.add_argument("--mode", choices=["fixed_p", "fixed_ratio"])
    pw.add_argument("--p", type=int)
    pw.add_argument("--r", type=int)
    pw.add_argument("--anchors", type=int)
    pw.add_argument("--alpha", type=float)
    pw.add_argument("--margin", type=float)
    pw.add_argument("--n-grid", type=str, help="comma list, e.g. 1e4,3e4,1e5")
    pw.add_argument("--p-grid", type=str)
    pw.add_argument("--ratio", type=float, help="n/p for fixed_ratio mode")
    pw.add_argument("--anchor-fraction", type=float)
    pw.add_argument("--reps", type=int)
    pw.add_argument("--delta0", type=float)
    pw.add_argument("--hunter", choices=["spa", "cluster-sp"])

    pd = sub.add_parser("diagnose", help="singular-vector and P-recovery diagnostics")
    common(pd)
    pd.add_argument("--counts")
    pd.add_argument("--model-dir")
    pd.add_argument("--r", type=int)
    pd.add_argument("--delta0", type=float)
    pd.add_argument("--smoothing", type=float)

    return parser


def effective_config(args: argparse.Namespace, command: str) -> dict:
    """Merge defaults, config file, and explicitly passed flags."""
    cfg = dict(DEFAULTS[command])
    if args.config:
        file_cfg = fileio.read_json(args.config)
        unknown = sorted(set(file_cfg) - set(cfg))
        if unknown:
            raise ValueError(f"unknown config keys for {command}: {unknown}")
        cfg.update(file_cfg)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "workers", None) is not None:
        cfg["workers"] = args.workers
    return cfg


def _require(cfg: dict, command: str, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ValueError(f"{command}: missing required options {missing}")


def _out_dir(cfg: dict, command: str) -> Path:
    _require(cfg, command, "out")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: dict, timings: dict, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": {k: v for k, v in cfg.items()},
        "timings_ms": timings,
    }
    if extra:
        manifest.update(extra)
    fileio.write_json(out / "run_manifest.json", manifest)


def cmd_simulate(cfg: dict) -> None:
    out = _out_dir(cfg, "simulate")
    n = parse_count(cfg["n"])
    if n < 1:
        raise ValueError("n must be >= 1")
    timings = {}
    t0 = time.perf_counter()
    if cfg["model_dir"]:
        model = fileio.load_model(cfg["model_dir"])
        spec_info = {"loaded_from": str(cfg["model_dir"])}
    else:
        if cfg["r"] < 2:
            raise ValueError("simulate needs r >= 2 to plant anchors")
        spec = SynthSpec(
            p=cfg["p"], r=cfg["r"], anchors_per_meta=cfg["anchors"],
            dirichlet_alpha=cfg["alpha"], seed=cfg["seed"], margin=cfg["margin"],
        )
        model = generate_model(spec)
        spec_info = {
            "anchors_per_meta": spec.anchors_per_meta, "dirichlet_alpha": spec.dirichlet_alpha,
            "seed": spec.seed, "margin": spec.margin,
        }
    timings["model"] = 1000 * (time.perf_counter() - t0)

    t0 = time.perf_counter()
    fileio.save_model(out / "model", model, spec_info)
    report = check_regularity(model)
    fileio.write_json(out / "model" / "regularity.json", report.as_dict())
    timings["regularity"] = 1000 * (time.perf_counter() - t0)

    t0 = time.perf_counter()
    x0 = cfg["x0"]
    if isinstance(x0, str) and x0 != "stationary":
        x0 = int(x0)
    traj = sample_trajectory(model.transition_matrix(), n, x0=x0, seed=cfg["seed"] + 1)
    counts = count_transitions(traj, model.p)
    timings["sample"] = 1000 * (time.perf_counter() - t0)

    fileio.write_trajectory(out / "trajectory.txt", traj)
    fileio.write_counts(out / "counts.txt", counts)
    _write_manifest(out, "simulate", cfg, timings)
    log.info("simulate: wrote model + %d transitions to %s", n, out)


def cmd_ingest(cfg: dict) -> None:
    out = _out_dir(cfg, "ingest")
    _require(cfg, "ingest", "csv")
    timings = {}
    t0 = time.perf_counter()
    if cfg["format"] == "labeled":
        counts, dictionary, summary = ingest_labeled_trips(
            cfg["csv"], cfg["origin_col"], cfg["dest_col"]
        )
    else:
        _require(cfg, "ingest", "lat_min", "lat_max", "lon_min", "lon_max",
                 "grid_rows", "grid_cols")
        grid = GridSpec(
            lat_min=cfg["lat_min"], lat_max=cfg["lat_max"],
            lon_min=cfg["lon_min"], lon_max=cfg["lon_max"],
            rows=cfg["grid_rows"], cols=cfg["grid_cols"],
        )
        counts, dictionary, summary = ingest_coordinate_trips(
            cfg["csv"], grid,
            cfg["origin_lat_col"], cfg["origin_lon_col"],
            cfg["dest_lat_col"], cfg["dest_lon_col"],
        )
    timings["ingest"] = 1000 * (time.perf_counter() - t0)
    fileio.write_counts(out / "counts.txt", counts)
    fileio.write_json(out / "dictionary.json", {"labels": list(dictionary.labels)})
    fileio.write_json(out / "summary.json", summary.as_dict())
    _write_manifest(out, "ingest", cfg, timings)
    log.info("ingest: %d rows -> %d states, %d transitions", summary.rows_read,
             summary.p, summary.n)


def cmd_estimate(cfg: dict) -> None:
    out = _out_dir(cfg, "estimate")
    if bool(cfg["counts"]) == bool(cfg["oracle"]):
        raise ValueError("estimate needs exactly one of --counts or --oracle")
    options = EstimateOptions(
        hunter=cfg["hunter"],
        cluster_size=cfg["cluster_l"],
        seed=cfg["seed"],
        smoothing=cfg["smoothing"],
        on_zero_mass="drop" if cfg["drop_unvisited"] else "error",
        score_floor=cfg["score_floor"],
    )
    timings = {}
    t0 = time.perf_counter()
    if cfg["oracle"]:
        model = fileio.load_model(cfg["oracle"])
        est = estimate_oracle(model, r=cfg["r"], delta0=cfg["delta0"], options=options)
    else:
        _require(cfg, "estimate", "r")
        counts = fileio.read_counts(cfg["counts"])
        est = estimate(counts, cfg["r"], delta0=cfg["delta0"], options=options)
    timings["estimate"] = 1000 * (time.perf_counter() - t0)
    save_estimate(out, est, manifest_extra={
        "command": "estimate", "version": __version__, "config": cfg, "timings_ms": timings,
    })
    log.info("estimate: p=%d r=%d anchors=%d -> %s", est.p, est.r, len(est.anchors), out)


def cmd_evaluate(cfg: dict) -> None:
    out = _out_dir(cfg, "evaluate")
    _require(cfg, "evaluate", "estimate_dir", "model_dir")
    est = load_estimate(cfg["estimate_dir"])
    model = fileio.load_model(cfg["model_dir"])
    t0 = time.perf_counter()
    scores = align_and_score(est, model)
    timings = {"evaluate": 1000 * (time.perf_counter() - t0)}
    fileio.write_json(out / "errors.json", scores.as_dict())
    _write_manifest(out, "evaluate", cfg, timings)
    log.info("evaluate: tv_V_mean=%.4g anchors_exact=%s", scores.tv_V_mean, scores.anchors_exact)


def _sweep_config(cfg: dict) -> SweepConfig:
    mode = cfg["mode"]
    # sweep cells are independent; default to all logical cores
    workers = cfg["workers"] if cfg["workers"] else (os.cpu_count() or 1)
    common = dict(
        mode=mode, r=cfg["r"], reps=cfg["reps"], seed=cfg["seed"], delta0=cfg["delta0"],
        dirichlet_alpha=cfg["alpha"], margin=cfg["margin"], hunter=cfg["hunter"],
        workers=workers,
    )
    if mode == "fixed_p":
        return SweepConfig(p=cfg["p"], n_grid=parse_grid(cfg["n_grid"]),
                           anchors_per_meta=cfg["anchors"], **common)
    return SweepConfig(p_grid=parse_grid(cfg["p_grid"]), ratio=cfg["ratio"],
                       anchor_fraction=cfg["anchor_fraction"], **common)


def _cell_path(cells_dir: Path, gi: int, rep: int) -> Path:
    return cells_dir / f"cell_{gi:03d}_{rep:02d}.json"


def cmd_sweep(cfg: dict) -> None:
    out = _out_dir(cfg, "sweep")
    config = _sweep_config(cfg)
    cells_dir = out / "cells"
    cells_dir.mkdir(exist_ok=True)

    grid = config.grid_points()
    keys = [(gi, rep) for gi in range(len(grid)) for rep in range(config.reps)]
    records: dict[tuple[int, int], CellRecord] = {}
    for gi, rep in keys:
        path = _cell_path(cells_dir, gi, rep)
        if path.exists():
            records[(gi, rep)] = CellRecord(**fileio.read_json(path))
    todo = [k for k in keys if k not in records]
    log.info("sweep: %d cells total, %d cached, %d to run", len(keys), len(records), len(todo))

    t0 = time.perf_counter()
    if config.workers > 1 and len(todo) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = {key: pool.submit(run_sweep_cell, config, *key) for key in todo}
            for key, fut in futures.items():
                rec = fut.result()
                records[key] = rec
                fileio.write_json(_cell_path(cells_dir, *key), rec.__dict__)
    else:
        for key in todo:
            rec = run_sweep_cell(config, *key)
            records[key] = rec
            fileio.write_json(_cell_path(cells_dir, *key), rec.__dict__)
    timings = {"cells": 1000 * (time.perf_counter() - t0)}

    ordered = [records[k] for k in keys]
    fit = fit_sweep(config, ordered)

    lines = [",".join(CellRecord.CSV_COLUMNS)]
    for rec in ordered:
        if rec.error is not None:
            continue
        lines.append(",".join(
            fileio.format_float(getattr(rec, col)) if isinstance(getattr(rec, col), float)
            else str(getattr(rec, col))
            for col in CellRecord.CSV_COLUMNS
        ))
    (out / "sweep_results.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    failures = [
        {"grid_index": gi, "rep": rep, "error": records[(gi, rep)].error}
        for gi, rep in keys if records[(gi, rep)].error is not None
    ]
    fileio.write_json(out / "ratefit.json", {
        "mode": config.mode,
        "slope": fit.slope,
        "intercept": fit.intercept,
        "points": [[n, mean, std] for n, mean, std in fit.points],
        "failures": failures,
    })
    _write_manifest(out, "sweep", cfg, timings)
    log.info("sweep: slope %.3f over %d grid points", fit.slope, len(fit.points))


def cmd_diagnose(cfg: dict) -> None:
    out = _out_dir(cfg, "diagnose")
    _require(cfg, "diagnose", "counts", "model_dir", "r")
    counts = fileio.read_counts(cfg["counts"])
    model = fileio.load_model(cfg["model_dir"])
    timings = {}
    t0 = time.perf_counter()
    scaled = scale_counts(counts, smoothing=cfg["smoothing"])
    decomp = top_r_svd(scaled, cfg["r"])
    diag = singular_diagnostics(decomp, model)
    comparison = compare_P_estimators(counts, model, cfg["r"], delta0=cfg["delta0"])
    timings["diagnose"] = 1000 * (time.perf_counter() - t0)

    fileio.write_matrix_csv(out / "sigma.csv", decomp.sigma[:, None])
    fileio.write_matrix_csv(out / "H.csv", decomp.H_hat)
    fileio.write_matrix_csv(out / "G.csv", decomp.G_hat)
    fileio.write_json(out / "diagnostics.json", {
        "h1_max_abs_error": diag.h1_max_abs_error,
        "subspace_rowwise_max_error": diag.subspace_rowwise_max_error,
        "omega": diag.omega,
        "tv_P_lowrank": comparison.tv_lowrank,
        "tv_P_empirical": comparison.tv_empirical,
    })
    _write_manifest(out, "diagnose", cfg, timings)


HANDLERS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    logging.basicConfig(level=getattr(logging, args.log_level.upper()))
    try:
        cfg = effective_config(args, args.command)
        HANDLERS[args.command](cfg)
        return EXIT_OK
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"softagg {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"softagg {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"softagg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
