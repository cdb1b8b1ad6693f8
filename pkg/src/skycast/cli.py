"""Command-line pipeline orchestration.

Subcommands cover the full experiment cycle: generate, prepare, train,
evaluate, sweep, sensitivity, whatif. Every command validates its
config before touching anything, writes outputs only under --out, and
drops a run_meta.json there (config echo, seeds, input hashes, wall
time). Exit codes: 0 success, 2 config error, 3 missing or invalid
input, 1 runtime failure; errors print as "error: <category>: <message>"
on stderr.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analyses import (
    adaptation_summary,
    default_search_space,
    future_closed_closure,
    random_search,
    sensitivity_run,
    shock_summary,
    trend_analysis,
    whatif,
    window_sweep,
    write_search,
    write_sensitivity,
    write_sweep,
    write_trend,
    write_whatif,
)
from .datasetio import load_dataset, write_dataset
from .errors import (
    ConfigurationError,
    MissingInputError,
    SkycastError,
)
from .reporting import (
    DEFAULT_BASELINES,
    DISPLAY_NAMES,
    evaluate_baselines,
    mse_table,
    write_baseline_records,
    write_mse_table,
)
from .runconfig import RunConfig, load_config, resolve_seed
from .synthgen import FeatureScales, ShockConfig, generate_dataset
from .tensorize import load_prepared, prepare_dataset
from .training import evaluate, load_checkpoint, train, write_flight_records


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _input_hash(path: Path) -> str:
    """Identify an input artifact by its most characteristic file."""
    if path.is_dir():
        for name in ("manifest.csv", "params.npz", "meta.json"):
            if (path / name).exists():
                return _sha256(path / name)
        raise MissingInputError(f"{path} is not a recognized artifact directory")
    if not path.exists():
        raise MissingInputError(f"input {path} does not exist")
    return _sha256(path)


def _write_run_meta(
    out: Path,
    command: str,
    cfg: RunConfig | None,
    seed: int | None,
    inputs: dict[str, str],
    started: float,
) -> None:
    meta = {
        "command": command,
        "config": cfg.echo() if cfg is not None else None,
        "seed": seed,
        "inputs": inputs,
        "package_version": __version__,
        "wall_time_s": round(time.time() - started, 3),
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n"
    )


def _plot_lines(path: Path, series: dict[str, tuple], xlabel: str, ylabel: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", markersize=2.5, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# ------------------------------------------------------------- commands

def _generate_one_market(payload):
    market, start, end, seed, brackets, intervals, n_history, scales = payload
    return generate_dataset(
        [market], (start, end), seed=seed, brackets=brackets,
        intervals=intervals, n_history=n_history, feature_scales=scales,
    )


def cmd_generate(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    seed = resolve_seed(args.seed, cfg)
    out = Path(args.out)
    markets = cfg.markets()
    brackets, intervals = cfg.brackets(), cfg.intervals()
    if args.jobs < 1:
        raise ConfigurationError("--jobs must be >= 1")
    if args.jobs == 1 or len(markets) == 1:
        records = generate_dataset(
            markets, (cfg.start_date, cfg.end_date), seed=seed,
            brackets=brackets, intervals=intervals, n_history=cfg.n_history,
        )
    else:
        scales = FeatureScales.from_markets(markets)
        payloads = [
            (m, cfg.start_date, cfg.end_date, seed, brackets, intervals,
             cfg.n_history, scales)
            for m in markets
        ]
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=min(args.jobs, len(markets))
        ) as pool:
            chunks = list(pool.map(_generate_one_market, payloads))
        records = [rec for chunk in chunks for rec in chunk]
    write_dataset(records, out, seed=seed, markets=markets,
                  brackets=brackets, intervals=intervals)
    _write_run_meta(out, "generate", cfg, seed,
                    {"config": _input_hash(Path(args.config))
                     if Path(args.config).exists() else "bundled"},
                    started)
    print(f"generated {len(records)} flights -> {out}")
    return 0


def cmd_prepare(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    out = Path(args.out)
    dataset = load_dataset(args.dataset)
    prepared = prepare_dataset(
        dataset, out, n_history=cfg.n_history,
        test_months=cfg.test_months, val_fraction=cfg.val_fraction,
    )
    _write_run_meta(out, "prepare", cfg, None,
                    {"dataset": _input_hash(Path(args.dataset))}, started)
    counts = {
        split: len(prepared.split_examples(split))
        for split in ("train", "val", "test")
    }
    print(f"prepared {len(prepared.examples)} examples {counts} -> {out}")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    seed = resolve_seed(args.seed, cfg)
    out = Path(args.out)
    prepared = load_prepared(args.prepared)
    tc = cfg.train_config(variant=args.variant, seed=seed)
    result = train(tc, prepared, out_dir=out)
    _write_run_meta(out, "train", cfg, seed,
                    {"prepared": _input_hash(Path(args.prepared))}, started)
    print(f"trained {tc.variant}: best epoch {result.best_epoch} "
          f"val mse {result.best_val_mse:.6g} -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prepared = load_prepared(args.prepared)
    prepared_hash = prepared.meta.get("dataset_hash")
    results: dict[str, float] = {}
    metric_rows = []
    inputs = {"prepared": _input_hash(Path(args.prepared))}
    for ckpt_path in args.checkpoint:
        ck = load_checkpoint(ckpt_path)
        name = DISPLAY_NAMES[ck.variant]
        if name in results:
            raise ConfigurationError(
                f"two checkpoints map to the same table row {name!r}"
            )
        ck_hash = ck.meta.get("dataset_hash")
        if ck_hash and prepared_hash and ck_hash != prepared_hash:
            raise ConfigurationError(
                f"checkpoint {ckpt_path} was trained on a different dataset "
                "than the prepared directory under evaluation"
            )
        val = evaluate(ck.model, prepared, "val", n_history=ck.n_history)
        test = evaluate(ck.model, prepared, "test", n_history=ck.n_history)
        results[name] = test.mse_totals
        write_flight_records(test, out / f"records_{ck.variant}.csv")
        points, note = trend_analysis(test, horizon_days=cfg.trend_horizon)
        write_trend(out / f"trend_{ck.variant}.csv", points, note)
        if args.plot:
            _plot_lines(
                out / f"trend_{ck.variant}.png",
                {name: ([p.day_offset for p in points],
                        [p.mean_abs_differential for p in points])},
                "days from test start", "mean |observed - predicted|",
            )
        metric_rows.append((name, ck.variant, val, test))
        inputs[str(ckpt_path)] = _input_hash(Path(ckpt_path))
    wanted = [b.strip() for b in args.baselines.split(",") if b.strip()]
    if wanted:
        base_mses, base_records = evaluate_baselines(prepared, include=wanted)
        results.update(base_mses)
        write_baseline_records(out / "baseline_records.csv", base_records)
    table = mse_table(results, reference=args.reference)
    write_mse_table(out / "mse_table.csv", table)
    improvements = {row.model: row.improvement_pct for row in table}
    with open(out / "metrics.csv", "w") as fh:
        fh.write("model,variant,val_mse_tensor,val_mse_totals,"
                 "test_mse_tensor,test_mse_totals,improvement_pct\n")
        for name, variant, val, test in metric_rows:
            fh.write(f"{name},{variant},{val.mse_tensor:.10g},"
                     f"{val.mse_totals:.10g},{test.mse_tensor:.10g},"
                     f"{test.mse_totals:.10g},{improvements[name]:.2f}\n")
    _write_run_meta(out, "evaluate", cfg, None, inputs, started)
    for row in table:
        print(f"{row.model:>18s}  mse {row.mse:.6g}  "
              f"improvement {row.improvement_pct:+.2f}%")
    return 0


def cmd_sweep(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    seed = resolve_seed(args.seed, cfg)
    out = Path(args.out)
    prepared = load_prepared(args.prepared)
    tc = cfg.train_config(seed=seed)
    inputs = {"prepared": _input_hash(Path(args.prepared))}
    if (args.values is None) == (args.random_budget is None):
        raise ConfigurationError(
            "pass exactly one of --values (window sweep) or --random-budget"
        )
    if args.values is not None:
        if args.param != "window_size":
            raise ConfigurationError(
                f"only window_size sweeps are supported, got {args.param!r}"
            )
        try:
            n_values = [int(v) for v in args.values.split(",")]
        except ValueError:
            raise ConfigurationError(f"--values must be integers: {args.values!r}")
        points = window_sweep(n_values, tc, prepared)
        write_sweep(out / "sweep.csv", points)
        if args.plot:
            kept = [p for p in points if not p.skipped]
            _plot_lines(out / "sweep.png",
                        {"val mse": ([p.n for p in kept],
                                     [p.val_mse for p in kept])},
                        "window size n", "validation MSE")
        for p in points:
            status = "skipped" if p.skipped else f"{p.val_mse:.6g}"
            print(f"n={p.n}: {status}")
    else:
        space = cfg.search_space or default_search_space()
        trials = random_search(space, args.random_budget, seed, tc, prepared)
        write_search(out / "search.csv", trials)
        best = trials[0]
        print(f"best trial {best.index}: val mse {best.val_mse:.6g} "
              f"params {best.params}")
    _write_run_meta(out, "sweep", cfg, seed, inputs, started)
    return 0


def cmd_sensitivity(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    out = Path(args.out)
    ck = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    shock = ShockConfig(
        shock_date_offset=args.shock_day if args.shock_day is not None
        else cfg.shock_offset,
        capacity_multiplier=args.shock_mult if args.shock_mult is not None
        else cfg.shock_multiplier,
    )
    points, _ = sensitivity_run(
        ck, shock, dataset, out,
        test_months=cfg.test_months, val_fraction=cfg.val_fraction,
    )
    write_sensitivity(out / "sensitivity.csv", points)
    summary = shock_summary(points, shock)
    summary.update(adaptation_summary(points))
    summary["shock_date_offset"] = shock.shock_date_offset
    summary["capacity_multiplier"] = shock.capacity_multiplier
    (out / "sensitivity_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n"
    )
    if args.plot:
        _plot_lines(
            out / "sensitivity.png",
            {"model": ([p.day_offset for p in points],
                       [p.model_differential for p in points]),
             "seasonal naive": ([p.day_offset for p in points],
                                [p.naive_differential for p in points])},
            "days from test start", "observed - predicted",
        )
    _write_run_meta(out, "sensitivity", cfg, None,
                    {"checkpoint": _input_hash(Path(args.checkpoint)),
                     "dataset": _input_hash(Path(args.dataset))},
                    started)
    print(f"naive differential {summary['post_shock_naive_differential']:.4g} "
          f"vs analytic {summary['analytic_expectation']:.4g}; "
          f"adaptation {summary['early_mean_abs']:.4g} -> "
          f"{summary['late_mean_abs']:.4g}")
    return 0


def cmd_whatif(args) -> int:
    started = time.time()
    out = Path(args.out)
    ck = load_checkpoint(args.checkpoint)
    prepared = load_prepared(args.prepared)
    matches = [e for e in prepared.examples if e.example_id == args.flight]
    if not matches:
        raise MissingInputError(
            f"flight {args.flight!r} not found in the prepared dataset"
        )
    example = matches[0]
    if (args.closure_file is None) == (not args.close_future):
        raise ConfigurationError(
            "pass exactly one of --closure-file or --close-future"
        )
    if args.close_future:
        alt = future_closed_closure(prepared, example, ck.n_history)
    else:
        closure_path = Path(args.closure_file)
        if not closure_path.exists():
            raise MissingInputError(f"closure file {closure_path} does not exist")
        alt = np.loadtxt(closure_path, delimiter=",", ndmin=2)
    result = whatif(ck, prepared, example, alt)
    write_whatif(out / "whatif.csv", result)
    _write_run_meta(out, "whatif", None, None,
                    {"checkpoint": _input_hash(Path(args.checkpoint)),
                     "prepared": _input_hash(Path(args.prepared))},
                    started)
    print(f"{example.example_id}: baseline total {result.baseline_total:.4g}, "
          f"scenario total {result.scenario_total:.4g}, "
          f"delta {result.total_delta:+.4g} passengers")
    return 0


# --------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skycast",
        description="Flight-level passenger traffic forecasting pipeline.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a booking dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("prepare", help="assemble windows, normalize, split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--prepared", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--variant", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score checkpoints and baselines")
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--prepared", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--reference", default="ConvLSTM")
    p.add_argument("--baselines", default=",".join(DEFAULT_BASELINES))
    p.add_argument("--plot", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="window sweep or random search")
    p.add_argument("--prepared", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--param", default="window_size")
    p.add_argument("--values", default=None,
                   help="comma-separated window sizes")
    p.add_argument("--random-budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--plot", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("sensitivity", help="capacity-shock differential run")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--shock-day", type=int, default=None)
    p.add_argument("--shock-mult", type=float, default=None)
    p.add_argument("--plot", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("whatif", help="closure scenario for one flight")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prepared", required=True)
    p.add_argument("--flight", required=True)
    p.add_argument("--closure-file", default=None)
    p.add_argument("--close-future", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_whatif)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as err:
        print(f"error: {err.category}: {err}", file=sys.stderr)
        return 2
    except MissingInputError as err:
        print(f"error: {err.category}: {err}", file=sys.stderr)
        return 3
    except SkycastError as err:
        print(f"error: {err.category}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
