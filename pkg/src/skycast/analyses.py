"""Experiment operations layered on the training pipeline.

Window sweeps, random hyperparameter search, per-day trend curves,
capacity-shock sensitivity runs, and closure what-if scenarios. The
sign convention everywhere is differential = observed - predicted, so
positive values mean the model under-predicted.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import warnings
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .baselines import DailySeries, seasonal_naive_forecast
from .datasetio import Dataset, load_dataset, write_dataset
from .errors import ConfigurationError, ShapeError
from .hashing import rng_from
from .masking import WINDOW_SPACING_DAYS, mask_volume, window_boundaries
from .models import HyperParams
from .reporting import market_total_series
from .synthgen import ShockConfig, generate_dataset
from .tensorize import PreparedDataset, PreparedExample, prepare_dataset
from .training import (
    EvalResult,
    LoadedCheckpoint,
    TrainConfig,
    evaluate,
    train,
)


# ---------------------------------------------------------------- sweep

@dataclasses.dataclass(frozen=True)
class SweepPoint:
    n: int
    val_mse: float
    skipped: bool


def window_sweep(
    n_values: Sequence[int],
    config: TrainConfig,
    prepared: PreparedDataset,
) -> list[SweepPoint]:
    """Validation MSE as a function of history window length.

    Each point is a full train/evaluate with only window_size changed;
    seeds stay fixed. Lengths beyond what the prepared dataset stored
    are marked skipped rather than failing the sweep.
    """
    points = []
    for n in sorted(set(int(v) for v in n_values)):
        if n < 1:
            raise ConfigurationError(f"window size must be >= 1, got {n}")
        if n > prepared.n_history:
            points.append(SweepPoint(n=n, val_mse=float("nan"), skipped=True))
            continue
        cfg = dataclasses.replace(
            config, hp=dataclasses.replace(config.hp, window_size=n)
        )
        result = train(cfg, prepared, n_history=n)
        val = evaluate(result.model, prepared, "val", n_history=n)
        points.append(SweepPoint(n=n, val_mse=val.mse_tensor, skipped=False))
    return points


def write_sweep(path: str | Path, points: Sequence[SweepPoint]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("n,val_mse,skipped\n")
        for p in points:
            fh.write(f"{p.n},{p.val_mse:.10g},{str(p.skipped).lower()}\n")
    return path


# --------------------------------------------------------------- search

@dataclasses.dataclass(frozen=True)
class ParamRange:
    """Uniform (optionally log-uniform) range; integer rounds draws."""

    low: float
    high: float
    log: bool = False
    integer: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise ConfigurationError(
                f"range low {self.low} must be < high {self.high}"
            )
        if self.log and self.low <= 0:
            raise ConfigurationError("log-uniform range needs low > 0")

    def sample(self, rng: np.random.Generator):
        if self.integer:
            return int(rng.integers(int(self.low), int(self.high) + 1))
        if self.log:
            return float(np.exp(rng.uniform(np.log(self.low), np.log(self.high))))
        return float(rng.uniform(self.low, self.high))


@dataclasses.dataclass(frozen=True)
class ParamChoice:
    options: tuple

    def __post_init__(self):
        if len(self.options) == 0:
            raise ConfigurationError("choice needs at least one option")

    def sample(self, rng: np.random.Generator):
        return self.options[int(rng.integers(len(self.options)))]


def default_search_space() -> dict:
    return {
        "learning_rate": ParamRange(3e-4, 6e-3, log=True),
        "temporal_channels": ParamChoice((8, 12, 16, 24)),
        "decoder_channels": ParamChoice((16, 32, 48)),
        "kernel_size": ParamChoice((3, 5)),
        "batch_size": ParamChoice((16, 32, 64)),
    }


@dataclasses.dataclass(frozen=True)
class SearchTrial:
    index: int
    params: dict
    val_mse: float


_HP_FIELDS = {f.name for f in dataclasses.fields(HyperParams)}


def random_search(
    space: Mapping,
    budget: int,
    seed: int,
    config: TrainConfig,
    prepared: PreparedDataset,
) -> list[SearchTrial]:
    """Train `budget` sampled configurations; ranked by validation MSE.

    Trial 0 always evaluates the incoming config unchanged, so the
    search winner can never be worse than the default. Later trials
    draw each parameter independently from (seed, trial index).
    """
    if budget < 1:
        raise ConfigurationError(f"search budget must be >= 1, got {budget}")
    unknown = set(space) - _HP_FIELDS
    if unknown:
        raise ConfigurationError(
            f"search space names unknown hyperparameters: {sorted(unknown)}"
        )
    trials = []
    for index in range(budget):
        if index == 0:
            params: dict = {}
        else:
            rng = rng_from(seed, "search", index)
            params = {name: space[name].sample(rng) for name in sorted(space)}
        hp = dataclasses.replace(config.hp, seed=config.hp.seed, **params)
        cfg = dataclasses.replace(config, hp=hp)
        result = train(cfg, prepared)
        val = evaluate(result.model, prepared, "val", n_history=hp.window_size)
        trials.append(SearchTrial(index=index, params=params, val_mse=val.mse_tensor))
    return sorted(trials, key=lambda t: (t.val_mse, t.index))


def write_search(path: str | Path, trials: Sequence[SearchTrial]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("rank,trial,val_mse,params\n")
        for rank, t in enumerate(trials):
            parts = ";".join(
                f"{k}={v:.10g}" if isinstance(v, float) else f"{k}={v}"
                for k, v in sorted(t.params.items())
            )
            fh.write(f"{rank},{t.index},{t.val_mse:.10g},{parts}\n")
    return path


# ---------------------------------------------------------------- trend

@dataclasses.dataclass(frozen=True)
class TrendPoint:
    day_offset: int
    n_flights: int
    mean_abs_differential: float
    mean_observed: float
    mean_predicted: float


def trend_analysis(
    eval_result: EvalResult, horizon_days: int = 100
) -> tuple[list[TrendPoint], str | None]:
    """Per-day mean |observed - predicted| raw totals across markets.

    Day offsets count from the split's reference date. When the split
    is shorter than the horizon the series truncates and a warning
    string is returned (and emitted via warnings.warn).
    """
    if horizon_days < 1:
        raise ConfigurationError("horizon_days must be >= 1")
    per_day = eval_result.per_day()
    span = max(per_day) + 1
    note = None
    if span < horizon_days:
        note = (
            f"split spans {span} days; trend truncated from "
            f"horizon {horizon_days}"
        )
        warnings.warn(note)
    points = []
    for day in range(min(horizon_days, span)):
        recs = per_day.get(day, [])
        if not recs:
            continue
        obs = np.array([r.observed_raw for r in recs])
        pred = np.array([r.predicted_raw for r in recs])
        points.append(TrendPoint(
            day_offset=day,
            n_flights=len(recs),
            mean_abs_differential=float(np.mean(np.abs(obs - pred))),
            mean_observed=float(obs.mean()),
            mean_predicted=float(pred.mean()),
        ))
    return points, note


def write_trend(
    path: str | Path, points: Sequence[TrendPoint], note: str | None = None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("# differential = observed - predicted (positive: under-prediction)\n")
        if note:
            fh.write(f"# warning: {note}\n")
        fh.write("day_offset,n_flights,mean_abs_differential,"
                 "mean_observed,mean_predicted\n")
        for p in points:
            fh.write(
                f"{p.day_offset},{p.n_flights},{p.mean_abs_differential:.10g},"
                f"{p.mean_observed:.10g},{p.mean_predicted:.10g}\n"
            )
    return path


# ---------------------------------------------------------- sensitivity

@dataclasses.dataclass(frozen=True)
class SensitivityPoint:
    day_offset: int
    observed_mean: float
    model_predicted: float
    model_differential: float
    naive_predicted: float
    naive_differential: float


def sensitivity_run(
    checkpoint: LoadedCheckpoint,
    shock: ShockConfig,
    dataset: Dataset,
    workdir: str | Path,
    test_months: int = 3,
    val_fraction: float = 0.10,
    batch_size: int = 64,
) -> tuple[list[SensitivityPoint], EvalResult]:
    """Score the model on a shocked regeneration of its dataset.

    The scenario reuses the base dataset's markets, range, and seed, so
    every pre-shock flight is bit-identical to the original and the
    difference is attributable to the shock alone. The baseline column
    is a seasonal-naive forecaster frozen at the test boundary, blind
    to everything after it.
    """
    dates = dataset.dates()
    start, end = min(dates), max(dates)
    records = generate_dataset(
        dataset.markets,
        (start, end),
        shock=shock,
        seed=dataset.seed,
        brackets=dataset.brackets,
        intervals=dataset.intervals,
        n_history=checkpoint.n_history,
    )
    workdir = Path(workdir)
    write_dataset(
        records, workdir / "shocked_dataset", seed=dataset.seed,
        markets=dataset.markets, brackets=dataset.brackets,
        intervals=dataset.intervals, shock=shock,
    )
    shocked = load_dataset(workdir / "shocked_dataset")
    prepared = prepare_dataset(
        shocked, workdir / "shocked_prepared",
        n_history=checkpoint.n_history,
        test_months=test_months, val_fraction=val_fraction,
    )
    ev = evaluate(checkpoint.model, prepared, "test",
                  n_history=checkpoint.n_history, batch_size=batch_size)

    naive: dict[str, np.ndarray] = {}
    horizons: dict[str, list[dt.date]] = {}
    for market, series in market_total_series(prepared).items():
        scale = prepared.normalizer.scale(market)
        raw = DailySeries(market, series.dates, series.values * scale)
        n_hist = sum(1 for d in raw.dates if d < prepared.plan.test_start)
        history = DailySeries(market, raw.dates[:n_hist], raw.values[:n_hist])
        horizon = len(raw.dates) - n_hist
        naive[market] = seasonal_naive_forecast(history, horizon)
        horizons[market] = list(raw.dates[n_hist:])

    points = []
    for day, recs in sorted(ev.per_day().items()):
        obs = float(np.mean([r.observed_raw for r in recs]))
        pred = float(np.mean([r.predicted_raw for r in recs]))
        base_preds = []
        for r in recs:
            idx = horizons[r.market_id].index(r.departure_date)
            base_preds.append(naive[r.market_id][idx])
        base = float(np.mean(base_preds))
        points.append(SensitivityPoint(
            day_offset=day,
            observed_mean=obs,
            model_predicted=pred,
            model_differential=obs - pred,
            naive_predicted=base,
            naive_differential=obs - base,
        ))
    return points, ev


def shock_summary(points: Sequence[SensitivityPoint], shock: ShockConfig) -> dict:
    """Analytic-expectation check for a baseline blind to the shock.

    A forecaster frozen before the shock keeps predicting the old
    level, so its post-shock differential should sit near
    (multiplier - 1) x the pre-shock mean daily total.
    """
    offset = shock.shock_date_offset
    pre = [p.observed_mean for p in points if p.day_offset < offset]
    post = [p.naive_differential for p in points if p.day_offset >= offset]
    if not pre or not post:
        raise ConfigurationError(
            f"shock offset {offset} leaves an empty pre- or post-shock window"
        )
    pre_mean = float(np.mean(pre))
    post_diff = float(np.mean(post))
    expected = (shock.capacity_multiplier - 1.0) * pre_mean
    rel = abs(post_diff - expected) / abs(expected) if expected != 0 else float("nan")
    return {
        "pre_shock_mean_total": pre_mean,
        "post_shock_naive_differential": post_diff,
        "analytic_expectation": expected,
        "relative_error": rel,
    }


def adaptation_summary(
    points: Sequence[SensitivityPoint],
    early: tuple[int, int] = (20, 34),
    late: tuple[int, int] = (35, 60),
) -> dict:
    """Mean |model differential| in two day windows (inclusive bounds)."""
    def window_mean(lo, hi):
        vals = [abs(p.model_differential) for p in points if lo <= p.day_offset <= hi]
        if not vals:
            raise ConfigurationError(f"no points in day window [{lo}, {hi}]")
        return float(np.mean(vals))

    return {
        "early_mean_abs": window_mean(*early),
        "late_mean_abs": window_mean(*late),
    }


def write_sensitivity(path: str | Path, points: Sequence[SensitivityPoint]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("# differential = observed - predicted (positive: under-prediction)\n")
        fh.write("day_offset,observed_mean,model_predicted,model_differential,"
                 "seasonal_naive_predicted,seasonal_naive_differential\n")
        for p in points:
            fh.write(
                f"{p.day_offset},{p.observed_mean:.10g},{p.model_predicted:.10g},"
                f"{p.model_differential:.10g},{p.naive_predicted:.10g},"
                f"{p.naive_differential:.10g}\n"
            )
    return path


# --------------------------------------------------------------- whatif

@dataclasses.dataclass
class WhatIfResult:
    example_id: str
    baseline_total: float
    scenario_total: float
    total_delta: float
    delta: np.ndarray
    baseline_prediction: np.ndarray
    scenario_prediction: np.ndarray
    target_boundary: int


def whatif(
    checkpoint: LoadedCheckpoint,
    prepared: PreparedDataset,
    example: PreparedExample,
    alternative_closure: np.ndarray,
) -> WhatIfResult:
    """Re-predict one flight with its target closure slice swapped.

    Two forward passes differ only in the target's closure; deltas are
    denormalized to passengers. Identical closures give exactly zero
    delta because evaluation is deterministic.
    """
    alt = np.asarray(
        getattr(alternative_closure, "values", alternative_closure),
        dtype=np.float32,
    )
    n = checkpoint.n_history
    arrays = prepared.arrays(example, n)
    target_closure = arrays["closure"][-1]
    if alt.shape != target_closure.shape:
        raise ShapeError(
            f"closure shape {alt.shape} does not match {target_closure.shape}"
        )
    if np.any(alt < 0) or np.any(alt > 1) or not np.all(np.isfinite(alt)):
        raise ShapeError("closure fractions must be finite and within [0, 1]")
    reference = prepared.plan.reference_date(example.split)
    member_dates = [
        example.departure_date - dt.timedelta(days=WINDOW_SPACING_DAYS * (n - m))
        for m in range(n + 1)
    ]
    bounds = window_boundaries(member_dates, reference, prepared.intervals)
    traffic = mask_volume(arrays["traffic"], bounds)

    def run(closure_volume: np.ndarray) -> np.ndarray:
        batch = {
            "traffic": torch.from_numpy(traffic[None]),
            "closure": torch.from_numpy(closure_volume[None].astype(np.float32)),
            "season": torch.from_numpy(arrays["season"][None]),
            "label": torch.from_numpy(arrays["label"][None]),
        }
        model = checkpoint.model
        model.eval()
        with torch.no_grad():
            return model(batch)[0].numpy()

    baseline_closure = arrays["closure"]
    scenario_closure = baseline_closure.copy()
    scenario_closure[-1] = alt
    scale = prepared.normalizer.scale(example.market_id)
    base = run(baseline_closure) * scale
    scen = run(scenario_closure) * scale
    delta = scen - base
    return WhatIfResult(
        example_id=example.example_id,
        baseline_total=float(base.sum()),
        scenario_total=float(scen.sum()),
        total_delta=float(delta.sum()),
        delta=delta,
        baseline_prediction=base,
        scenario_prediction=scen,
        target_boundary=bounds[-1].boundary,
    )


def future_closed_closure(
    prepared: PreparedDataset, example: PreparedExample, n_history: int
) -> np.ndarray:
    """The target's closure with every unrealized interval fully closed."""
    arrays = prepared.arrays(example, n_history)
    reference = prepared.plan.reference_date(example.split)
    boundary = window_boundaries(
        [example.departure_date], reference, prepared.intervals
    )[0].boundary
    alt = arrays["closure"][-1].copy()
    alt[:, boundary + 1:] = 1.0
    return alt


def write_whatif(path: str | Path, result: WhatIfResult) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    f_dim, d_dim, c_dim = result.delta.shape
    with open(path, "w") as fh:
        fh.write("# delta = scenario - baseline, denormalized passengers\n")
        fh.write(f"# example={result.example_id} baseline_total="
                 f"{result.baseline_total:.10g} scenario_total="
                 f"{result.scenario_total:.10g} total_delta="
                 f"{result.total_delta:.10g}\n")
        fh.write("bracket,interval,channel,baseline,scenario,delta\n")
        for i in range(f_dim):
            for j in range(d_dim):
                for k in range(c_dim):
                    fh.write(
                        f"{i},{j},{k},{result.baseline_prediction[i, j, k]:.10g},"
                        f"{result.scenario_prediction[i, j, k]:.10g},"
                        f"{result.delta[i, j, k]:.10g}\n"
                    )
    return path
