"""Comparison tables and scalar-baseline evaluation on prepared data.

The cross-model metric is MSE over normalized per-flight totals, so
tensor models and scalar baselines are scored on the same quantity.
Baselines are frozen at the test boundary: fitted once on all pre-test
dates, then asked for the full test horizon with no refitting.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .baselines import (
    DailySeries,
    fit_arima,
    fit_sarima,
    naive_forecast,
    seasonal_naive_forecast,
)
from .errors import ConfigurationError, DomainError
from .tensorize import PreparedDataset

DISPLAY_NAMES = {
    "CNN_BASELINE": "CNN",
    "CONVLSTM_FLAT": "ConvLSTM",
    "CONVLSTM_SPATIAL": "+ Spatial",
    "PLUS_SHALLOW_CNN": "+ Shallow CNN",
    "DEEPSHALLOW": "+ DeepShallow",
    "DEEPSHALLOW_SHARED": "+ Shared Weights",
}

CANONICAL_ORDER = (
    "ARIMA",
    "SARIMA",
    "CNN",
    "ConvLSTM",
    "+ Spatial",
    "+ Shallow CNN",
    "+ DeepShallow",
    "+ Shared Weights",
)

REFERENCE_MODEL = "ConvLSTM"


@dataclasses.dataclass(frozen=True)
class TableRow:
    model: str
    mse: float
    improvement_pct: float


def mse_table(results: Mapping[str, float], reference: str = REFERENCE_MODEL) -> list[TableRow]:
    """Comparison rows with improvement relative to the reference model.

    improvement% = (mse_ref - mse) / mse_ref * 100, rounded to two
    decimals. Known models come out in canonical order; anything else
    follows alphabetically.
    """
    if reference not in results:
        raise ConfigurationError(
            f"reference model {reference!r} missing from results "
            f"({sorted(results)})"
        )
    ref = float(results[reference])
    if not ref > 0:
        raise ConfigurationError(f"reference MSE must be positive, got {ref}")
    ordered = [m for m in CANONICAL_ORDER if m in results]
    ordered += sorted(m for m in results if m not in CANONICAL_ORDER)
    rows = []
    for model in ordered:
        mse = float(results[model])
        rows.append(TableRow(
            model=model,
            mse=mse,
            improvement_pct=round((ref - mse) / ref * 100.0, 2),
        ))
    return rows


def write_mse_table(path: str | Path, rows: Sequence[TableRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "mse", "improvement_pct"])
        for row in rows:
            writer.writerow([row.model, "%.10g" % row.mse, "%.2f" % row.improvement_pct])
    return path


def market_total_series(prepared: PreparedDataset) -> dict[str, DailySeries]:
    """One contiguous normalized-totals series per market, all splits."""
    by_market: dict[str, list[tuple[dt.date, float]]] = {}
    for ex in prepared.examples:
        total = float(prepared.arrays(ex)["label"].sum())
        by_market.setdefault(ex.market_id, []).append((ex.departure_date, total))
    out = {}
    for market in sorted(by_market):
        pairs = sorted(by_market[market])
        out[market] = DailySeries(
            market_id=market,
            dates=tuple(d for d, _ in pairs),
            values=np.array([v for _, v in pairs]),
        )
    return out


@dataclasses.dataclass(frozen=True)
class BaselineRecord:
    model: str
    market_id: str
    departure_date: dt.date
    horizon: int
    observed: float
    predicted: float


DEFAULT_BASELINES = ("Naive", "Seasonal Naive", "ARIMA", "SARIMA")


def evaluate_baselines(
    prepared: PreparedDataset,
    include: Sequence[str] = DEFAULT_BASELINES,
    arima_order: tuple[int, int, int] = (1, 1, 1),
    sarima_order: tuple[int, int, int] = (0, 1, 1),
    sarima_seasonal: tuple[int, int, int, int] = (0, 1, 1, 7),
) -> tuple[dict[str, float], list[BaselineRecord]]:
    """Test-split totals MSE per baseline, plus per-day records."""
    unknown = set(include) - set(DEFAULT_BASELINES)
    if unknown:
        raise ConfigurationError(f"unknown baselines {sorted(unknown)}")
    test_start = prepared.plan.test_start
    records: list[BaselineRecord] = []
    errors: dict[str, list[float]] = {m: [] for m in include}
    for market, series in market_total_series(prepared).items():
        n_hist = sum(1 for d in series.dates if d < test_start)
        if n_hist < 14 or n_hist == len(series):
            raise DomainError(
                f"market {market}: needs >= 14 pre-test days and a non-empty "
                f"test span, got {n_hist} of {len(series)}"
            )
        history = DailySeries(market, series.dates[:n_hist], series.values[:n_hist])
        future_dates = series.dates[n_hist:]
        observed = series.values[n_hist:]
        horizon = len(future_dates)
        forecasts: dict[str, np.ndarray] = {}
        if "Naive" in include:
            forecasts["Naive"] = naive_forecast(history, horizon)
        if "Seasonal Naive" in include:
            forecasts["Seasonal Naive"] = seasonal_naive_forecast(history, horizon)
        if "ARIMA" in include:
            forecasts["ARIMA"] = fit_arima(history, arima_order).forecast(horizon)
        if "SARIMA" in include:
            forecasts["SARIMA"] = fit_sarima(
                history, sarima_order, sarima_seasonal).forecast(horizon)
        for model, pred in forecasts.items():
            errors[model].extend((observed - pred) ** 2)
            for h, (date, obs, p) in enumerate(zip(future_dates, observed, pred)):
                records.append(BaselineRecord(
                    model=model, market_id=market, departure_date=date,
                    horizon=h + 1, observed=float(obs), predicted=float(p),
                ))
    mses = {m: float(np.mean(errs)) for m, errs in errors.items()}
    records.sort(key=lambda r: (r.model, r.market_id, r.departure_date))
    return mses, records


def write_baseline_records(path: str | Path, records: Sequence[BaselineRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "market_id", "departure_date",
                         "horizon", "observed", "predicted"])
        for r in records:
            writer.writerow([r.model, r.market_id, r.departure_date.isoformat(),
                             r.horizon, "%.10g" % r.observed, "%.10g" % r.predicted])
    return path
