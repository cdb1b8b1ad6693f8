"""Classical baselines on per-flight total-traffic series.

Scalar models see one number per flight: the normalized sum over all
tensor cells. Degenerate orders with known closed forms — the random
walk ARIMA(0,1,0) with or without drift, and the pure seasonal random
walk — are computed directly rather than estimated, so their forecasts
are exact by construction. Everything else delegates to statsmodels'
state-space SARIMAX estimator.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import warnings
from typing import Iterable

import numpy as np

from .errors import DomainError, FitError, GapError
from .tensorize import Normalizer


@dataclasses.dataclass(frozen=True)
class DailySeries:
    """Gap-free daily observations for one market."""

    market_id: str
    dates: tuple[dt.date, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if len(self.dates) != len(values):
            raise DomainError("dates and values disagree in length")
        if len(self.dates) == 0:
            raise DomainError("series is empty")
        if not np.all(np.isfinite(values)):
            raise DomainError("series contains non-finite values")
        for a, b in zip(self.dates, self.dates[1:]):
            gap = (b - a).days
            if gap != 1:
                raise GapError(f"series gap between {a} and {b} ({gap} days)")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.dates)


def totals_series(flights: Iterable, normalizer: Normalizer) -> DailySeries:
    """Normalized per-flight totals for one market, daily order."""
    flights = sorted(flights, key=lambda f: f.departure_date)
    if not flights:
        raise DomainError("no flights to build a series from")
    market = flights[0].market_id
    if any(f.market_id != market for f in flights):
        raise DomainError("totals series mixes markets")
    scale = normalizer.scale(market)
    return DailySeries(
        market_id=market,
        dates=tuple(f.departure_date for f in flights),
        values=np.array([f.traffic.total() / scale for f in flights]),
    )


def naive_forecast(series: DailySeries, horizon: int) -> np.ndarray:
    """Last observed value, repeated."""
    return np.full(horizon, series.values[-1])


def seasonal_naive_forecast(series: DailySeries, horizon: int, season: int = 7) -> np.ndarray:
    """Repeat the last observed season: forecast[h] = y[T - season + h mod season]."""
    if len(series) < season:
        raise DomainError(
            f"series length {len(series)} shorter than season {season}"
        )
    tail = series.values[-season:]
    return np.array([tail[h % season] for h in range(horizon)])


@dataclasses.dataclass
class FittedForecaster:
    """A fitted scalar model: point forecasts plus fit diagnostics."""

    label: str
    params: dict[str, float]
    loglike: float | None
    start_params: np.ndarray | None
    _forecast_fn: object

    def forecast(self, horizon: int) -> np.ndarray:
        if horizon < 1:
            raise DomainError("horizon must be >= 1")
        out = np.asarray(self._forecast_fn(horizon), dtype=np.float64)
        assert out.shape == (horizon,)
        return out


def _min_length(order: tuple[int, int, int]) -> int:
    p, d, q = order
    return max(10 * (p + d + q), d + 1, 2)


def fit_arima(
    series: DailySeries,
    order: tuple[int, int, int],
    trend: str | None = None,
    start_params: np.ndarray | None = None,
) -> FittedForecaster:
    """Fit an ARIMA(p,d,q); closed forms bypass estimation entirely.

    trend: None for no deterministic term, "drift" for the random-walk
    drift form (only meaningful with order (0,1,0)), "c"/"t" passed to
    the estimator.
    """
    p, d, q = order
    values = series.values
    if len(values) < _min_length(order):
        raise DomainError(
            f"series length {len(values)} too short for order {order} "
            f"(need >= {_min_length(order)})"
        )
    if order == (0, 1, 0):
        last = float(values[-1])
        if trend is None:
            return FittedForecaster(
                label="ARIMA(0,1,0)",
                params={},
                loglike=None,
                start_params=None,
                _forecast_fn=lambda h: np.full(h, last),
            )
        if trend == "drift":
            drift = float(np.mean(np.diff(values)))
            return FittedForecaster(
                label="ARIMA(0,1,0)+drift",
                params={"drift": drift},
                loglike=None,
                start_params=None,
                _forecast_fn=lambda h: last + drift * np.arange(1, h + 1),
            )
    if trend == "drift":
        raise DomainError("drift trend is defined here only for order (0,1,0)")
    return _fit_sarimax(series, order, (0, 0, 0, 0), trend, start_params,
                        label=f"ARIMA{order}")


def fit_sarima(
    series: DailySeries,
    order: tuple[int, int, int],
    seasonal_order: tuple[int, int, int, int],
    trend: str | None = None,
    start_params: np.ndarray | None = None,
) -> FittedForecaster:
    """Fit a SARIMA; the bare seasonal random walk is closed-form."""
    P, D, Q, s = seasonal_order
    min_len = _min_length(order) + 3 * s * (P + D + Q)
    if len(series) < min_len:
        raise DomainError(
            f"series length {len(series)} too short for {order}x{seasonal_order} "
            f"(need >= {min_len})"
        )
    if order == (0, 0, 0) and (P, D, Q) == (0, 1, 0) and trend is None:
        tail = series.values[-s:].copy()
        return FittedForecaster(
            label=f"SARIMA(0,0,0)(0,1,0)_{s}",
            params={},
            loglike=None,
            start_params=None,
            _forecast_fn=lambda h: np.array([tail[i % s] for i in range(h)]),
        )
    return _fit_sarimax(series, order, seasonal_order, trend, start_params,
                        label=f"SARIMA{order}x{seasonal_order}")


def _quiet_forecast(res, horizon: int) -> np.ndarray:
    # statsmodels warns about missing date indexes on plain arrays
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return np.asarray(res.forecast(horizon))


def _fit_sarimax(series, order, seasonal_order, trend, start_params, label):
    from statsmodels.tsa.statespace.sarimax import SARIMAX

    trend_code = {None: "n", "n": "n", "c": "c", "t": "t", "ct": "ct"}.get(trend)
    if trend_code is None:
        raise DomainError(f"unsupported trend {trend!r}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = SARIMAX(
            series.values,
            order=order,
            seasonal_order=seasonal_order,
            trend=trend_code,
        )
        try:
            res = model.fit(disp=0, maxiter=500, start_params=start_params)
        except Exception as err:
            raise FitError(f"{label} failed to fit: {err}",
                           diagnostics={"error": str(err)})
        default_start = np.asarray(model.start_params, dtype=np.float64)
    retvals = getattr(res, "mle_retvals", {}) or {}
    if retvals.get("converged") is False:
        raise FitError(
            f"{label} did not converge",
            diagnostics={k: str(v) for k, v in retvals.items()},
        )
    params = {name: float(v) for name, v in zip(res.model.param_names, res.params)}
    return FittedForecaster(
        label=label,
        params=params,
        loglike=float(res.llf),
        start_params=default_start,
        _forecast_fn=lambda h, r=res: _quiet_forecast(r, h),
    )
