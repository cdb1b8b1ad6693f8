"""Synthetic multi-market booking-data generator.

Each (market, departure date) pair gets an independent Poisson demand
field over (fare bracket, booking interval, channel):

    lam[i,j,k] = expected_demand(market, date) * level * curve[j]
                 * bracket_mix[i] * channel_share[k]

Fare closures act on individual demand units, not on the intensity:
every arriving unit draws a (book, recapture) uniform pair from a stream
whose consumption depends only on the cell's total demand. Two runs with
the same seed and different closure matrices therefore agree on every
unit's existence and disagree only on how closures reroute it, which is
what makes what-if scenario comparisons causal rather than noise.

History is made informative by a latent demand level: per (market,
weekday), two AR(1) chains on different timescales evolve week over
week and sum in log space. Totals from prior same-weekday flights carry
real signal about the next one, while adjacent calendar days do not
share a chain. Capacity shocks multiply demand and capacity for
departures from a cutoff date onward.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import math
from typing import Callable, Mapping

import numpy as np
from scipy import special

from .domain import ClosureMatrix, FlightInstance, SeasonalityVector, TrafficTensor
from .errors import ConfigurationError, DomainError, ShapeError
from .grids import FareBracketGrid, IntervalGrid
from .hashing import rng_from, stable_hash
from .masking import TEST_SPAN_DAYS


@dataclasses.dataclass(frozen=True)
class MarketConfig:
    """Static description of one origin-destination market."""

    market_id: str
    base_daily_demand: float
    dow_multipliers: tuple[float, ...]
    annual_amplitude: float
    holiday_calendar: Mapping[dt.date, float]
    local_share: float
    fare_sensitivity: float
    curve_shape: tuple[float, float]
    capacity: int
    recapture_prob: float
    origin_id: int = 0
    destination_id: int = 1
    rasm: float = 0.10
    level_sigma: float = 0.16
    level_rho: float = 0.85
    level_sigma_slow: float = 0.0
    level_rho_slow: float = 0.0

    def __post_init__(self):
        if len(self.dow_multipliers) != 7:
            raise ConfigurationError("dow_multipliers needs 7 entries")
        if any(m <= 0 for m in self.dow_multipliers):
            raise ConfigurationError("dow multipliers must be positive")
        if self.base_daily_demand <= 0:
            raise ConfigurationError("base_daily_demand must be positive")
        if not (0 <= self.annual_amplitude < 1):
            raise ConfigurationError("annual_amplitude must lie in [0, 1)")
        if not (0 < self.local_share < 1):
            raise ConfigurationError("local_share must lie in (0, 1)")
        if self.fare_sensitivity <= 0:
            raise ConfigurationError("fare_sensitivity must be positive")
        if any(s <= 0 for s in self.curve_shape) or len(self.curve_shape) != 2:
            raise ConfigurationError("curve_shape must be two positive reals")
        if self.capacity < 1:
            raise ConfigurationError("capacity must be >= 1")
        if not (0 <= self.recapture_prob <= 1):
            raise ConfigurationError("recapture_prob must lie in [0, 1]")
        if any(m <= 0 for m in self.holiday_calendar.values()):
            raise ConfigurationError("holiday multipliers must be positive")
        if self.level_sigma < 0 or not (0 <= self.level_rho < 1):
            raise ConfigurationError("level process needs sigma >= 0 and rho in [0, 1)")
        if self.level_sigma_slow < 0 or not (0 <= self.level_rho_slow < 1):
            raise ConfigurationError("level process needs sigma >= 0 and rho in [0, 1)")


@dataclasses.dataclass(frozen=True)
class ShockConfig:
    """Capacity shock: demand and seats scale together from a cutoff on.

    The cutoff is expressed as days from the start of the test period
    (the final TEST_SPAN_DAYS of the generated range), matching how the
    sensitivity analysis frames its scenario.
    """

    shock_date_offset: int
    capacity_multiplier: float

    def __post_init__(self):
        if self.capacity_multiplier <= 0:
            raise ConfigurationError("capacity_multiplier must be positive")


@dataclasses.dataclass(frozen=True)
class FeatureScales:
    """Config-level ranges used to squash static features into [0, 1].

    Derived from the market configs alone (not from realized data), so
    the same scales apply to every split with no leakage concern.
    """

    max_capacity: float
    max_rasm: float
    max_station: float

    @classmethod
    def from_markets(cls, markets: list[MarketConfig]) -> "FeatureScales":
        return cls(
            max_capacity=float(max(m.capacity for m in markets)),
            max_rasm=float(max(m.rasm for m in markets)),
            max_station=float(
                max(max(m.origin_id, m.destination_id) for m in markets) or 1
            ),
        )


def booking_curve(curve_shape: tuple[float, float], grid: IntervalGrid) -> np.ndarray:
    """Probability a booking lands in each interval, earliest first.

    The arrival profile is a Beta(a, b) density over normalized booking
    time u in [0, 1], u = 1 at departure. Interval j covers u in
    (j/D, (j+1)/D], so its weight is the CDF difference over that span.
    """
    a, b = curve_shape
    if a <= 0 or b <= 0:
        raise DomainError("curve shape parameters must be positive")
    edges = np.arange(grid.n_intervals + 1) / grid.n_intervals
    cdf = special.betainc(a, b, edges)
    return np.diff(cdf)


def bracket_mix(market: MarketConfig, grid: FareBracketGrid) -> np.ndarray:
    """Demand share per fare bracket, decaying with price.

    Exponential decay exp(-sensitivity * i) normalized over brackets:
    higher sensitivity concentrates demand in the cheap bands.
    """
    w = np.exp(-market.fare_sensitivity * np.arange(grid.n_brackets))
    return w / w.sum()


def expected_demand(market: MarketConfig, date: dt.date) -> float:
    """Mean daily passenger demand before closures and capacity."""
    week = date.isocalendar().week
    seasonal = 1.0 + market.annual_amplitude * math.sin(2 * math.pi * week / 52.0)
    holiday = market.holiday_calendar.get(date, 1.0)
    return (
        market.base_daily_demand
        * market.dow_multipliers[date.weekday()]
        * seasonal
        * holiday
    )


def _weekday_chains(
    market: MarketConfig, dataset_seed: int, tag: str, rho: float, n_weeks: int
) -> np.ndarray:
    """Seven independent per-weekday AR(1) chains with N(0,1) marginals."""
    innov = math.sqrt(1.0 - rho * rho)
    z = np.empty((7, n_weeks))
    for weekday in range(7):
        for k in range(n_weeks):
            eps = rng_from(
                dataset_seed, market.market_id, tag, weekday, k
            ).standard_normal()
            z[weekday, k] = eps if k == 0 else rho * z[weekday, k - 1] + innov * eps
    return z


def level_series(
    market: MarketConfig, dataset_seed: int, start_date: dt.date, n_days: int
) -> np.ndarray:
    """Latent demand-level multiplier per day, mean 1.

    Per weekday the log level is the sum of two independent AR(1)
    chains stepping week to week, z_w = rho * z_{w-1} +
    sqrt(1 - rho^2) * eps_w with standard-normal marginals: a fast
    component that mostly resets between weeks and a slow drift that
    persists for months. One recent observation cannot split the two, so
    longer same-weekday histories genuinely narrow the level estimate.
    Exponentiation carries a half-variance correction so E[level] = 1;
    adjacent calendar days share nothing beyond the deterministic
    seasonality.
    """
    sigma, sigma_slow = market.level_sigma, market.level_sigma_slow
    out = np.ones(n_days)
    if sigma == 0 and sigma_slow == 0:
        return out
    n_weeks = n_days // 7 + 2
    log_level = np.zeros((7, n_weeks))
    if sigma > 0:
        log_level += sigma * _weekday_chains(
            market, dataset_seed, "level", market.level_rho, n_weeks
        )
    if sigma_slow > 0:
        log_level += sigma_slow * _weekday_chains(
            market, dataset_seed, "level-slow", market.level_rho_slow, n_weeks
        )
    half_var = 0.5 * (sigma * sigma + sigma_slow * sigma_slow)
    for offset in range(n_days):
        date = start_date + dt.timedelta(days=offset)
        out[offset] = math.exp(log_level[date.weekday(), offset // 7] - half_var)
    return out


def simulate_flight(
    market: MarketConfig,
    date: dt.date,
    closure: ClosureMatrix,
    seed: int,
    brackets: FareBracketGrid | None = None,
    intervals: IntervalGrid | None = None,
    demand_multiplier: float = 1.0,
    capacity: int | None = None,
    feature_scales: FeatureScales | None = None,
    holiday: bool | None = None,
) -> FlightInstance:
    """Simulate one flight's bookings. Deterministic given the arguments.

    Unit-level mechanics: each cell's total demand is Poisson; each unit
    then books directly (probability 1 - closure), or is blocked and
    either recaptured into the cheapest open bracket of the same
    interval (probability recapture_prob, channel preserved) or lost.
    Bookings beyond capacity are dropped latest interval first, and
    within an interval priciest bracket first, flow before local.
    """
    brackets = brackets or FareBracketGrid()
    intervals = intervals or IntervalGrid()
    F, D = brackets.n_brackets, intervals.n_intervals
    if closure.values.shape != (F, D):
        raise ShapeError(
            f"closure shaped {closure.values.shape}, grids want {(F, D)}"
        )
    cap = capacity if capacity is not None else market.capacity
    scales = feature_scales or FeatureScales.from_markets([market])
    shares = np.array([market.local_share, 1.0 - market.local_share])
    lam = (
        expected_demand(market, date)
        * demand_multiplier
        * bracket_mix(market, brackets)[:, None, None]
        * booking_curve(market.curve_shape, intervals)[None, :, None]
        * shares[None, None, :]
    )
    totals = rng_from(seed, "totals").poisson(lam)
    # One (book, recapture) uniform pair per demand unit. Consumption per
    # cell depends only on the cell's total, never on closure, so runs
    # that differ only in closure stay unit-aligned.
    u = rng_from(seed, "units").random((int(totals.sum()), 2))
    cvals = closure.values.astype(np.float64)
    cheapest_open = np.full(D, -1)
    for j in range(D):
        open_rows = np.nonzero(cvals[:, j] < 1.0)[0]
        if open_rows.size:
            cheapest_open[j] = open_rows[0]
    booked = np.zeros((F, D, 2), dtype=np.int64)
    pos = 0
    for i in range(F):
        for j in range(D):
            for k in range(2):
                n = int(totals[i, j, k])
                if n == 0:
                    continue
                uu = u[pos:pos + n]
                pos += n
                stay = uu[:, 0] >= cvals[i, j]
                booked[i, j, k] += int(stay.sum())
                dest = cheapest_open[j]
                if dest >= 0:
                    rec = (~stay) & (uu[:, 1] < market.recapture_prob)
                    booked[dest, j, k] += int(rec.sum())
    overflow = int(booked.sum()) - cap
    if overflow > 0:
        for j in range(D - 1, -1, -1):
            for i in range(F - 1, -1, -1):
                for k in (1, 0):
                    if overflow <= 0:
                        break
                    drop = min(int(booked[i, j, k]), overflow)
                    booked[i, j, k] -= drop
                    overflow -= drop
    is_holiday = (
        holiday if holiday is not None else date in market.holiday_calendar
    )
    season = SeasonalityVector.build(
        departure_date=date,
        holiday=is_holiday,
        origin_id=market.origin_id,
        destination_id=market.destination_id,
        capacity_norm=cap / scales.max_capacity,
        rasm_norm=market.rasm / scales.max_rasm,
    )
    return FlightInstance(
        market_id=market.market_id,
        departure_date=date,
        traffic=TrafficTensor(booked.astype(np.float32)),
        closure=closure,
        season=season,
        capacity=cap,
    )


def staircase_closure_sampler(
    market: MarketConfig,
    date: dt.date,
    brackets: FareBracketGrid,
    intervals: IntervalGrid,
    seed: int,
) -> ClosureMatrix:
    """Per-flight random closure staircase.

    Bracket i is closed for the final tau_i days before departure, with
    mean thresholds decreasing in price so cheap fares disappear first
    as departure approaches. closure[i, j] is the fraction of interval
    j's day span that falls inside the closed window [0, tau_i).
    """
    F, D = brackets.n_brackets, intervals.n_intervals
    horizon = intervals.horizon_days
    rng = rng_from(seed)
    share = np.linspace(1.0, 0.0, F) if F > 1 else np.array([1.0])
    mean_tau = 0.5 * horizon * share ** 1.4
    tau = np.clip(mean_tau + 4.0 * rng.standard_normal(F), 0.0, horizon)
    tau = np.sort(tau)[::-1]
    closure = np.zeros((F, D), dtype=np.float32)
    w = intervals.interval_days
    for j in range(D):
        lo, hi = intervals.day_range(j)
        closure[:, j] = np.clip(tau - lo, 0.0, w) / w
    return ClosureMatrix(closure)


ClosureSampler = Callable[
    [MarketConfig, dt.date, FareBracketGrid, IntervalGrid, int], ClosureMatrix
]


@dataclasses.dataclass(frozen=True)
class FlightRecord:
    """A generated flight plus the bookkeeping the dataset files carry."""

    instance: FlightInstance
    flight_seed: int
    holiday_flag: bool
    rasm: float
    origin_id: int
    destination_id: int


def generate_dataset(
    markets: list[MarketConfig],
    date_range: tuple[dt.date, dt.date],
    closure_policy_sampler: ClosureSampler | None = None,
    shock: ShockConfig | None = None,
    seed: int = 0,
    brackets: FareBracketGrid | None = None,
    intervals: IntervalGrid | None = None,
    n_history: int = 5,
    feature_scales: FeatureScales | None = None,
) -> list[FlightRecord]:
    """One flight per market per day over [start, end], both inclusive.

    Per-flight seeds are stable_hash(seed, market_id, date), so any
    subset regenerates bit-exactly. A shock multiplies base demand and
    capacity for departures on or after test_start + shock_date_offset,
    where the test period is the final TEST_SPAN_DAYS of the range.
    """
    brackets = brackets or FareBracketGrid()
    intervals = intervals or IntervalGrid()
    sampler = closure_policy_sampler or staircase_closure_sampler
    if not markets:
        raise ConfigurationError("need at least one market")
    start, end = date_range
    n_days = (end - start).days + 1
    min_days = TEST_SPAN_DAYS + 7 * (n_history + 1)
    if n_days < min_days:
        raise ConfigurationError(
            f"date range spans {n_days} days; need >= {min_days} for a "
            f"{TEST_SPAN_DAYS}-day test period plus {n_history} weeks of history"
        )
    shock_date = None
    if shock is not None:
        test_start = end - dt.timedelta(days=TEST_SPAN_DAYS - 1)
        shock_date = test_start + dt.timedelta(days=shock.shock_date_offset)
        if shock_date > end:
            raise ConfigurationError(
                f"shock offset {shock.shock_date_offset} falls after the range end"
            )
    # feature_scales lets a caller generating markets separately (e.g.
    # one process per market) keep the config-level normalization ranges
    scales = feature_scales or FeatureScales.from_markets(markets)
    records = []
    for market in markets:
        levels = level_series(market, seed, start, n_days)
        for offset in range(n_days):
            date = start + dt.timedelta(days=offset)
            flight_seed = stable_hash(seed, market.market_id, date)
            closure = sampler(
                market, date, brackets, intervals, stable_hash(flight_seed, "closure")
            )
            mult = levels[offset]
            cap = market.capacity
            if shock_date is not None and date >= shock_date:
                mult *= shock.capacity_multiplier
                cap = int(round(cap * shock.capacity_multiplier))
            inst = simulate_flight(
                market,
                date,
                closure,
                flight_seed,
                brackets=brackets,
                intervals=intervals,
                demand_multiplier=float(mult),
                capacity=cap,
                feature_scales=scales,
            )
            records.append(
                FlightRecord(
                    instance=inst,
                    flight_seed=flight_seed,
                    holiday_flag=date in market.holiday_calendar,
                    rasm=market.rasm,
                    origin_id=market.origin_id,
                    destination_id=market.destination_id,
                )
            )
    return records


def default_holidays(years: range, spike: float = 1.4) -> dict[dt.date, float]:
    """Fixed holiday windows: winter break, a spring week, early summer.

    All windows sit outside April-June so a 91-day test period ending
    June 30 stays holiday-free; that keeps shock arithmetic clean in the
    sensitivity analysis while training still sees holiday behavior.
    """
    spans = [((12, 20), (12, 31)), ((1, 1), (1, 3)), ((3, 15), (3, 22)),
             ((7, 1), (7, 10))]
    cal: dict[dt.date, float] = {}
    for year in years:
        for (m0, d0), (m1, d1) in spans:
            day = dt.date(year, m0, d0)
            last = dt.date(year, m1, d1)
            while day <= last:
                cal[day] = spike
                day += dt.timedelta(days=1)
    return cal


def make_default_markets(n_markets: int = 5, years: range = range(2023, 2028)) -> list[MarketConfig]:
    """Five hub-to-spoke markets with varied size, mix, and curve shape."""
    holidays = default_holidays(years)
    base = [140.0, 115.0, 95.0, 80.0, 68.0, 120.0, 90.0, 75.0]
    caps = [180, 150, 130, 110, 95, 160, 125, 105]
    dows = [
        (1.15, 0.95, 0.90, 1.00, 1.30, 0.75, 1.05),
        (1.05, 0.90, 0.95, 1.05, 1.25, 0.80, 1.10),
        (1.20, 1.00, 0.90, 0.95, 1.20, 0.70, 1.00),
        (1.10, 0.95, 0.85, 1.00, 1.35, 0.80, 1.05),
        (1.00, 0.90, 0.95, 1.10, 1.25, 0.85, 1.05),
        (1.12, 0.92, 0.93, 1.02, 1.28, 0.78, 1.06),
        (1.08, 0.97, 0.88, 0.98, 1.22, 0.82, 1.08),
        (1.18, 0.93, 0.91, 1.04, 1.26, 0.76, 1.02),
    ]
    sens = [0.32, 0.26, 0.38, 0.30, 0.24, 0.34, 0.28, 0.36]
    curves = [(1.5, 1.1), (1.3, 1.0), (1.7, 1.2), (1.4, 1.05), (1.6, 1.15),
              (1.45, 1.1), (1.35, 1.0), (1.55, 1.1)]
    rasms = [0.145, 0.128, 0.117, 0.108, 0.099, 0.132, 0.121, 0.104]
    markets = []
    for m in range(n_markets):
        i = m % len(base)
        markets.append(
            MarketConfig(
                market_id=f"M{m + 1:02d}",
                base_daily_demand=base[i],
                dow_multipliers=dows[i],
                # small annual swing: the weekly anchor of a frozen
                # seasonal baseline then stays a fair stand-in for the
                # unshocked level across a full test quarter
                annual_amplitude=0.03,
                holiday_calendar=holidays,
                local_share=0.65,
                fare_sensitivity=sens[i],
                curve_shape=curves[i],
                capacity=caps[i],
                recapture_prob=0.30,
                origin_id=0,
                destination_id=m + 1,
                rasm=rasms[i],
                # two-timescale week-over-week level: the slow drift makes
                # several weeks of same-weekday history genuinely more
                # informative than the latest observation alone, and is
                # persistent enough to stay readable across a test quarter
                level_sigma=0.15,
                level_rho=0.40,
                level_sigma_slow=0.25,
                level_rho_slow=0.985,
            )
        )
    return markets
