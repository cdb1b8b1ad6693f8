"""Synthetic booking generator: distributional planting and determinism."""

import dataclasses
import datetime as dt
import math

import numpy as np
import pytest
from scipy import integrate, stats

from skycast.domain import ClosureMatrix
from skycast.errors import ConfigurationError, ShapeError
from skycast.grids import FareBracketGrid, IntervalGrid
from skycast.synthgen import (
    FeatureScales,
    MarketConfig,
    ShockConfig,
    booking_curve,
    bracket_mix,
    default_holidays,
    expected_demand,
    generate_dataset,
    level_series,
    make_default_markets,
    simulate_flight,
    staircase_closure_sampler,
)

GRID_F = FareBracketGrid(n_brackets=6, width=100.0)
GRID_D = IntervalGrid(n_intervals=8, interval_days=5)


def market(**kw):
    base = dict(
        market_id="AAA-BBB",
        base_daily_demand=120.0,
        dow_multipliers=(1.0,) * 7,
        annual_amplitude=0.0,
        holiday_calendar={},
        local_share=0.65,
        fare_sensitivity=0.5,
        curve_shape=(1.6, 1.2),
        capacity=10_000,
        recapture_prob=0.0,
        level_sigma=0.0,
        level_rho=0.85,
    )
    base.update(kw)
    return MarketConfig(**base)


def open_closure():
    return ClosureMatrix(np.zeros((GRID_F.n_brackets, GRID_D.n_intervals), dtype=np.float32))


class TestBookingCurve:
    def test_matches_numeric_integration(self):
        # independent oracle: quadrature of the Beta pdf over each span
        for shape in [(1.6, 1.2), (2.5, 0.8), (0.7, 0.7)]:
            weights = booking_curve(shape, GRID_D)
            pdf = stats.beta(*shape).pdf
            for j in range(GRID_D.n_intervals):
                lo, hi = j / 8, (j + 1) / 8
                ref, _err = integrate.quad(pdf, lo, hi)
                assert weights[j] == pytest.approx(ref, abs=1e-9)

    def test_uniform_shape(self):
        w = booking_curve((1.0, 1.0), GRID_D)
        assert np.allclose(w, 1.0 / 8)

    def test_simplex(self):
        w = booking_curve((2.2, 0.9), GRID_D)
        assert w.sum() == pytest.approx(1.0)
        assert np.all(w >= 0)


class TestBracketMix:
    def test_decay_and_normalization(self):
        mix = bracket_mix(market(fare_sensitivity=0.5), GRID_F)
        assert mix.sum() == pytest.approx(1.0)
        assert np.all(np.diff(mix) < 0)

    def test_sensitivity_concentrates(self):
        soft = bracket_mix(market(fare_sensitivity=0.1), GRID_F)
        hard = bracket_mix(market(fare_sensitivity=2.0), GRID_F)
        assert hard[0] > soft[0]


class TestExpectedDemand:
    def test_flat_market_is_base(self):
        m = market()
        assert expected_demand(m, dt.date(2024, 5, 6)) == pytest.approx(120.0)

    def test_dow_multiplier(self):
        m = market(dow_multipliers=(1.0, 1.0, 1.0, 1.0, 1.3, 1.0, 0.7))
        friday = dt.date(2024, 5, 10)
        sunday = dt.date(2024, 5, 12)
        assert expected_demand(m, friday) == pytest.approx(120.0 * 1.3)
        assert expected_demand(m, sunday) == pytest.approx(120.0 * 0.7)

    def test_holiday_ratio(self):
        day = dt.date(2024, 12, 24)
        plain = market()
        boosted = market(holiday_calendar={day: 1.4})
        ratio = expected_demand(boosted, day) / expected_demand(plain, day)
        assert ratio == pytest.approx(1.4)

    def test_annual_phase(self):
        m = market(annual_amplitude=0.2)
        week = dt.date(2024, 5, 6).isocalendar().week
        expected = 120.0 * (1 + 0.2 * math.sin(2 * math.pi * week / 52))
        assert expected_demand(m, dt.date(2024, 5, 6)) == pytest.approx(expected)


class TestSimulateFlight:
    DATE = dt.date(2024, 5, 6)

    def sim(self, closure=None, seed=11, m=None, **kw):
        return simulate_flight(
            m or market(), self.DATE, closure or open_closure(), seed,
            brackets=GRID_F, intervals=GRID_D, **kw
        )

    def test_deterministic(self):
        a, b = self.sim(seed=3), self.sim(seed=3)
        assert np.array_equal(a.traffic.values, b.traffic.values)

    def test_seed_changes_draws(self):
        a, b = self.sim(seed=3), self.sim(seed=4)
        assert not np.array_equal(a.traffic.values, b.traffic.values)

    def test_total_tracks_expected_demand(self):
        totals = [self.sim(seed=s).traffic.total() for s in range(60)]
        mean = float(np.mean(totals))
        # 60 Poisson(120) totals: SE ~ sqrt(120/60) = 1.4
        assert mean == pytest.approx(120.0, abs=6.0)

    def test_demand_multiplier_scales(self):
        totals = [
            self.sim(seed=s, demand_multiplier=2.0).traffic.total() for s in range(60)
        ]
        assert float(np.mean(totals)) == pytest.approx(240.0, abs=9.0)

    def test_fully_closed_no_recapture_is_empty(self):
        closed = ClosureMatrix(np.ones((6, 8), dtype=np.float32))
        inst = self.sim(closure=closed)
        assert inst.traffic.total() == 0.0

    def test_channel_share(self):
        m = market(local_share=0.8, base_daily_demand=400.0)
        insts = [self.sim(seed=s, m=m) for s in range(40)]
        local = float(np.mean([i.traffic.channel("local").sum() for i in insts]))
        flow = float(np.mean([i.traffic.channel("flow").sum() for i in insts]))
        assert local / (local + flow) == pytest.approx(0.8, abs=0.03)

    def test_closure_coupling_without_recapture(self):
        # common random numbers per unit: closing one bracket zeroes it and
        # leaves every other cell bit-identical
        base = self.sim(seed=7)
        cvals = np.zeros((6, 8), dtype=np.float32)
        cvals[2, :] = 1.0
        scen = self.sim(seed=7, closure=ClosureMatrix(cvals))
        assert np.all(scen.traffic.values[2] == 0)
        others = [i for i in range(6) if i != 2]
        assert np.array_equal(scen.traffic.values[others], base.traffic.values[others])

    def test_recapture_moves_to_cheapest_open(self):
        m = market(recapture_prob=1.0, base_daily_demand=300.0)
        cvals = np.zeros((6, 8), dtype=np.float32)
        cvals[0, :] = 1.0  # cheapest bracket closed everywhere
        base = self.sim(seed=9, m=dataclasses.replace(m, recapture_prob=0.0))
        scen = self.sim(seed=9, m=m, closure=ClosureMatrix(cvals))
        # with certain recapture, every blocked unit reappears in bracket 1
        assert np.array_equal(
            scen.traffic.values[1], base.traffic.values[1] + base.traffic.values[0]
        )
        assert np.all(scen.traffic.values[0] == 0)
        assert np.array_equal(scen.traffic.values[2:], base.traffic.values[2:])

    def test_capacity_truncates_latest_first(self):
        m = market(base_daily_demand=300.0)
        unlimited = self.sim(seed=5, m=m)
        total = unlimited.traffic.total()
        cap = int(total - 10)
        capped = self.sim(seed=5, m=m, capacity=cap)
        assert capped.traffic.total() == cap
        diff = unlimited.traffic.values - capped.traffic.values
        assert np.all(diff >= 0)
        # drops concentrate in the latest interval block present
        dropped_cols = np.nonzero(diff.sum(axis=(0, 2)))[0]
        assert dropped_cols.size >= 1
        kept_after = capped.traffic.values[:, dropped_cols.min() + 1:, :]
        assert kept_after.sum() == 0 or dropped_cols.max() == 7

    def test_closure_shape_checked(self):
        with pytest.raises(ShapeError):
            self.sim(closure=ClosureMatrix(np.zeros((6, 7), dtype=np.float32)))

    def test_capacity_norm_uses_feature_scales(self):
        scales = FeatureScales(max_capacity=20_000.0, max_rasm=0.2, max_station=3.0)
        inst = self.sim(feature_scales=scales)
        assert inst.season.get("capacity_norm") == pytest.approx(10_000 / 20_000)


class TestLevelSeries:
    def test_sigma_zero_is_flat(self):
        m = market(level_sigma=0.0)
        assert np.all(level_series(m, 0, dt.date(2024, 1, 1), 100) == 1.0)

    def test_mean_one(self):
        m = market(level_sigma=0.16)
        levels = level_series(m, 3, dt.date(2023, 1, 2), 1400)
        assert float(levels.mean()) == pytest.approx(1.0, abs=0.05)

    def test_weekly_memory_beats_daily(self):
        m = market(level_sigma=0.25, level_rho=0.85)
        z = np.log(level_series(m, 5, dt.date(2023, 1, 2), 1400))
        lag7 = float(np.corrcoef(z[7:], z[:-7])[0, 1])
        lag1 = float(np.corrcoef(z[1:], z[:-1])[0, 1])
        assert lag7 == pytest.approx(0.85, abs=0.1)
        assert lag7 > lag1 + 0.5

    def test_deterministic_given_seed(self):
        m = market(level_sigma=0.16)
        a = level_series(m, 3, dt.date(2024, 1, 1), 200)
        b = level_series(m, 3, dt.date(2024, 1, 1), 200)
        assert np.array_equal(a, b)
        c = level_series(m, 4, dt.date(2024, 1, 1), 200)
        assert not np.array_equal(a, c)

    def test_slow_component_persists(self):
        m = market(level_sigma=0.0, level_sigma_slow=0.25, level_rho_slow=0.95)
        z = np.log(level_series(m, 5, dt.date(2023, 1, 2), 2800))
        lag7 = float(np.corrcoef(z[7:], z[:-7])[0, 1])
        lag28 = float(np.corrcoef(z[28:], z[:-28])[0, 1])
        assert lag7 == pytest.approx(0.95, abs=0.1)
        assert lag28 == pytest.approx(0.95 ** 4, abs=0.15)
        # sample mean of a rho-0.95 chain is itself noisy: ~4 sigma band
        assert float(z.mean()) == pytest.approx(-0.5 * 0.25 ** 2, abs=0.12)

    def test_components_add_in_log_space(self):
        kw = dict(level_sigma=0.15, level_rho=0.4,
                  level_sigma_slow=0.25, level_rho_slow=0.95)
        both = np.log(level_series(market(**kw), 7, dt.date(2024, 1, 1), 350))
        fast = np.log(level_series(
            market(level_sigma=0.15, level_rho=0.4), 7, dt.date(2024, 1, 1), 350))
        slow = np.log(level_series(
            market(level_sigma=0.0, level_sigma_slow=0.25, level_rho_slow=0.95),
            7, dt.date(2024, 1, 1), 350))
        # half-variance corrections: both carries (sf^2+ss^2)/2, parts carry their own
        assert np.allclose(both, fast + slow, atol=1e-12)

    def test_slow_chain_independent_of_fast(self):
        base = market(level_sigma=0.2, level_rho=0.5)
        added = market(level_sigma=0.2, level_rho=0.5,
                       level_sigma_slow=0.2, level_rho_slow=0.9)
        a = np.log(level_series(base, 11, dt.date(2024, 1, 1), 2100)) + 0.5 * 0.2 ** 2
        b = np.log(level_series(added, 11, dt.date(2024, 1, 1), 2100)) + 0.5 * (0.2 ** 2 + 0.2 ** 2)
        # fast stream unchanged by enabling the slow one: the residual is
        # exactly the slow chain, N(0, 0.2^2) marginally
        assert not np.allclose(a, b)
        assert np.std(b - a) == pytest.approx(0.2, abs=0.05)


class TestStaircaseClosure:
    def sample(self, seed=0):
        return staircase_closure_sampler(market(), dt.date(2024, 5, 6), GRID_F, GRID_D, seed)

    def test_valid_fractions(self):
        c = self.sample().values
        assert np.all(c >= 0) and np.all(c <= 1)

    def test_more_closed_near_departure(self):
        # interval index runs toward departure, so rows never step down
        for seed in range(10):
            c = self.sample(seed).values
            assert np.all(np.diff(c, axis=1) >= -1e-6)

    def test_cheap_brackets_close_earlier(self):
        for seed in range(10):
            c = self.sample(seed).values
            assert np.all(np.diff(c, axis=0) <= 1e-6)

    def test_deterministic(self):
        assert np.array_equal(self.sample(4).values, self.sample(4).values)


class TestGenerateDataset:
    MARKETS = [
        market(market_id="AAA-BBB", origin_id=0, destination_id=1),
        market(market_id="AAA-CCC", origin_id=0, destination_id=2, capacity=5_000),
    ]
    RANGE = (dt.date(2024, 1, 1), dt.date(2024, 4, 15))  # 106 days

    def gen(self, **kw):
        base = dict(seed=2, brackets=GRID_F, intervals=GRID_D, n_history=0)
        base.update(kw)
        return generate_dataset(self.MARKETS, self.RANGE, **base)

    def test_one_flight_per_market_day(self):
        records = self.gen()
        assert len(records) == 2 * 106
        keys = {(r.instance.market_id, r.instance.departure_date) for r in records}
        assert len(keys) == len(records)

    def test_subset_regenerates_bit_exact(self):
        full = {
            (r.instance.market_id, r.instance.departure_date): r for r in self.gen()
        }
        sub = generate_dataset(
            self.MARKETS, (dt.date(2024, 1, 8), dt.date(2024, 4, 15)),
            seed=2, brackets=GRID_F, intervals=GRID_D, n_history=0,
        )
        for r in sub:
            ref = full[(r.instance.market_id, r.instance.departure_date)]
            assert np.array_equal(r.instance.traffic.values, ref.instance.traffic.values)
            assert np.array_equal(r.instance.closure.values, ref.instance.closure.values)

    def test_shock_scales_totals_and_capacity(self):
        plain = self.gen()
        shocked = self.gen(shock=ShockConfig(shock_date_offset=20, capacity_multiplier=1.3))
        test_start = self.RANGE[1] - dt.timedelta(days=90)
        shock_date = test_start + dt.timedelta(days=20)
        pre_p = [r for r in plain if r.instance.departure_date < shock_date]
        pre_s = [r for r in shocked if r.instance.departure_date < shock_date]
        for a, b in zip(pre_p, pre_s):
            assert np.array_equal(a.instance.traffic.values, b.instance.traffic.values)
        post_p = sum(
            r.instance.traffic.total() for r in plain
            if r.instance.departure_date >= shock_date
        )
        post_s = sum(
            r.instance.traffic.total() for r in shocked
            if r.instance.departure_date >= shock_date
        )
        assert post_s / post_p == pytest.approx(1.3, rel=0.08)
        caps = {
            r.instance.market_id: r.instance.capacity for r in shocked
            if r.instance.departure_date >= shock_date
        }
        assert caps["AAA-BBB"] == round(10_000 * 1.3)
        assert caps["AAA-CCC"] == round(5_000 * 1.3)

    def test_shared_feature_scales_match_joint_run(self):
        joint = self.gen()
        scales = FeatureScales.from_markets(self.MARKETS)
        split = []
        for m in self.MARKETS:
            split.extend(generate_dataset(
                [m], self.RANGE, seed=2, brackets=GRID_F, intervals=GRID_D,
                n_history=0, feature_scales=scales,
            ))
        assert len(split) == len(joint)
        by_key = {
            (r.instance.market_id, r.instance.departure_date): r for r in joint
        }
        for r in split:
            ref = by_key[(r.instance.market_id, r.instance.departure_date)]
            assert np.array_equal(r.instance.season.values, ref.instance.season.values)
            assert np.array_equal(r.instance.traffic.values, ref.instance.traffic.values)

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            generate_dataset([], self.RANGE, seed=0)
        with pytest.raises(ConfigurationError):
            generate_dataset(
                self.MARKETS, (dt.date(2024, 1, 1), dt.date(2024, 3, 1)),
                seed=0, n_history=0,
            )
        with pytest.raises(ConfigurationError):
            self.gen(shock=ShockConfig(shock_date_offset=95, capacity_multiplier=1.3))


class TestDefaults:
    def test_default_holidays_avoid_test_quarter(self):
        for date in default_holidays(range(2023, 2026)):
            assert not (4 <= date.month <= 6)

    def test_default_markets_are_distinct(self):
        markets = make_default_markets(5)
        assert len({m.market_id for m in markets}) == 5
        assert len({(m.origin_id, m.destination_id) for m in markets}) == 5
        for m in markets:
            assert m.capacity > m.base_daily_demand

    def test_market_config_validation(self):
        with pytest.raises(ConfigurationError):
            market(dow_multipliers=(1.0,) * 6)
        with pytest.raises(ConfigurationError):
            market(local_share=1.0)
        with pytest.raises(ConfigurationError):
            market(annual_amplitude=1.0)
        with pytest.raises(ConfigurationError):
            market(level_rho=1.0)
        with pytest.raises(ConfigurationError):
            ShockConfig(shock_date_offset=0, capacity_multiplier=0.0)
