"""Sweep, search, trend, sensitivity, and what-if analyses."""

import dataclasses
import datetime as dt
import math

import numpy as np
import pytest

from skycast.analyses import (
    ParamChoice,
    ParamRange,
    SensitivityPoint,
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
from skycast.datasetio import load_dataset, write_dataset
from skycast.errors import ConfigurationError, ShapeError
from skycast.grids import FareBracketGrid, IntervalGrid
from skycast.hashing import rng_from
from skycast.masking import window_boundaries
from skycast.models import HyperParams
from skycast.synthgen import (
    MarketConfig,
    ShockConfig,
    default_holidays,
    generate_dataset,
)
from skycast.tensorize import prepare_dataset
from skycast.training import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    train,
)

BRACKETS = FareBracketGrid(n_brackets=6, width=100.0)
INTERVALS = IntervalGrid(n_intervals=8, interval_days=5)


def small_market(market_id, base):
    return MarketConfig(
        market_id=market_id,
        base_daily_demand=base,
        dow_multipliers=(1.1, 0.9, 0.95, 1.0, 1.25, 0.8, 1.05),
        annual_amplitude=0.04,
        holiday_calendar=default_holidays(range(2024, 2025)),
        local_share=0.7,
        fare_sensitivity=0.3,
        curve_shape=(1.5, 1.1),
        capacity=160,
        recapture_prob=0.3,
        origin_id=0,
        destination_id=1,
        rasm=0.12,
        level_sigma=0.16,
        level_rho=0.85,
    )


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("analyses_ds")
    markets = [small_market("AAA-BBB", 90.0), small_market("AAA-CCC", 60.0)]
    records = generate_dataset(
        markets, (dt.date(2024, 1, 1), dt.date(2024, 6, 28)), seed=11,
        n_history=2, brackets=BRACKETS, intervals=INTERVALS,
    )
    write_dataset(records, root / "data", seed=11, markets=markets,
                  brackets=BRACKETS, intervals=INTERVALS)
    dataset = load_dataset(root / "data")
    prepared = prepare_dataset(dataset, root / "prep", n_history=2)
    return root, dataset, prepared


def tiny_hp(**kw):
    base = dict(
        window_size=2, temporal_channels=4, closure_channels=4,
        season_channels=4, kernel_size=3, closure_kernel=3,
        deep_layers=1, shallow_steps=1, season_strides=(2,),
        decoder_channels=8, decoder_layers=1, flat_hidden=16,
        learning_rate=2e-3, batch_size=16, epochs=2, seed=3,
    )
    base.update(kw)
    return HyperParams(**base)


def tiny_config(**kw):
    return TrainConfig(variant="CONVLSTM_SPATIAL", hp=tiny_hp(**kw), patience=1)


@pytest.fixture(scope="module")
def checkpoint(workspace, tmp_path_factory):
    root, dataset, prepared = workspace
    out = tmp_path_factory.mktemp("analyses_ckpt")
    train(tiny_config(), prepared, out_dir=out)
    return load_checkpoint(out)


class TestWindowSweep:
    def test_points_and_skips(self, workspace):
        _, _, prepared = workspace
        points = window_sweep([2, 1, 2, 4], tiny_config(), prepared)
        assert [p.n for p in points] == [1, 2, 4]
        assert not points[0].skipped and not points[1].skipped
        assert points[2].skipped and math.isnan(points[2].val_mse)
        assert all(np.isfinite(p.val_mse) for p in points[:2])

    def test_point_matches_direct_training(self, workspace):
        _, _, prepared = workspace
        points = window_sweep([1], tiny_config(), prepared)
        cfg = tiny_config(window_size=1)
        res = train(cfg, prepared, n_history=1)
        direct = evaluate(res.model, prepared, "val", n_history=1)
        assert points[0].val_mse == pytest.approx(direct.mse_tensor, rel=1e-9)

    def test_invalid_window(self, workspace):
        _, _, prepared = workspace
        with pytest.raises(ConfigurationError):
            window_sweep([0], tiny_config(), prepared)

    def test_csv(self, tmp_path):
        from skycast.analyses import SweepPoint

        path = write_sweep(tmp_path / "sweep.csv", [
            SweepPoint(n=1, val_mse=0.5, skipped=False),
            SweepPoint(n=9, val_mse=float("nan"), skipped=True),
        ])
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "n,val_mse,skipped"
        assert lines[1] == "1,0.5,false"
        assert lines[2].startswith("9,nan,true")


class TestSearchSpace:
    def test_range_validation(self):
        with pytest.raises(ConfigurationError):
            ParamRange(2.0, 1.0)
        with pytest.raises(ConfigurationError):
            ParamRange(0.0, 1.0, log=True)
        with pytest.raises(ConfigurationError):
            ParamChoice(())

    def test_integer_range_stays_in_bounds(self):
        r = ParamRange(8, 32, integer=True)
        draws = {r.sample(rng_from(0, "t", i)) for i in range(200)}
        assert min(draws) >= 8 and max(draws) <= 32
        assert all(isinstance(d, int) for d in draws)

    def test_log_range_spans_decades(self):
        r = ParamRange(1e-4, 1e-1, log=True)
        draws = [r.sample(rng_from(1, "t", i)) for i in range(500)]
        assert all(1e-4 <= d <= 1e-1 for d in draws)
        logs = np.log10(draws)
        assert logs.std() > 0.5

    def test_choice_sampling(self):
        c = ParamChoice((16, 32, 64))
        draws = {c.sample(rng_from(2, "t", i)) for i in range(100)}
        assert draws == {16, 32, 64}

    def test_default_space_names_are_hyperparameters(self):
        space = default_search_space()
        hp = tiny_hp()
        for name in space:
            assert hasattr(hp, name)


class TestRandomSearch:
    def test_trial_zero_is_default(self, workspace):
        _, _, prepared = workspace
        trials = random_search(
            {"learning_rate": ParamRange(1e-4, 1e-2, log=True)},
            budget=2, seed=5, config=tiny_config(), prepared=prepared,
        )
        by_index = {t.index: t for t in trials}
        assert by_index[0].params == {}
        assert set(by_index[1].params) == {"learning_rate"}
        assert [t.val_mse for t in trials] == sorted(t.val_mse for t in trials)

    def test_default_trial_matches_direct_run(self, workspace):
        _, _, prepared = workspace
        trials = random_search(
            {"learning_rate": ParamRange(1e-4, 1e-2, log=True)},
            budget=1, seed=5, config=tiny_config(), prepared=prepared,
        )
        res = train(tiny_config(), prepared)
        direct = evaluate(res.model, prepared, "val", n_history=2)
        assert trials[0].val_mse == pytest.approx(direct.mse_tensor, rel=1e-9)

    def test_search_is_deterministic(self, workspace):
        _, _, prepared = workspace
        space = {"decoder_channels": ParamChoice((4, 8))}
        a = random_search(space, 2, 7, tiny_config(), prepared)
        b = random_search(space, 2, 7, tiny_config(), prepared)
        assert [(t.index, t.params, t.val_mse) for t in a] == \
               [(t.index, t.params, t.val_mse) for t in b]

    def test_budget_and_space_validation(self, workspace):
        _, _, prepared = workspace
        with pytest.raises(ConfigurationError):
            random_search({}, 0, 1, tiny_config(), prepared)
        with pytest.raises(ConfigurationError):
            random_search({"warp_factor": ParamRange(0, 1)}, 1, 1,
                          tiny_config(), prepared)

    def test_csv(self, tmp_path):
        from skycast.analyses import SearchTrial

        path = write_search(tmp_path / "search.csv", [
            SearchTrial(index=1, params={"learning_rate": 0.001}, val_mse=0.25),
            SearchTrial(index=0, params={}, val_mse=0.5),
        ])
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "rank,trial,val_mse,params"
        assert lines[1] == "0,1,0.25,learning_rate=0.001"
        assert lines[2] == "1,0,0.5,"


class TestTrend:
    def test_full_span_with_truncation_note(self, workspace, checkpoint):
        _, _, prepared = workspace
        ev = evaluate(checkpoint.model, prepared, "test", n_history=2)
        with pytest.warns(UserWarning):
            points, note = trend_analysis(ev, horizon_days=100)
        assert note is not None and "91" in note
        assert [p.day_offset for p in points] == list(range(91))
        assert all(p.n_flights == 2 for p in points)

    def test_point_arithmetic(self, workspace, checkpoint):
        _, _, prepared = workspace
        ev = evaluate(checkpoint.model, prepared, "test", n_history=2)
        points, note = trend_analysis(ev, horizon_days=10)
        assert note is None and len(points) == 10
        day3 = [r for r in ev.records if r.day_offset == 3]
        expect = np.mean([abs(r.observed_raw - r.predicted_raw) for r in day3])
        assert points[3].mean_abs_differential == pytest.approx(expect, rel=1e-9)
        assert points[3].mean_observed == pytest.approx(
            np.mean([r.observed_raw for r in day3]), rel=1e-9
        )

    def test_invalid_horizon(self, workspace, checkpoint):
        _, _, prepared = workspace
        ev = evaluate(checkpoint.model, prepared, "test", n_history=2)
        with pytest.raises(ConfigurationError):
            trend_analysis(ev, horizon_days=0)

    def test_csv_note_line(self, tmp_path):
        from skycast.analyses import TrendPoint

        path = write_trend(tmp_path / "trend.csv", [
            TrendPoint(day_offset=0, n_flights=2, mean_abs_differential=1.0,
                       mean_observed=10.0, mean_predicted=9.0),
        ], note="truncated")
        text = path.read_text()
        assert "# warning: truncated" in text
        assert text.strip().split("\n")[-1].startswith("0,2,1,")


def make_points(offsets, observed, naive_diff, model_diff=0.0):
    return [
        SensitivityPoint(
            day_offset=o, observed_mean=obs, model_predicted=obs - model_diff,
            model_differential=model_diff, naive_predicted=obs - nd,
            naive_differential=nd,
        )
        for o, obs, nd in zip(offsets, observed, naive_diff)
    ]


class TestShockSummaries:
    def test_shock_summary_math(self):
        # pre-shock mean 100; multiplier 1.3 -> expected differential 30
        points = make_points(
            offsets=range(0, 40),
            observed=[100.0] * 20 + [130.0] * 20,
            naive_diff=[0.0] * 20 + [27.0] * 20,
        )
        shock = ShockConfig(shock_date_offset=20, capacity_multiplier=1.3)
        out = shock_summary(points, shock)
        assert out["pre_shock_mean_total"] == pytest.approx(100.0)
        assert out["analytic_expectation"] == pytest.approx(30.0)
        assert out["post_shock_naive_differential"] == pytest.approx(27.0)
        assert out["relative_error"] == pytest.approx(0.1)

    def test_shock_summary_requires_both_windows(self):
        points = make_points(range(5), [100.0] * 5, [0.0] * 5)
        with pytest.raises(ConfigurationError):
            shock_summary(points, ShockConfig(shock_date_offset=10,
                                              capacity_multiplier=1.3))

    def test_adaptation_windows(self):
        diffs = {d: (10.0 if d < 35 else 2.0) for d in range(61)}
        points = [
            SensitivityPoint(day_offset=d, observed_mean=100.0,
                             model_predicted=100.0 - diffs[d],
                             model_differential=diffs[d],
                             naive_predicted=100.0, naive_differential=0.0)
            for d in range(61)
        ]
        out = adaptation_summary(points)
        assert out["early_mean_abs"] == pytest.approx(10.0)
        assert out["late_mean_abs"] == pytest.approx(2.0)
        with pytest.raises(ConfigurationError):
            adaptation_summary(points, early=(70, 80))


@pytest.fixture(scope="module")
def shocked(workspace, checkpoint, tmp_path_factory):
    root, dataset, prepared = workspace
    work = tmp_path_factory.mktemp("shock_work")
    shock = ShockConfig(shock_date_offset=20, capacity_multiplier=1.3)
    points, ev = sensitivity_run(checkpoint, shock, dataset, work)
    return prepared, shock, points, ev


class TestSensitivityRun:
    def test_day_coverage(self, shocked):
        _, _, points, ev = shocked
        assert [p.day_offset for p in points] == sorted(ev.per_day())
        assert points[0].day_offset == 0 and points[-1].day_offset == 90

    def test_observed_matches_records(self, shocked):
        _, _, points, ev = shocked
        per_day = ev.per_day()
        for p in points[:25]:
            expect = np.mean([r.observed_raw for r in per_day[p.day_offset]])
            assert p.observed_mean == pytest.approx(expect, rel=1e-9)
            assert p.model_differential == pytest.approx(
                p.observed_mean - p.model_predicted, rel=1e-9
            )

    def test_pre_shock_days_match_base_dataset(self, shocked, workspace, checkpoint):
        prepared, _, points, _ = shocked
        base_ev = evaluate(checkpoint.model, prepared, "test", n_history=2)
        base_by_day = {
            d: np.mean([r.observed_raw for r in recs])
            for d, recs in base_ev.per_day().items()
        }
        for p in points:
            if p.day_offset < 20:
                assert p.observed_mean == pytest.approx(
                    base_by_day[p.day_offset], rel=1e-6
                )

    def test_shock_lifts_observed_totals(self, shocked):
        _, _, points, _ = shocked
        pre = np.mean([p.observed_mean for p in points if p.day_offset < 20])
        post = np.mean([p.observed_mean for p in points if p.day_offset >= 20])
        assert post > pre * 1.15

    def test_naive_column_is_frozen_seasonal(self, shocked):
        _, _, points, _ = shocked
        out = shock_summary(points, ShockConfig(shock_date_offset=20,
                                                capacity_multiplier=1.3))
        # blind baseline misses the shock by roughly the planted jump
        assert out["relative_error"] < 0.5

    def test_csv(self, shocked, tmp_path):
        _, _, points, _ = shocked
        path = write_sensitivity(tmp_path / "sens.csv", points)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == len(points) + 2
        assert lines[1].startswith("day_offset,")


class TestWhatIf:
    def test_identical_closure_gives_zero_delta(self, workspace, checkpoint):
        _, _, prepared = workspace
        example = prepared.split_examples("test")[0]
        same = prepared.arrays(example, 2)["closure"][-1].copy()
        result = whatif(checkpoint, prepared, example, same)
        assert result.total_delta == 0.0
        assert np.all(result.delta == 0.0)
        assert result.baseline_total == pytest.approx(
            float(result.baseline_prediction.sum()), rel=1e-6
        )

    def test_target_boundary_reported(self, workspace, checkpoint):
        _, _, prepared = workspace
        example = prepared.split_examples("test")[5]
        same = prepared.arrays(example, 2)["closure"][-1].copy()
        result = whatif(checkpoint, prepared, example, same)
        reference = prepared.plan.reference_date("test")
        expect = window_boundaries(
            [example.departure_date], reference, INTERVALS
        )[0].boundary
        assert result.target_boundary == expect

    def test_scenario_changes_prediction(self, workspace, checkpoint):
        _, _, prepared = workspace
        example = prepared.split_examples("test")[0]
        alt = prepared.arrays(example, 2)["closure"][-1].copy()
        alt[:, :] = 1.0 - alt
        result = whatif(checkpoint, prepared, example, alt)
        assert result.scenario_total != result.baseline_total
        assert result.total_delta == pytest.approx(
            float(result.delta.sum()), rel=1e-6
        )

    def test_closure_validation(self, workspace, checkpoint):
        _, _, prepared = workspace
        example = prepared.split_examples("test")[0]
        good = prepared.arrays(example, 2)["closure"][-1]
        with pytest.raises(ShapeError):
            whatif(checkpoint, prepared, example, good[:, :3])
        for bad_value in (1.5, -0.1, np.nan):
            bad = good.copy()
            bad[0, 0] = bad_value
            with pytest.raises(ShapeError):
                whatif(checkpoint, prepared, example, bad)

    def test_future_closed_closure(self, workspace, checkpoint):
        _, _, prepared = workspace
        example = prepared.split_examples("test")[10]
        alt = future_closed_closure(prepared, example, 2)
        base = prepared.arrays(example, 2)["closure"][-1]
        reference = prepared.plan.reference_date("test")
        boundary = window_boundaries(
            [example.departure_date], reference, INTERVALS
        )[0].boundary
        assert np.all(alt[:, boundary + 1:] == 1.0)
        assert np.array_equal(alt[:, :boundary + 1], base[:, :boundary + 1])

    def test_csv(self, workspace, checkpoint, tmp_path):
        _, _, prepared = workspace
        example = prepared.split_examples("test")[0]
        alt = future_closed_closure(prepared, example, 2)
        result = whatif(checkpoint, prepared, example, alt)
        path = write_whatif(tmp_path / "whatif.csv", result)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 3 + 6 * 8 * 2
        assert f"total_delta={result.total_delta:.10g}" in lines[1]
