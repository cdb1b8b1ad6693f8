"""Chronological splits, realization masking, and per-epoch mask refresh.

Masking rule: given a boundary J, every traffic entry with interval
index j > J becomes the sentinel -1; entries at j <= J pass through.
Closure grids and label tensors are never masked — fare plans are
airline-controlled and known ahead of time, and labels are the
ground-truth targets.

Evaluation masks against a fixed reference date (the start of the
validation or test period). Training instead re-randomizes each epoch:
every example draws a pseudo time-to-departure delta' on an interval
boundary, deterministically from (base_seed, epoch_index, example_id).
"""

from __future__ import annotations

import dataclasses
import datetime as dt
from typing import Iterable, Sequence

import numpy as np

from .domain import MASK_VALUE, HistoricalWindow
from .errors import ConfigurationError, DomainError, ShapeError
from .grids import IntervalGrid, MaskSpec
from .hashing import stable_hash

TEST_SPAN_DAYS = 91  # "three months" pinned to 13 exact weeks
WINDOW_SPACING_DAYS = 7


@dataclasses.dataclass(frozen=True)
class SplitPlan:
    """Date-boundary split: train < val < test, disjoint, exhaustive."""

    val_start: dt.date
    test_start: dt.date
    first_date: dt.date
    last_date: dt.date

    def __post_init__(self):
        if not (self.first_date < self.val_start < self.test_start <= self.last_date):
            raise ConfigurationError(
                f"split boundaries out of order: {self.first_date} / {self.val_start}"
                f" / {self.test_start} / {self.last_date}"
            )

    def assign(self, date: dt.date) -> str:
        if date >= self.test_start:
            return "test"
        if date >= self.val_start:
            return "val"
        return "train"

    def reference_date(self, split: str) -> dt.date:
        """Masking reference for evaluation splits: the subset start."""
        if split == "val":
            return self.val_start
        if split == "test":
            return self.test_start
        raise ConfigurationError(f"no fixed reference for split {split!r}")


def chronological_split(
    dates: Iterable[dt.date], test_months: int = 3, val_fraction: float = 0.10
) -> SplitPlan:
    """Split flight dates chronologically: last `test_months` of data as
    test, the latest `val_fraction` of the remainder as validation.

    Months are pinned to 30.4375 days (3 months = exactly 13 weeks) so
    the test period stays weekday-aligned. Validation takes whole dates:
    the boundary lands so that at least the requested fraction of the
    remaining flights falls at or after it.
    """
    dates = sorted(dates)
    if not dates:
        raise ConfigurationError("cannot split an empty dataset")
    if not (0 < val_fraction < 1):
        raise ConfigurationError("val_fraction must lie in (0, 1)")
    test_days = round(test_months * 30.4375)
    last = dates[-1]
    test_start = last - dt.timedelta(days=test_days - 1)
    remainder = [d for d in dates if d < test_start]
    if not remainder or remainder[0] >= test_start:
        raise ConfigurationError(
            f"span {dates[0]}..{last} too short for a {test_days}-day test period"
        )
    n_val = max(1, round(val_fraction * len(remainder)))
    val_start = remainder[max(0, len(remainder) - n_val)]
    if val_start == remainder[0]:
        raise ConfigurationError("validation fraction would swallow the training set")
    return SplitPlan(
        val_start=val_start,
        test_start=test_start,
        first_date=dates[0],
        last_date=last,
    )


def mask_tensor(values: np.ndarray, spec: MaskSpec) -> np.ndarray:
    """Apply the sentinel mask to a (F, D) or (F, D, C) array.

    Entries with interval index j > spec.boundary become -1; the input
    is left untouched. Intended for normalized traffic, but the rule is
    value-agnostic.
    """
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim not in (2, 3):
        raise ShapeError(f"expected (F, D) or (F, D, C), got shape {arr.shape}")
    if arr.shape[1] != spec.grid.n_intervals:
        raise ShapeError(
            f"array has {arr.shape[1]} intervals, spec grid has {spec.grid.n_intervals}"
        )
    out = arr.copy()
    out[:, spec.boundary + 1:] = MASK_VALUE
    return out


def window_boundaries(
    member_dates: Sequence[dt.date], reference_date: dt.date, grid: IntervalGrid
) -> tuple[MaskSpec, ...]:
    """Realization boundary for each window member at a reference date."""
    return tuple(
        grid.realized_boundary((d - reference_date).days) for d in member_dates
    )


def mask_volume(
    traffic_volume: np.ndarray, boundaries: Sequence[MaskSpec]
) -> np.ndarray:
    """Mask a stacked (n+1, F, D, C) traffic volume member by member."""
    vol = np.asarray(traffic_volume, dtype=np.float32)
    if vol.ndim != 4 or vol.shape[0] != len(boundaries):
        raise ShapeError(
            f"volume shaped {vol.shape} does not match {len(boundaries)} boundaries"
        )
    if any(spec.grid.n_intervals != vol.shape[2] for spec in boundaries):
        raise ShapeError(
            f"volume has {vol.shape[2]} intervals but a boundary was computed "
            "on a different grid"
        )
    out = vol.copy()
    for m, spec in enumerate(boundaries):
        out[m, :, spec.boundary + 1:, :] = MASK_VALUE
    return out


@dataclasses.dataclass(frozen=True)
class MaskedWindow:
    """A historical window with realization masking applied to traffic.

    Closure stays unmasked by design; the boundaries record which
    intervals of each member were visible.
    """

    market_id: str
    member_dates: tuple[dt.date, ...]
    traffic: np.ndarray  # (n+1, F, D, 2) with sentinels
    closure: np.ndarray  # (n+1, F, D), untouched
    boundaries: tuple[MaskSpec, ...]
    reference_date: dt.date


def mask_window(
    window: HistoricalWindow, reference_date: dt.date, grid: IntervalGrid | None = None
) -> MaskedWindow:
    """Mask every member of a window against one reference date.

    Members that departed before the reference are fully realized;
    the target may not depart before the reference. The grid defaults to
    the standard 12 x 5-day layout; pass the pipeline's grid explicitly
    when it differs.
    """
    grid = grid or IntervalGrid()
    if grid.n_intervals != window.target.traffic.n_intervals:
        raise ShapeError(
            f"window tensors have {window.target.traffic.n_intervals} intervals, "
            f"grid has {grid.n_intervals}"
        )
    if reference_date > window.target.departure_date:
        raise DomainError(
            f"reference {reference_date} is after the target departure "
            f"{window.target.departure_date}"
        )
    dates = tuple(m.departure_date for m in window.members)
    bounds = window_boundaries(dates, reference_date, grid)
    return MaskedWindow(
        market_id=window.target.market_id,
        member_dates=dates,
        traffic=mask_volume(window.traffic_volume(), bounds),
        closure=window.closure_volume().copy(),
        boundaries=bounds,
        reference_date=reference_date,
    )


def pseudo_delta(base_seed: int, epoch_index: int, example_id: str, grid: IntervalGrid) -> int:
    """Per-epoch pseudo time-to-departure, uniform on interval boundaries.

    Draws from {0, w, 2w, ..., w*D}: every value a masking boundary can
    distinguish, since partial intervals are masked whole. delta' = 0
    leaves the example fully visible; w*D masks it entirely.
    """
    n_choices = grid.n_intervals + 1
    draw = stable_hash(base_seed, epoch_index, example_id) % n_choices
    return draw * grid.interval_days


@dataclasses.dataclass(frozen=True)
class EpochMaskPlan:
    """Frozen per-epoch masking assignment for the training split."""

    base_seed: int
    epoch_index: int
    grid: IntervalGrid
    deltas: dict[str, int]

    def delta(self, example_id: str) -> int:
        return self.deltas[example_id]

    def target_boundary(self, example_id: str) -> MaskSpec:
        return self.grid.realized_boundary(self.deltas[example_id])

    def member_boundaries(self, example_id: str, n_history: int) -> tuple[MaskSpec, ...]:
        """Boundaries for all n+1 members under the pseudo reference.

        The pseudo reference sits delta' before the target departure, so
        the member m steps before the target sees delta' - 7*m days.
        """
        d = self.deltas[example_id]
        return tuple(
            self.grid.realized_boundary(d - WINDOW_SPACING_DAYS * (n_history - m))
            for m in range(n_history + 1)
        )

    def audit_rows(self) -> list[tuple[str, int, int, int]]:
        """(example_id, epoch, delta, J) rows for the mask audit dump."""
        return [
            (ex, self.epoch_index, d, self.target_boundary(ex).boundary)
            for ex, d in sorted(self.deltas.items())
        ]


def epoch_masks(
    example_ids: Iterable[str],
    epoch_index: int,
    base_seed: int,
    grid: IntervalGrid | None = None,
) -> EpochMaskPlan:
    """Deterministic per-epoch mask plan over the given training examples."""
    grid = grid or IntervalGrid()
    deltas = {
        ex: pseudo_delta(base_seed, epoch_index, ex, grid) for ex in example_ids
    }
    return EpochMaskPlan(
        base_seed=base_seed, epoch_index=epoch_index, grid=grid, deltas=deltas
    )
