"""Fare-bracket and booking-interval grids, and the masking boundary rule.

The two axes of every traffic tensor are defined here:

* fare brackets: F contiguous price bands of equal width, covering
  [0, F * width); bookings price into exactly one bracket.
* booking intervals: D buckets of w days each counting down to departure.
  Interval index j covers days-before-departure [w*(D-1-j), w*(D-j)),
  so j = D-1 is the bucket touching departure day and j = 0 is the
  earliest bucket, w*(D-1) to w*D days out.

`realized_boundary` converts a reference date's distance to departure
into the last fully realized interval index J. Intervals with any day
still in the future count as unrealized and are masked whole.
"""

from __future__ import annotations

import dataclasses
import math

from .errors import ConfigurationError, OutOfRangeError


@dataclasses.dataclass(frozen=True)
class FareBracketGrid:
    """Equal-width price bands [i*width, (i+1)*width) for i in 0..n_brackets-1."""

    n_brackets: int = 10
    width: float = 100.0

    def __post_init__(self):
        if self.n_brackets < 1:
            raise ConfigurationError("n_brackets must be >= 1")
        if not self.width > 0:
            raise ConfigurationError("bracket width must be positive")

    @property
    def upper(self) -> float:
        return self.n_brackets * self.width

    def edges(self) -> list[float]:
        return [i * self.width for i in range(self.n_brackets + 1)]

    def bracket_index(self, fare: float) -> int:
        """Index of the band containing `fare`. Top edge is exclusive."""
        if fare < 0 or fare >= self.upper:
            raise OutOfRangeError(
                f"fare {fare} outside [0, {self.upper})"
            )
        return min(int(fare // self.width), self.n_brackets - 1)


@dataclasses.dataclass(frozen=True)
class IntervalGrid:
    """D booking intervals of w days, spanning w*D days before departure."""

    n_intervals: int = 12
    interval_days: int = 5

    def __post_init__(self):
        if self.n_intervals < 1:
            raise ConfigurationError("n_intervals must be >= 1")
        if self.interval_days < 1:
            raise ConfigurationError("interval_days must be >= 1")

    @property
    def horizon_days(self) -> int:
        return self.n_intervals * self.interval_days

    def interval_index(self, days_before_departure: int) -> int:
        """Interval j whose day range contains `days_before_departure`.

        Day 0 (departure day) lands in the last interval, j = D-1.
        """
        d = days_before_departure
        if d < 0 or d >= self.horizon_days:
            raise OutOfRangeError(
                f"days_before_departure {d} outside [0, {self.horizon_days})"
            )
        return self.n_intervals - 1 - d // self.interval_days

    def day_range(self, j: int) -> tuple[int, int]:
        """Half-open [lo, hi) days-before-departure covered by interval j."""
        if j < 0 or j >= self.n_intervals:
            raise OutOfRangeError(f"interval index {j} outside [0, {self.n_intervals})")
        lo = self.interval_days * (self.n_intervals - 1 - j)
        return lo, lo + self.interval_days

    def realized_boundary(self, days_to_departure: int) -> "MaskSpec":
        """Last fully realized interval at `days_to_departure` before departure.

        An interval is realized only if every one of its days is already in
        the past, i.e. its lower day bound is >= days_to_departure. Negative
        distances (departure already past) realize everything; distances at
        or beyond the horizon realize nothing (J = -1).
        """
        d, w, n = days_to_departure, self.interval_days, self.n_intervals
        j = n - 1 - math.ceil(d / w)
        j = max(-1, min(n - 1, j))
        return MaskSpec(boundary=j, grid=self)


@dataclasses.dataclass(frozen=True)
class MaskSpec:
    """Boundary J of realized intervals: j <= J realized, j > J masked.

    J = -1 means nothing realized; J = D-1 means the tensor is complete.
    """

    boundary: int
    grid: IntervalGrid

    def __post_init__(self):
        if not (-1 <= self.boundary <= self.grid.n_intervals - 1):
            raise OutOfRangeError(
                f"boundary {self.boundary} outside [-1, {self.grid.n_intervals - 1}]"
            )

    def is_masked(self, j: int) -> bool:
        return j > self.boundary

    @property
    def n_masked(self) -> int:
        return self.grid.n_intervals - 1 - self.boundary
