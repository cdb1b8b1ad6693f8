"""Core value types for flight-level booking tensors.

A flight instance (one market, one departure date) is summarized by:

* TrafficTensor: (F, D, 2) float array; channel 0 counts bookings made
  through the carrier's own local channel, channel 1 counts flow-through
  bookings from partner itineraries.
* ClosureMatrix: (F, D) array in [0, 1]; fraction of each fare/interval
  cell during which the bracket was closed for sale.
* SeasonalityVector: flat per-flight feature vector (calendar and market
  descriptors), layout fixed by `SeasonalityVector.LAYOUT`.

Multi-flight history for one departure is a HistoricalWindow: the target
flight plus n earlier same-weekday departures, ordered oldest first, each
exactly 7 days apart.
"""

from __future__ import annotations

import dataclasses
import datetime as dt

import numpy as np

from .errors import DomainError, GapError, ShapeError
from .grids import FareBracketGrid, IntervalGrid

MASK_VALUE = -1.0

N_CHANNELS = 2
CHANNELS = ("local", "flow")


def _check_2d(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-d, got shape {arr.shape}")
    return arr


@dataclasses.dataclass(frozen=True)
class TrafficTensor:
    """Booking counts per (fare bracket, interval, channel). Non-negative."""

    values: np.ndarray  # (F, D, 2) float32

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != N_CHANNELS:
            raise ShapeError(
                f"traffic tensor must have shape (F, D, {N_CHANNELS}), got {arr.shape}"
            )
        if np.any(arr < 0):
            raise DomainError("traffic tensor has negative entries")
        if not np.all(np.isfinite(arr)):
            raise DomainError("traffic tensor has non-finite entries")
        object.__setattr__(self, "values", arr)

    @property
    def n_brackets(self) -> int:
        return self.values.shape[0]

    @property
    def n_intervals(self) -> int:
        return self.values.shape[1]

    def total(self) -> float:
        return float(self.values.sum())

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, :, CHANNELS.index(name)]


@dataclasses.dataclass(frozen=True)
class ClosureMatrix:
    """Fraction of each (bracket, interval) cell closed for sale, in [0, 1]."""

    values: np.ndarray  # (F, D) float32

    def __post_init__(self):
        arr = _check_2d(self.values, "closure matrix")
        if np.any(arr < 0) or np.any(arr > 1):
            raise DomainError("closure fractions must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def n_brackets(self) -> int:
        return self.values.shape[0]

    @property
    def n_intervals(self) -> int:
        return self.values.shape[1]


@dataclasses.dataclass(frozen=True)
class SeasonalityVector:
    """Per-flight calendar/market features in a fixed layout.

    Layout: 7 one-hot day-of-week (Monday=0) | sin/cos of week-of-year |
    holiday flag | origin id | destination id | capacity_norm | rasm_norm.
    """

    values: np.ndarray

    LAYOUT = (
        ["dow_%d" % i for i in range(7)]
        + ["week_sin", "week_cos", "holiday", "origin_id", "destination_id",
           "capacity_norm", "rasm_norm"]
    )

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.shape != (len(self.LAYOUT),):
            raise ShapeError(
                f"seasonality vector must have shape ({len(self.LAYOUT)},), got {arr.shape}"
            )
        object.__setattr__(self, "values", arr)

    @classmethod
    def length(cls) -> int:
        return len(cls.LAYOUT)

    @classmethod
    def build(
        cls,
        departure_date: dt.date,
        holiday: bool,
        origin_id: int,
        destination_id: int,
        capacity_norm: float,
        rasm_norm: float,
    ) -> "SeasonalityVector":
        vec = np.zeros(len(cls.LAYOUT), dtype=np.float32)
        vec[departure_date.weekday()] = 1.0
        week = departure_date.isocalendar().week
        vec[7] = np.sin(2 * np.pi * week / 52.0)
        vec[8] = np.cos(2 * np.pi * week / 52.0)
        vec[9] = 1.0 if holiday else 0.0
        vec[10] = float(origin_id)
        vec[11] = float(destination_id)
        vec[12] = float(capacity_norm)
        vec[13] = float(rasm_norm)
        return cls(vec)

    def get(self, name: str) -> float:
        return float(self.values[self.LAYOUT.index(name)])


@dataclasses.dataclass(frozen=True)
class FlightInstance:
    """One flight's full record: tensors plus identifying metadata."""

    market_id: str
    departure_date: dt.date
    traffic: TrafficTensor
    closure: ClosureMatrix
    season: SeasonalityVector
    capacity: int

    def __post_init__(self):
        if self.traffic.values.shape[:2] != self.closure.values.shape:
            raise ShapeError(
                "traffic and closure grids disagree: "
                f"{self.traffic.values.shape[:2]} vs {self.closure.values.shape}"
            )
        if self.capacity < 1:
            raise DomainError("capacity must be >= 1")


@dataclasses.dataclass(frozen=True)
class HistoricalWindow:
    """Target flight plus n prior same-weekday flights, oldest first.

    members[-1] is the target. Consecutive members must be exactly 7 days
    apart and share the market; a violated spacing raises GapError so a
    schedule hole can't silently produce a misaligned window.
    """

    members: tuple[FlightInstance, ...]

    def __post_init__(self):
        if len(self.members) < 1:
            raise DomainError("window needs at least the target flight")
        market = self.members[0].market_id
        for a, b in zip(self.members, self.members[1:]):
            if b.market_id != market:
                raise DomainError("window mixes markets")
            gap = (b.departure_date - a.departure_date).days
            if gap != 7:
                raise GapError(
                    f"window members {a.departure_date} -> {b.departure_date} "
                    f"are {gap} days apart, expected 7"
                )

    @property
    def n_history(self) -> int:
        return len(self.members) - 1

    @property
    def target(self) -> FlightInstance:
        return self.members[-1]

    def traffic_volume(self) -> np.ndarray:
        """(n+1, F, D, 2) stack of member traffic tensors, oldest first."""
        return np.stack([m.traffic.values for m in self.members])

    def closure_volume(self) -> np.ndarray:
        """(n+1, F, D) stack of member closure matrices, oldest first."""
        return np.stack([m.closure.values for m in self.members])


def default_grids() -> tuple[FareBracketGrid, IntervalGrid]:
    return FareBracketGrid(), IntervalGrid()
