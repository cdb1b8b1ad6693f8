"""Flight-level passenger traffic forecasting.

Booking activity is modeled as a fare-bracket x booking-interval x
channel tensor per flight; a multimodal network predicts the target
flight's final tensor from a window of same-weekday predecessors, the
fare-closure plan, and seasonality features. Includes a seeded
synthetic booking generator, realization masking with per-epoch
augmentation, classical baselines, and analysis tooling.
"""

__version__ = "0.1.0"

from .domain import (
    CHANNELS,
    MASK_VALUE,
    ClosureMatrix,
    FlightInstance,
    HistoricalWindow,
    SeasonalityVector,
    TrafficTensor,
)
from .grids import FareBracketGrid, IntervalGrid, MaskSpec

__all__ = [
    "CHANNELS",
    "MASK_VALUE",
    "ClosureMatrix",
    "FareBracketGrid",
    "FlightInstance",
    "HistoricalWindow",
    "IntervalGrid",
    "MaskSpec",
    "SeasonalityVector",
    "TrafficTensor",
    "__version__",
]
