"""Model-ready inputs: tensors from bookings, windows, normalization.

The prepared-dataset directory written here is what training consumes:

    prepared/
      meta.json            grids, window size, split boundaries,
                           normalizer, dataset hash, config echo
      examples.csv         example_id, market, date, split, day_offset
      split_manifest.csv   example_id -> train|val|test
      skip_report.csv      flights excluded and why
      examples/<id>.bin    traffic (n+1,F,D,2) normalized unmasked,
           + .meta         closure (n+1,F,D), season (L,), label (F,D,2)

Stored windows are unmasked; masking is applied at batch-assembly time
(per-epoch pseudo deltas in training, the fixed subset-start reference
for validation and test). Windows are stored at the largest window size
requested, so smaller windows slice off the oldest members for free.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .domain import MASK_VALUE, FlightInstance, HistoricalWindow, TrafficTensor
from .errors import (
    ConfigurationError,
    DataIntegrityError,
    InsufficientHistoryError,
    MarketLookupError,
    MissingInputError,
)
from .grids import FareBracketGrid, IntervalGrid
from .masking import SplitPlan, chronological_split
from .tensorio import read_tensors, write_tensors

PREPARED_VERSION = 1

CHANNEL_INDEX = {"local": 0, "flow": 1, 0: 0, 1: 1}


def build_traffic_tensor(
    bookings: Iterable[tuple],
    brackets: FareBracketGrid,
    intervals: IntervalGrid,
) -> TrafficTensor:
    """Accumulate (fare, days_before_departure, channel, count) records.

    Channel may be given as "local"/"flow" or 0/1. Any booking outside
    the fare range or horizon raises an out-of-range error.
    """
    values = np.zeros((brackets.n_brackets, intervals.n_intervals, 2), dtype=np.float32)
    for fare, days_before, channel, count in bookings:
        i = brackets.bracket_index(fare)
        j = intervals.interval_index(days_before)
        values[i, j, CHANNEL_INDEX[channel]] += count
    return TrafficTensor(values)


def assemble_window(
    target: FlightInstance,
    n: int,
    store: Mapping[tuple[str, dt.date], FlightInstance],
) -> HistoricalWindow:
    """Window of the target plus its n same-weekday predecessors.

    The store maps (market_id, departure_date) to flights. A missing
    predecessor raises InsufficientHistoryError; callers exclude the
    flight and record it in the skip report rather than padding.
    """
    members = []
    for m in range(n, 0, -1):
        date = target.departure_date - dt.timedelta(days=7 * m)
        inst = store.get((target.market_id, date))
        if inst is None:
            raise InsufficientHistoryError(
                f"{target.market_id} {target.departure_date}: predecessor at {date} missing"
            )
        members.append(inst)
    members.append(target)
    return HistoricalWindow(tuple(members))


@dataclasses.dataclass(frozen=True)
class Normalizer:
    """Per-market max-scaling for traffic, plus static-feature ranges.

    traffic_scale is the largest raw cell value seen in the market's
    training flights (floor 1 so all-zero markets normalize as
    identity). Seasonality features arrive already squashed to [0, 1]
    by config-level ranges, echoed here for the record.
    """

    traffic_scale: dict[str, float]
    feature_scales: dict[str, float]

    def scale(self, market_id: str) -> float:
        try:
            return self.traffic_scale[market_id]
        except KeyError:
            raise MarketLookupError(f"no normalizer fitted for market {market_id!r}")

    def normalize(self, values: np.ndarray, market_id: str) -> np.ndarray:
        """Divide by the market scale, preserving -1 sentinels exactly."""
        arr = np.asarray(values, dtype=np.float32)
        out = arr / np.float32(self.scale(market_id))
        sentinel = arr == MASK_VALUE
        if sentinel.any():
            out = np.where(sentinel, np.float32(MASK_VALUE), out)
        return out

    def denormalize(self, values: np.ndarray, market_id: str) -> np.ndarray:
        return np.asarray(values, dtype=np.float32) * np.float32(self.scale(market_id))

    def to_dict(self) -> dict:
        return {
            "traffic_scale": dict(sorted(self.traffic_scale.items())),
            "feature_scales": dict(sorted(self.feature_scales.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(
            traffic_scale={k: float(v) for k, v in d["traffic_scale"].items()},
            feature_scales={k: float(v) for k, v in d["feature_scales"].items()},
        )


def fit_normalizer(
    training_flights: Iterable[FlightInstance],
    feature_scales: dict[str, float] | None = None,
) -> Normalizer:
    """Max cell value per market over the training split, floor 1."""
    scales: dict[str, float] = {}
    for inst in training_flights:
        peak = float(inst.traffic.values.max())
        scales[inst.market_id] = max(scales.get(inst.market_id, 1.0), peak, 1.0)
    if not scales:
        raise ConfigurationError("cannot fit a normalizer on an empty training split")
    return Normalizer(traffic_scale=scales, feature_scales=dict(feature_scales or {}))


@dataclasses.dataclass(frozen=True)
class PreparedExample:
    example_id: str
    market_id: str
    departure_date: dt.date
    split: str
    path: Path


@dataclasses.dataclass
class PreparedDataset:
    """Loaded prepared directory; tensors are cached on first access."""

    root: Path
    examples: list[PreparedExample]
    normalizer: Normalizer
    plan: SplitPlan
    brackets: FareBracketGrid
    intervals: IntervalGrid
    n_history: int
    meta: dict
    _cache: dict[str, dict[str, np.ndarray]] = dataclasses.field(default_factory=dict)

    def split_examples(self, split: str) -> list[PreparedExample]:
        return [e for e in self.examples if e.split == split]

    def arrays(self, example: PreparedExample, n_history: int | None = None) -> dict[str, np.ndarray]:
        """Tensor members for one example, window sliced to n_history+1.

        The stored window holds the prepare-time maximum; requesting a
        smaller n keeps the most recent members (the target stays last).
        """
        got = self._cache.get(example.example_id)
        if got is None:
            got = read_tensors(example.path)
            self._cache[example.example_id] = got
        n = self.n_history if n_history is None else n_history
        if n > self.n_history:
            raise ConfigurationError(
                f"prepared windows hold {self.n_history} predecessors; {n} requested"
            )
        return {
            "traffic": got["traffic"][self.n_history - n:],
            "closure": got["closure"][self.n_history - n:],
            "season": got["season"],
            "label": got["label"],
        }

    def day_offset(self, example: PreparedExample) -> int:
        """Days from the example's split reference date (val/test only)."""
        ref = self.plan.reference_date(example.split)
        return (example.departure_date - ref).days


def prepare_dataset(
    dataset,
    out_dir: str | Path,
    n_history: int = 5,
    test_months: int = 3,
    val_fraction: float = 0.10,
) -> PreparedDataset:
    """Assemble, normalize, and store every flight that has full history.

    Splits are assigned by target departure date; the normalizer is
    fitted on training-split flights only. Flights without n_history
    same-weekday predecessors land in the skip report.
    """
    out = Path(out_dir)
    (out / "examples").mkdir(parents=True, exist_ok=True)
    records = sorted(
        dataset.records, key=lambda r: (r.instance.market_id, r.instance.departure_date)
    )
    plan = chronological_split(
        [r.instance.departure_date for r in records],
        test_months=test_months,
        val_fraction=val_fraction,
    )
    store = {
        (r.instance.market_id, r.instance.departure_date): r.instance for r in records
    }
    train_flights = [
        r.instance for r in records if plan.assign(r.instance.departure_date) == "train"
    ]
    normalizer = fit_normalizer(
        train_flights, feature_scales=dataset.meta.get("feature_scales", {})
    )
    examples: list[PreparedExample] = []
    skips: list[tuple[str, str, str]] = []
    for rec in records:
        inst = rec.instance
        key = f"{inst.market_id}_{inst.departure_date.isoformat()}"
        try:
            window = assemble_window(inst, n_history, store)
        except InsufficientHistoryError as err:
            skips.append((inst.market_id, inst.departure_date.isoformat(), str(err)))
            continue
        traffic = normalizer.normalize(window.traffic_volume(), inst.market_id)
        label = traffic[-1].copy()
        if np.any(label == MASK_VALUE):
            raise DataIntegrityError(f"label for {key} contains sentinel values")
        write_tensors(
            out / "examples" / key,
            {
                "traffic": (traffic, "member,bracket,interval,channel"),
                "closure": (window.closure_volume(), "member,bracket,interval"),
                "season": (inst.season.values, "feature"),
                "label": (label, "bracket,interval,channel"),
            },
        )
        examples.append(
            PreparedExample(
                example_id=key,
                market_id=inst.market_id,
                departure_date=inst.departure_date,
                split=plan.assign(inst.departure_date),
                path=out / "examples" / key,
            )
        )
    if not examples:
        raise ConfigurationError("no flight had enough history to form an example")
    with open(out / "examples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["example_id", "market_id", "departure_date", "split", "day_offset"])
        for e in examples:
            offset = (
                (e.departure_date - plan.reference_date(e.split)).days
                if e.split in ("val", "test")
                else ""
            )
            w.writerow(
                [e.example_id, e.market_id, e.departure_date.isoformat(), e.split, offset]
            )
    with open(out / "split_manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["example_id", "split"])
        for e in examples:
            w.writerow([e.example_id, e.split])
    with open(out / "skip_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["market_id", "departure_date", "reason"])
        w.writerows(skips)
    meta = {
        "version": PREPARED_VERSION,
        "kind": "skycast-prepared",
        "n_history": n_history,
        "brackets": {"n_brackets": dataset.brackets.n_brackets, "width": dataset.brackets.width},
        "intervals": {
            "n_intervals": dataset.intervals.n_intervals,
            "interval_days": dataset.intervals.interval_days,
        },
        "split": {
            "first_date": plan.first_date.isoformat(),
            "val_start": plan.val_start.isoformat(),
            "test_start": plan.test_start.isoformat(),
            "last_date": plan.last_date.isoformat(),
        },
        "normalizer": normalizer.to_dict(),
        "dataset_seed": dataset.seed,
        "dataset_hash": dataset.manifest_hash() if dataset.path else None,
        "n_examples": len(examples),
        "n_skipped": len(skips),
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return PreparedDataset(
        root=out,
        examples=examples,
        normalizer=normalizer,
        plan=plan,
        brackets=dataset.brackets,
        intervals=dataset.intervals,
        n_history=n_history,
        meta=meta,
    )


def load_prepared(path: str | Path) -> PreparedDataset:
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise MissingInputError(f"{root} has no meta.json; not a prepared directory")
    meta = json.loads(meta_path.read_text())
    if meta.get("kind") != "skycast-prepared":
        raise DataIntegrityError(f"{meta_path} is not a prepared-dataset meta file")
    if meta.get("version") != PREPARED_VERSION:
        raise DataIntegrityError(
            f"prepared version {meta.get('version')} unsupported (want {PREPARED_VERSION})"
        )
    plan = SplitPlan(
        val_start=dt.date.fromisoformat(meta["split"]["val_start"]),
        test_start=dt.date.fromisoformat(meta["split"]["test_start"]),
        first_date=dt.date.fromisoformat(meta["split"]["first_date"]),
        last_date=dt.date.fromisoformat(meta["split"]["last_date"]),
    )
    examples = []
    with open(root / "examples.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            examples.append(
                PreparedExample(
                    example_id=row["example_id"],
                    market_id=row["market_id"],
                    departure_date=dt.date.fromisoformat(row["departure_date"]),
                    split=row["split"],
                    path=root / "examples" / row["example_id"],
                )
            )
    return PreparedDataset(
        root=root,
        examples=examples,
        normalizer=Normalizer.from_dict(meta["normalizer"]),
        plan=plan,
        brackets=FareBracketGrid(**meta["brackets"]),
        intervals=IntervalGrid(**meta["intervals"]),
        n_history=meta["n_history"],
        meta=meta,
    )
