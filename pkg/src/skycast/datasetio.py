"""Disk layout for generated datasets.

A dataset directory holds:

    meta.json      seed, date range, grids, market-config echo, shock,
                   feature scales; enough to regenerate bit-exactly
    flights.csv    one row per flight: attributes and booked totals
    manifest.csv   one row per flight: tensor file and derived seed
    tensors/       one container per flight (traffic, closure, season)

All files are byte-stable for a given dataset: rows sorted by
(market_id, date), fixed float formatting, no timestamps.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import hashlib
import json
from pathlib import Path

import numpy as np

from .domain import ClosureMatrix, FlightInstance, SeasonalityVector, TrafficTensor
from .errors import DataIntegrityError, MissingInputError
from .grids import FareBracketGrid, IntervalGrid
from .synthgen import FeatureScales, FlightRecord, MarketConfig, ShockConfig
from .tensorio import read_tensors, write_tensors

DATASET_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def market_to_dict(m: MarketConfig) -> dict:
    d = dataclasses.asdict(m)
    d["holiday_calendar"] = [
        [day.isoformat(), mult] for day, mult in sorted(m.holiday_calendar.items())
    ]
    d["dow_multipliers"] = list(m.dow_multipliers)
    d["curve_shape"] = list(m.curve_shape)
    return d


def market_from_dict(d: dict) -> MarketConfig:
    d = dict(d)
    d["holiday_calendar"] = {
        dt.date.fromisoformat(day): mult for day, mult in d["holiday_calendar"]
    }
    d["dow_multipliers"] = tuple(d["dow_multipliers"])
    d["curve_shape"] = tuple(d["curve_shape"])
    return MarketConfig(**d)


def flight_key(market_id: str, date: dt.date) -> str:
    return f"{market_id}_{date.isoformat()}"


def write_dataset(
    records: list[FlightRecord],
    out_dir: str | Path,
    seed: int,
    markets: list[MarketConfig],
    brackets: FareBracketGrid,
    intervals: IntervalGrid,
    shock: ShockConfig | None = None,
) -> dict:
    """Write a generated dataset; returns the meta dict."""
    out = Path(out_dir)
    tensor_dir = out / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)
    records = sorted(records, key=lambda r: (r.instance.market_id, r.instance.departure_date))
    flights_rows = []
    manifest_rows = []
    for rec in records:
        inst = rec.instance
        key = flight_key(inst.market_id, inst.departure_date)
        write_tensors(
            tensor_dir / key,
            {
                "traffic": (inst.traffic.values, "bracket,interval,channel"),
                "closure": (inst.closure.values, "bracket,interval"),
                "season": (inst.season.values, "feature"),
            },
        )
        flights_rows.append(
            [
                inst.market_id,
                inst.departure_date.isoformat(),
                str(inst.capacity),
                str(int(rec.holiday_flag)),
                _fmt(rec.rasm),
                str(rec.origin_id),
                str(rec.destination_id),
                _fmt(inst.traffic.total()),
                str(rec.flight_seed),
            ]
        )
        manifest_rows.append(
            [inst.market_id, inst.departure_date.isoformat(), f"tensors/{key}", str(rec.flight_seed)]
        )
    with open(out / "flights.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["market_id", "departure_date", "capacity", "holiday_flag", "rasm",
             "origin_id", "destination_id", "booked_total", "flight_seed"]
        )
        w.writerows(flights_rows)
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["market_id", "departure_date", "file", "flight_seed"])
        w.writerows(manifest_rows)
    scales = FeatureScales.from_markets(markets)
    dates = [r.instance.departure_date for r in records]
    meta = {
        "version": DATASET_VERSION,
        "kind": "skycast-dataset",
        "seed": seed,
        "start_date": min(dates).isoformat() if dates else None,
        "end_date": max(dates).isoformat() if dates else None,
        "n_flights": len(records),
        "brackets": {"n_brackets": brackets.n_brackets, "width": brackets.width},
        "intervals": {
            "n_intervals": intervals.n_intervals,
            "interval_days": intervals.interval_days,
        },
        "markets": [market_to_dict(m) for m in markets],
        "feature_scales": dataclasses.asdict(scales),
        "shock": dataclasses.asdict(shock) if shock else None,
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return meta


@dataclasses.dataclass
class Dataset:
    """A loaded dataset: flight records plus configuration echo."""

    records: list[FlightRecord]
    markets: list[MarketConfig]
    brackets: FareBracketGrid
    intervals: IntervalGrid
    seed: int
    meta: dict
    path: Path | None = None

    def by_key(self) -> dict[str, FlightRecord]:
        return {
            flight_key(r.instance.market_id, r.instance.departure_date): r
            for r in self.records
        }

    def dates(self) -> list[dt.date]:
        return [r.instance.departure_date for r in self.records]

    def manifest_hash(self) -> str:
        if self.path is None:
            raise MissingInputError("in-memory dataset has no manifest file")
        return hashlib.sha256((self.path / "manifest.csv").read_bytes()).hexdigest()


def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset directory written by write_dataset."""
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise MissingInputError(f"{root} has no meta.json; not a dataset directory")
    meta = json.loads(meta_path.read_text())
    if meta.get("kind") != "skycast-dataset":
        raise DataIntegrityError(f"{meta_path} is not a dataset meta file")
    if meta.get("version") != DATASET_VERSION:
        raise DataIntegrityError(
            f"dataset version {meta.get('version')} unsupported (want {DATASET_VERSION})"
        )
    brackets = FareBracketGrid(**meta["brackets"])
    intervals = IntervalGrid(**meta["intervals"])
    markets = [market_from_dict(d) for d in meta["markets"]]
    records = []
    with open(root / "flights.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            date = dt.date.fromisoformat(row["departure_date"])
            key = flight_key(row["market_id"], date)
            members = read_tensors(root / "tensors" / key)
            inst = FlightInstance(
                market_id=row["market_id"],
                departure_date=date,
                traffic=TrafficTensor(members["traffic"]),
                closure=ClosureMatrix(members["closure"]),
                season=SeasonalityVector(members["season"]),
                capacity=int(row["capacity"]),
            )
            records.append(
                FlightRecord(
                    instance=inst,
                    flight_seed=int(row["flight_seed"]),
                    holiday_flag=bool(int(row["holiday_flag"])),
                    rasm=float(row["rasm"]),
                    origin_id=int(row["origin_id"]),
                    destination_id=int(row["destination_id"]),
                )
            )
    return Dataset(
        records=records,
        markets=markets,
        brackets=brackets,
        intervals=intervals,
        seed=meta["seed"],
        meta=meta,
        path=root,
    )
