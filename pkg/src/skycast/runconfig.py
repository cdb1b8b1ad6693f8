"""Declarative run configuration: a validated YAML file per experiment.

Every key is checked against the schema before any work starts;
unknown keys are rejected with their dotted path so typos fail loudly
instead of silently running defaults. Seed precedence is
--seed flag > SKYCAST_SEED env var > config file.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import importlib.resources
import os
from pathlib import Path

import yaml

from .analyses import ParamChoice, ParamRange
from .errors import ConfigurationError
from .grids import FareBracketGrid, IntervalGrid
from .models import HyperParams, VARIANTS
from .synthgen import MarketConfig, ShockConfig, make_default_markets
from .training import TrainConfig

_HP_FIELDS = {f.name for f in dataclasses.fields(HyperParams)}

_SCHEMA: dict = {
    "seed": int,
    "generator": {
        "n_markets": int,
        "start_date": dt.date,
        "end_date": dt.date,
    },
    "grids": {
        "n_brackets": int,
        "bracket_width": (int, float),
        "n_intervals": int,
        "interval_days": int,
    },
    "prepare": {
        "n_history": int,
        "test_months": int,
        "val_fraction": (int, float),
    },
    "model": {
        "variant": str,
        "hyperparams": dict,
    },
    "train": {
        "patience": int,
        "torch_threads": int,
    },
    "analysis": {
        "trend_horizon": int,
        "shock_offset": int,
        "shock_multiplier": (int, float),
    },
    "sweep": {
        "n_values": list,
    },
    "search": {
        "budget": int,
        "space": dict,
    },
}


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    n_markets: int = 5
    start_date: dt.date = dt.date(2024, 1, 1)
    end_date: dt.date = dt.date(2025, 6, 30)
    n_brackets: int = 10
    bracket_width: float = 100.0
    n_intervals: int = 12
    interval_days: int = 5
    n_history: int = 5
    test_months: int = 3
    val_fraction: float = 0.10
    variant: str = "DEEPSHALLOW"
    hyperparams: dict = dataclasses.field(default_factory=dict)
    patience: int = 8
    torch_threads: int = 0
    trend_horizon: int = 100
    shock_offset: int = 20
    shock_multiplier: float = 1.3
    sweep_n_values: tuple[int, ...] = (1, 2, 3, 5)
    search_budget: int = 8
    search_space: dict = dataclasses.field(default_factory=dict)

    def brackets(self) -> FareBracketGrid:
        return FareBracketGrid(n_brackets=self.n_brackets, width=self.bracket_width)

    def intervals(self) -> IntervalGrid:
        return IntervalGrid(
            n_intervals=self.n_intervals, interval_days=self.interval_days
        )

    def markets(self) -> list[MarketConfig]:
        return make_default_markets(self.n_markets)

    def build_hyperparams(self, seed: int | None = None) -> HyperParams:
        overrides = dict(self.hyperparams)
        if "season_strides" in overrides:
            overrides["season_strides"] = tuple(overrides["season_strides"])
        if seed is not None:
            overrides["seed"] = seed
        return HyperParams(**overrides)

    def train_config(self, variant: str | None = None, seed: int | None = None) -> TrainConfig:
        chosen = variant or self.variant
        if chosen not in VARIANTS:
            raise ConfigurationError(
                f"unknown variant {chosen!r}; expected one of {sorted(VARIANTS)}"
            )
        return TrainConfig(
            variant=chosen,
            hp=self.build_hyperparams(seed=seed),
            patience=self.patience,
            torch_threads=self.torch_threads,
        )

    def shock(self) -> ShockConfig:
        return ShockConfig(
            shock_date_offset=self.shock_offset,
            capacity_multiplier=self.shock_multiplier,
        )

    def echo(self) -> dict:
        out = dataclasses.asdict(self)
        out["start_date"] = self.start_date.isoformat()
        out["end_date"] = self.end_date.isoformat()
        out["sweep_n_values"] = list(self.sweep_n_values)
        out["search_space"] = {
            k: dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v
            for k, v in self.search_space.items()
        }
        return out


def _check_section(section: str, given: dict, allowed: dict) -> None:
    for key, value in given.items():
        path = f"{section}.{key}" if section else key
        if key not in allowed:
            raise ConfigurationError(f"unknown config key {path!r}")
        want = allowed[key]
        if isinstance(want, dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key {path!r} must be a mapping")
            continue
        if want is dt.date:
            if not isinstance(value, dt.date) or isinstance(value, dt.datetime):
                raise ConfigurationError(
                    f"config key {path!r} must be a date (YYYY-MM-DD)"
                )
            continue
        if want is int and isinstance(value, bool):
            raise ConfigurationError(f"config key {path!r} must be an integer")
        if not isinstance(value, want):
            raise ConfigurationError(
                f"config key {path!r} has type {type(value).__name__}"
            )


def _parse_space(raw: dict) -> dict:
    space = {}
    for name, spec in raw.items():
        if name not in _HP_FIELDS:
            raise ConfigurationError(
                f"search.space names unknown hyperparameter {name!r}"
            )
        if not isinstance(spec, dict):
            raise ConfigurationError(f"search.space.{name} must be a mapping")
        if "choices" in spec:
            extra = set(spec) - {"choices"}
            if extra:
                raise ConfigurationError(
                    f"search.space.{name} mixes choices with {sorted(extra)}"
                )
            space[name] = ParamChoice(tuple(spec["choices"]))
            continue
        allowed = {"low", "high", "log", "integer"}
        extra = set(spec) - allowed
        if extra:
            raise ConfigurationError(
                f"search.space.{name} has unknown keys {sorted(extra)}"
            )
        if "low" not in spec or "high" not in spec:
            raise ConfigurationError(
                f"search.space.{name} needs low and high (or choices)"
            )
        space[name] = ParamRange(
            low=float(spec["low"]),
            high=float(spec["high"]),
            log=bool(spec.get("log", False)),
            integer=bool(spec.get("integer", False)),
        )
    return space


def parse_config(raw: dict) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must contain a mapping at top level")
    _check_section("", raw, _SCHEMA)
    for section in raw:
        if isinstance(_SCHEMA[section], dict):
            _check_section(section, raw[section], _SCHEMA[section])

    cfg = RunConfig()
    if "seed" in raw:
        cfg.seed = int(raw["seed"])
    gen = raw.get("generator", {})
    cfg.n_markets = int(gen.get("n_markets", cfg.n_markets))
    cfg.start_date = gen.get("start_date", cfg.start_date)
    cfg.end_date = gen.get("end_date", cfg.end_date)
    grids = raw.get("grids", {})
    cfg.n_brackets = int(grids.get("n_brackets", cfg.n_brackets))
    cfg.bracket_width = float(grids.get("bracket_width", cfg.bracket_width))
    cfg.n_intervals = int(grids.get("n_intervals", cfg.n_intervals))
    cfg.interval_days = int(grids.get("interval_days", cfg.interval_days))
    prep = raw.get("prepare", {})
    cfg.n_history = int(prep.get("n_history", cfg.n_history))
    cfg.test_months = int(prep.get("test_months", cfg.test_months))
    cfg.val_fraction = float(prep.get("val_fraction", cfg.val_fraction))
    model = raw.get("model", {})
    cfg.variant = str(model.get("variant", cfg.variant))
    hp = model.get("hyperparams", {})
    unknown = set(hp) - _HP_FIELDS
    if unknown:
        raise ConfigurationError(
            f"model.hyperparams has unknown keys {sorted(unknown)}"
        )
    cfg.hyperparams = dict(hp)
    tr = raw.get("train", {})
    cfg.patience = int(tr.get("patience", cfg.patience))
    cfg.torch_threads = int(tr.get("torch_threads", cfg.torch_threads))
    ana = raw.get("analysis", {})
    cfg.trend_horizon = int(ana.get("trend_horizon", cfg.trend_horizon))
    cfg.shock_offset = int(ana.get("shock_offset", cfg.shock_offset))
    cfg.shock_multiplier = float(ana.get("shock_multiplier", cfg.shock_multiplier))
    sweep = raw.get("sweep", {})
    if "n_values" in sweep:
        values = sweep["n_values"]
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in values):
            raise ConfigurationError("sweep.n_values must be a list of integers")
        cfg.sweep_n_values = tuple(values)
    search = raw.get("search", {})
    cfg.search_budget = int(search.get("budget", cfg.search_budget))
    cfg.search_space = _parse_space(search.get("space", {}))

    if cfg.variant not in VARIANTS:
        raise ConfigurationError(
            f"unknown variant {cfg.variant!r}; expected one of {sorted(VARIANTS)}"
        )
    if cfg.end_date <= cfg.start_date:
        raise ConfigurationError("generator.end_date must be after start_date")
    if not 0 < cfg.val_fraction < 1:
        raise ConfigurationError("prepare.val_fraction must be in (0, 1)")
    cfg.build_hyperparams()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a YAML run config; bundled names also work.

    Accepts a filesystem path or the name of a packaged config
    ("default", "tiny").
    """
    candidate = Path(path)
    if not candidate.exists():
        bundled = bundled_config_path(str(path))
        if bundled is None:
            raise ConfigurationError(f"config file {path} not found")
        candidate = bundled
    try:
        raw = yaml.safe_load(candidate.read_text())
    except yaml.YAMLError as err:
        raise ConfigurationError(f"config file {candidate} is not valid YAML: {err}")
    return parse_config(raw)


def bundled_config_path(name: str) -> Path | None:
    if not name.isidentifier():
        return None
    ref = importlib.resources.files("skycast") / "configs" / f"{name}.yaml"
    try:
        if ref.is_file():
            return Path(str(ref))
    except (OSError, TypeError):
        return None
    return None


def resolve_seed(flag_seed: int | None, cfg: RunConfig) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("SKYCAST_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"SKYCAST_SEED must be an integer, got {env!r}")
    return cfg.seed
