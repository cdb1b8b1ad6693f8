"""Training with per-epoch mask refresh, checkpoints, and evaluation.

Every epoch re-randomizes the training masks: each example draws a
pseudo time-to-departure on an interval boundary from
(seed, epoch, example_id), so the network keeps seeing new realization
cutoffs of the same flights. Validation and test always use the fixed
subset-start reference, making evaluation a pure function of the data.

Checkpoints are directories: params.npz (named parameter arrays),
meta.json (config echo, normalizer, shapes, version), history.csv,
mask_audit.csv, param_audit.csv.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import os
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError, FitError, MissingInputError
from .grids import IntervalGrid
from .hashing import rng_from, stable_hash
from .masking import epoch_masks, mask_volume, window_boundaries
from .models import HyperParams, TrafficNet, build_model, mse_loss, parameter_audit
from .tensorize import Normalizer, PreparedDataset, PreparedExample

CHECKPOINT_VERSION = 1
WINDOW_SPACING_DAYS = 7


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    variant: str
    hp: HyperParams
    patience: int = 10
    torch_threads: int = 0  # 0 = auto: min(4, cpu count)

    def __post_init__(self):
        if self.hp.epochs > 0 and self.patience >= self.hp.epochs:
            raise ConfigurationError(
                f"patience {self.patience} must be < epochs {self.hp.epochs}"
            )
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.torch_threads < 0:
            raise ConfigurationError("torch_threads must be >= 0")

    def effective_threads(self) -> int:
        # oversubscribing cores slows small-kernel conv nets dramatically
        return self.torch_threads or min(4, os.cpu_count() or 1)


def _member_dates(example: PreparedExample, n_history: int) -> list[dt.date]:
    return [
        example.departure_date - dt.timedelta(days=WINDOW_SPACING_DAYS * (n_history - m))
        for m in range(n_history + 1)
    ]


def _stack_batch(
    prepared: PreparedDataset,
    examples: list[PreparedExample],
    boundaries_by_id: dict,
    n_history: int,
) -> dict[str, torch.Tensor]:
    traffic, closure, season, label = [], [], [], []
    for e in examples:
        arrays = prepared.arrays(e, n_history)
        traffic.append(mask_volume(arrays["traffic"], boundaries_by_id[e.example_id]))
        closure.append(arrays["closure"])
        season.append(arrays["season"])
        label.append(arrays["label"])
    return {
        "traffic": torch.from_numpy(np.stack(traffic)),
        "closure": torch.from_numpy(np.stack(closure)),
        "season": torch.from_numpy(np.stack(season)),
        "label": torch.from_numpy(np.stack(label)),
    }


def reference_batches(
    prepared: PreparedDataset,
    split: str,
    n_history: int,
    batch_size: int,
) -> list[tuple[list[PreparedExample], dict[str, torch.Tensor]]]:
    """Fixed-reference masked batches for an evaluation split."""
    grid = prepared.intervals
    reference = prepared.plan.reference_date(split)
    examples = sorted(prepared.split_examples(split), key=lambda e: e.example_id)
    out = []
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo:lo + batch_size]
        bounds = {
            e.example_id: window_boundaries(
                _member_dates(e, n_history), reference, grid
            )
            for e in chunk
        }
        out.append((chunk, _stack_batch(prepared, chunk, bounds, n_history)))
    return out


@dataclasses.dataclass
class TrainResult:
    model: TrafficNet
    history: list[dict]
    best_epoch: int
    best_val_mse: float
    audit_rows: list[tuple]


def train(
    config: TrainConfig,
    prepared: PreparedDataset,
    n_history: int | None = None,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Train one variant; returns the best-validation model.

    n_history defaults to the hyperparameter window size, which must not
    exceed what the prepared dataset stored. With epochs = 0 the
    initialized model is returned untouched and history stays empty.
    """
    hp = config.hp
    n = hp.window_size if n_history is None else n_history
    torch.set_num_threads(config.effective_threads())
    torch.manual_seed(stable_hash(hp.seed, "torch-init") % (2 ** 63))
    sample = prepared.arrays(prepared.examples[0], n)
    season_len = int(sample["season"].shape[0])
    model = build_model(
        config.variant, hp,
        prepared.brackets.n_brackets, prepared.intervals.n_intervals,
        n, season_len,
    )
    history: list[dict] = []
    audit_rows: list[tuple] = []
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    best_val = float("inf")
    best_epoch = -1
    if hp.epochs > 0:
        optimizer = torch.optim.Adam(model.parameters(), lr=hp.learning_rate)
        train_examples = sorted(
            prepared.split_examples("train"), key=lambda e: e.example_id
        )
        if not train_examples:
            raise ConfigurationError("prepared dataset has no training examples")
        val_batches = reference_batches(prepared, "val", n, max(hp.batch_size, 64))
        grid = prepared.intervals
        since_best = 0
        for epoch in range(hp.epochs):
            plan = epoch_masks(
                [e.example_id for e in train_examples], epoch, hp.seed, grid
            )
            audit_rows.extend(plan.audit_rows())
            order = rng_from(hp.seed, "order", epoch).permutation(len(train_examples))
            model.train()
            total_loss, n_batches = 0.0, 0
            for lo in range(0, len(order), hp.batch_size):
                chunk = [train_examples[i] for i in order[lo:lo + hp.batch_size]]
                bounds = {
                    e.example_id: plan.member_boundaries(e.example_id, n)
                    for e in chunk
                }
                batch = _stack_batch(prepared, chunk, bounds, n)
                optimizer.zero_grad()
                loss = mse_loss(model(batch), batch["label"])
                if not torch.isfinite(loss):
                    raise FitError(
                        "training diverged: non-finite loss",
                        diagnostics={"epoch": epoch, "batch_start": lo,
                                     "loss": float(loss.detach())},
                    )
                loss.backward()
                optimizer.step()
                total_loss += float(loss.detach())
                n_batches += 1
            val_mse = _validation_mse(model, val_batches)
            history.append(
                {"epoch": epoch, "train_mse": total_loss / max(n_batches, 1),
                 "val_mse": val_mse}
            )
            if val_mse < best_val:
                best_val = val_mse
                best_epoch = epoch
                best_state = {
                    k: v.detach().clone() for k, v in model.state_dict().items()
                }
                since_best = 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
        model.load_state_dict(best_state)
    result = TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_val_mse=best_val,
        audit_rows=audit_rows,
    )
    if out_dir is not None:
        save_checkpoint(out_dir, result, config, prepared, n, season_len)
    return result


def _validation_mse(model, val_batches) -> float:
    model.eval()
    se_sum, n_cells = 0.0, 0
    with torch.no_grad():
        for _, batch in val_batches:
            pred = model(batch)
            se_sum += float(((pred - batch["label"]) ** 2).sum().item())
            n_cells += batch["label"].numel()
    return se_sum / max(n_cells, 1)


def save_checkpoint(
    out_dir: str | Path,
    result: TrainResult,
    config: TrainConfig,
    prepared: PreparedDataset,
    n_history: int,
    season_len: int,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().cpu().numpy() for k, v in result.model.state_dict().items()}
    np.savez(out / "params.npz", **state)
    audit = parameter_audit(result.model)
    meta = {
        "version": CHECKPOINT_VERSION,
        "kind": "skycast-checkpoint",
        "variant": config.variant,
        "hyperparams": dataclasses.asdict(config.hp),
        "patience": config.patience,
        "torch_threads": config.torch_threads,
        "n_history": n_history,
        "season_len": season_len,
        "brackets": {
            "n_brackets": prepared.brackets.n_brackets,
            "width": prepared.brackets.width,
        },
        "intervals": {
            "n_intervals": prepared.intervals.n_intervals,
            "interval_days": prepared.intervals.interval_days,
        },
        "normalizer": prepared.normalizer.to_dict(),
        "split": prepared.meta["split"],
        "dataset_hash": prepared.meta.get("dataset_hash"),
        "best_epoch": result.best_epoch,
        "best_val_mse": result.best_val_mse,
        "param_audit": audit,
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    with open(out / "history.csv", "w") as fh:
        fh.write("epoch,train_mse,val_mse\n")
        for row in result.history:
            fh.write(
                f"{row['epoch']},{row['train_mse']:.10g},{row['val_mse']:.10g}\n"
            )
    with open(out / "mask_audit.csv", "w") as fh:
        fh.write("example_id,epoch,delta,boundary\n")
        for ex, epoch, delta, boundary in result.audit_rows:
            fh.write(f"{ex},{epoch},{delta},{boundary}\n")
    with open(out / "param_audit.csv", "w") as fh:
        fh.write("module,parameters\n")
        for module, count in sorted(audit["by_module"].items()):
            fh.write(f"{module},{count}\n")
        fh.write(f"total,{audit['total']}\n")
    return out


@dataclasses.dataclass
class LoadedCheckpoint:
    model: TrafficNet
    variant: str
    hp: HyperParams
    n_history: int
    normalizer: Normalizer
    meta: dict
    path: Path


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    root = Path(path)
    meta_path = root / "meta.json"
    params_path = root / "params.npz"
    if not meta_path.exists() or not params_path.exists():
        raise MissingInputError(f"{root} is not a checkpoint directory")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as err:
        raise MissingInputError(f"checkpoint meta unreadable: {err}")
    if meta.get("kind") != "skycast-checkpoint":
        raise MissingInputError(f"{meta_path} is not a checkpoint meta file")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise MissingInputError(
            f"checkpoint version {meta.get('version')} unsupported "
            f"(want {CHECKPOINT_VERSION})"
        )
    hp_fields = dict(meta["hyperparams"])
    hp_fields["season_strides"] = tuple(hp_fields["season_strides"])
    hp = HyperParams(**hp_fields)
    model = build_model(
        meta["variant"], hp,
        meta["brackets"]["n_brackets"], meta["intervals"]["n_intervals"],
        meta["n_history"], meta["season_len"],
    )
    try:
        with np.load(params_path) as stored:
            state = {k: torch.from_numpy(stored[k]) for k in stored.files}
        model.load_state_dict(state)
    except (ValueError, KeyError, RuntimeError, OSError, zipfile.BadZipFile) as err:
        raise MissingInputError(f"checkpoint parameters unreadable: {err}")
    model.eval()
    return LoadedCheckpoint(
        model=model,
        variant=meta["variant"],
        hp=hp,
        n_history=meta["n_history"],
        normalizer=Normalizer.from_dict(meta["normalizer"]),
        meta=meta,
        path=root,
    )


@dataclasses.dataclass(frozen=True)
class FlightEval:
    example_id: str
    market_id: str
    departure_date: dt.date
    day_offset: int
    observed_norm: float
    predicted_norm: float
    observed_raw: float
    predicted_raw: float


@dataclasses.dataclass
class EvalResult:
    split: str
    mse_tensor: float
    mse_totals: float
    records: list[FlightEval]

    def per_day(self) -> dict[int, list[FlightEval]]:
        days: dict[int, list[FlightEval]] = {}
        for rec in self.records:
            days.setdefault(rec.day_offset, []).append(rec)
        return days


def evaluate(
    model,
    prepared: PreparedDataset,
    split: str,
    n_history: int | None = None,
    batch_size: int = 64,
) -> EvalResult:
    """Tensor and totals MSE plus per-flight records on one eval split.

    Inputs are masked against the split's fixed reference date; totals
    are compared on the normalized scale (raw passenger equivalents are
    carried in the records for the analyses).
    """
    n = prepared.n_history if n_history is None else n_history
    if isinstance(model, torch.nn.Module):
        model.eval()
    se_cells, n_cells = 0.0, 0
    records: list[FlightEval] = []
    with torch.no_grad():
        for chunk, batch in reference_batches(prepared, split, n, batch_size):
            pred = model(batch)
            label = batch["label"]
            se_cells += float(((pred - label) ** 2).sum().item())
            n_cells += label.numel()
            pred_totals = pred.sum(dim=(1, 2, 3))
            obs_totals = label.sum(dim=(1, 2, 3))
            for idx, e in enumerate(chunk):
                scale = prepared.normalizer.scale(e.market_id)
                records.append(
                    FlightEval(
                        example_id=e.example_id,
                        market_id=e.market_id,
                        departure_date=e.departure_date,
                        day_offset=prepared.day_offset(e),
                        observed_norm=float(obs_totals[idx]),
                        predicted_norm=float(pred_totals[idx]),
                        observed_raw=float(obs_totals[idx]) * scale,
                        predicted_raw=float(pred_totals[idx]) * scale,
                    )
                )
    if not records:
        raise ConfigurationError(f"split {split!r} has no examples to evaluate")
    mse_totals = float(
        np.mean([(r.observed_norm - r.predicted_norm) ** 2 for r in records])
    )
    return EvalResult(
        split=split,
        mse_tensor=se_cells / max(n_cells, 1),
        mse_totals=mse_totals,
        records=records,
    )


def write_flight_records(result: EvalResult, path: str | Path) -> None:
    """Per-flight CSV consumed by the trend and sensitivity analyses.

    differential = observed - predicted raw totals: positive means the
    model under-predicted.
    """
    with open(path, "w") as fh:
        fh.write(
            "example_id,market_id,departure_date,day_offset,"
            "observed_total,predicted_total,differential\n"
        )
        for r in sorted(result.records, key=lambda r: r.example_id):
            fh.write(
                f"{r.example_id},{r.market_id},{r.departure_date.isoformat()},"
                f"{r.day_offset},{r.observed_raw:.10g},{r.predicted_raw:.10g},"
                f"{r.observed_raw - r.predicted_raw:.10g}\n"
            )
