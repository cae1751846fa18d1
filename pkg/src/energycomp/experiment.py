"""Experiment orchestration: baseline training, the three compression
pipelines, and CSV/JSON report emission.

Each run produces one ExperimentRecord per (model, method): compression
rate, accuracy before/after, retraining epochs, wall time, and the energy
split (IT kWh plus the PUE-scaled facility kWh). Compression runs load a
previously trained baseline model; the gating split for every search is the
test split.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .datasets import Dataset, ingest_dataset
from .energy import (ConstantSampler, PowerMonitor, ProcessProxySampler,
                     TraceSampler)
from .linalg import svd
from .lowrank import (_layer_matrix, assemble_factorized, build_rank_plan,
                      dynamic_rank_adjust, layer_rank_search, plan_report,
                      retrain_factorized)
from .model import Model, build_cnn, build_mlp, model_inputs
from .modelio import load_model, save_model
from .pruning import apply_prune, prune_search, retrain_pruned
from .stego import apply_bitmask, capacity_search, pack_quantized, retrain_quantized
from .training import TrainConfig, evaluate, train

__all__ = [
    "ExperimentConfig",
    "ExperimentRecord",
    "emit_report",
    "load_records",
    "run_experiment",
]

METHODS = ("baseline", "stego", "prune", "lowrank")
ARCHS = ("mlp", "cnn")
SEED_ENV = "ENERGYCOMP_SEED"

CSV_COLUMNS = [
    "model", "method", "compression_rate", "accuracy_baseline",
    "accuracy_compressed", "epochs", "train_seconds", "kwh_it", "kwh_dc",
    "kwh_per_epoch_mean",
]


@dataclass
class ExperimentConfig:
    data: str
    out: str
    arch: str = "mlp"
    data_format: str = "idx"
    method: str = "baseline"
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0001
    patience: int = 3
    min_delta: float = 0.05
    max_epochs: int = 50
    batch_size: int = 128
    seed: int | None = None
    threshold: float = 0.01
    pue: float = 1.58
    sampler: dict = field(default_factory=lambda: {"kind": "proxy", "tdp_w": 65.0})
    model: str | None = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}, expected one of {ARCHS}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if not 0 <= self.threshold <= 1:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.seed is None:
            self.seed = int(os.environ.get(SEED_ENV, "0"))

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            patience=self.patience,
            min_delta=self.min_delta,
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )


@dataclass
class ExperimentRecord:
    model: str
    method: str
    compression_rate: float
    accuracy_baseline: float
    accuracy_compressed: float
    epochs: int
    train_seconds: float
    kwh_it: float
    kwh_dc: float
    kwh_per_epoch: list[float]
    # method-specific curves for plotting (stego bit curve, prune rate
    # curve, rank plans); not part of the CSV schema
    detail: dict = field(default_factory=dict)


def _build_sampler(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind", "proxy")
    cadence = spec.pop("cadence_s", 1.0)
    if kind == "constant":
        sampler = ConstantSampler(**spec)
    elif kind == "trace":
        sampler = TraceSampler(spec["path"])
    elif kind == "proxy":
        sampler = ProcessProxySampler(**spec)
    else:
        raise ValueError(f"unknown sampler kind {kind!r}")
    return sampler, cadence


def _build_model(cfg: ExperimentConfig, dataset: Dataset) -> Model:
    pixels = int(np.prod(dataset.image_shape))
    if cfg.arch == "mlp":
        return build_mlp(input_dim=pixels, classes=dataset.class_count, seed=cfg.seed)
    return build_cnn(input_shape=(1,) + dataset.image_shape,
                     classes=dataset.class_count, seed=cfg.seed)


def _monitor(cfg: ExperimentConfig) -> PowerMonitor:
    sampler, cadence = _build_sampler(cfg.sampler)
    return PowerMonitor(sampler, pue=cfg.pue, cadence_s=cadence)


def baseline_model_path(cfg: ExperimentConfig) -> Path:
    if cfg.model:
        return Path(cfg.model)
    return Path(cfg.out) / f"{cfg.arch}_baseline.nncm"


def run_experiment(cfg: ExperimentConfig) -> ExperimentRecord:
    """Run one (model, method) experiment and write its record JSON plus the
    resulting model file into cfg.out."""
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = ingest_dataset(cfg.data, cfg.data_format, seed=cfg.seed)
    tcfg = cfg.train_config()

    if cfg.method == "baseline":
        record = _run_baseline(cfg, dataset, tcfg, out_dir)
    else:
        path = baseline_model_path(cfg)
        if not path.exists():
            raise FileNotFoundError(
                f"{cfg.method} needs a trained baseline model at {path}; "
                "run the baseline first or pass --model"
            )
        baseline = load_model(path)
        runner = {"stego": _run_stego, "prune": _run_prune, "lowrank": _run_lowrank}
        record = runner[cfg.method](cfg, dataset, tcfg, baseline, out_dir)

    with open(out_dir / f"record_{cfg.arch}_{cfg.method}.json", "w") as fh:
        json.dump(asdict(record), fh, indent=2)
    return record


def _record(cfg, method, compression, acc_base, acc_comp, outcome, detail) -> ExperimentRecord:
    return ExperimentRecord(
        model=cfg.arch,
        method=method,
        compression_rate=compression,
        accuracy_baseline=acc_base,
        accuracy_compressed=acc_comp,
        epochs=outcome.epochs_run,
        train_seconds=outcome.wall_seconds,
        kwh_it=outcome.energy.kwh_it,
        kwh_dc=outcome.energy.kwh_dc,
        kwh_per_epoch=list(outcome.energy.per_epoch_kwh),
        detail=detail,
    )


def _run_baseline(cfg, dataset, tcfg, out_dir) -> ExperimentRecord:
    model = _build_model(cfg, dataset)
    outcome = train(model, dataset, tcfg, meter=_monitor(cfg))
    save_model(model, baseline_model_path(cfg))
    acc = outcome.test_accuracy
    return _record(cfg, "baseline", 0.0, acc, acc, outcome,
                   {"validation_loss": outcome.validation_loss_history})


def _gate_split(model, dataset):
    return model_inputs(model, dataset.test_x), dataset.test_y


def _run_stego(cfg, dataset, tcfg, baseline, out_dir) -> ExperimentRecord:
    gate_x, gate_y = _gate_split(baseline, dataset)
    search = capacity_search(baseline, gate_x, gate_y, threshold=cfg.threshold)
    model = apply_bitmask(baseline, search.capacity_bits)
    outcome = retrain_quantized(model, search.capacity_bits, dataset, tcfg,
                                meter=_monitor(cfg))
    with open(out_dir / f"{cfg.arch}_stego.nncq", "wb") as fh:
        fh.write(pack_quantized(model, search.capacity_bits))
    return _record(
        cfg, "stego", search.compression_rate, search.baseline_accuracy,
        outcome.test_accuracy, outcome,
        {"capacity_bits": search.capacity_bits,
         "accuracy_curve": [list(p) for p in search.accuracy_curve],
         "validation_loss": outcome.validation_loss_history},
    )


def _run_prune(cfg, dataset, tcfg, baseline, out_dir) -> ExperimentRecord:
    gate_x, gate_y = _gate_split(baseline, dataset)
    search = prune_search(baseline, gate_x, gate_y, threshold=cfg.threshold)
    model, _ = apply_prune(baseline, search.overall_rate)
    outcome = retrain_pruned(model, dataset, tcfg, meter=_monitor(cfg))
    save_model(model, out_dir / f"{cfg.arch}_prune.nncm")
    return _record(
        cfg, "prune", search.overall_rate, search.baseline_accuracy,
        outcome.test_accuracy, outcome,
        {"per_layer_rates": [list(p) for p in search.per_layer_rates],
         "validation_accuracy": evaluate(model, model_inputs(model, dataset.val_x),
                                         dataset.val_y),
         "validation_loss": outcome.validation_loss_history},
    )


def _run_lowrank(cfg, dataset, tcfg, baseline, out_dir) -> ExperimentRecord:
    gate_x, gate_y = _gate_split(baseline, dataset)
    acc_base = evaluate(baseline, gate_x, gate_y)
    cache: dict = {}
    ranks = {}
    for idx, layer in enumerate(baseline.layers):
        if layer.kind not in ("dense", "conv2d"):
            continue
        mat = _layer_matrix(layer)
        cache[idx] = svd(mat)
        r = layer_rank_search(baseline, idx, gate_x, gate_y,
                              threshold=cfg.threshold, dec=cache[idx])
        m, n = mat.shape
        if r * (m + n) < m * n:   # keep layers dense when factors would not shrink them
            ranks[idx] = r
    plan = build_rank_plan(baseline, ranks)
    plan, met = dynamic_rank_adjust(baseline, plan, gate_x, gate_y,
                                    threshold=cfg.threshold, svd_cache=cache)
    model = assemble_factorized(baseline, plan, svd_cache=cache)
    if plan.per_layer:
        outcome = retrain_factorized(model, dataset, tcfg, meter=_monitor(cfg))
    else:
        # no layer shrinks at its searched rank; the model stays dense and
        # the record carries compression 0
        outcome = train(model, dataset, tcfg, meter=_monitor(cfg))
    save_model(model, out_dir / f"{cfg.arch}_lowrank.nncm")
    return _record(
        cfg, "lowrank", plan.overall_compression, acc_base,
        outcome.test_accuracy, outcome,
        {"rank_plan": [[e.layer_index, e.rows, e.cols, e.rank] for e in plan.per_layer],
         "rank_stats": list(plan.rank_stats),
         "threshold_met": met,
         "plan_report": plan_report(plan),
         "validation_loss": outcome.validation_loss_history},
    )


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def emit_report(records: list[ExperimentRecord], csv_path, json_path=None):
    """Write the fixed-schema CSV plus a JSON file with the full records
    (per-epoch energy arrays and method curves included)."""
    if not records:
        raise ValueError("emit_report needs at least one record")
    csv_path = Path(csv_path)
    if json_path is None:
        json_path = csv_path.with_suffix(".json")
    csv_path.parent.mkdir(parents=True, exist_ok=True)

    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            mean_kwh = (sum(r.kwh_per_epoch) / len(r.kwh_per_epoch)
                        if r.kwh_per_epoch else 0.0)
            writer.writerow([
                r.model, r.method, repr(r.compression_rate),
                repr(r.accuracy_baseline), repr(r.accuracy_compressed),
                r.epochs, repr(r.train_seconds), repr(r.kwh_it), repr(r.kwh_dc),
                repr(mean_kwh),
            ])

    with open(json_path, "w") as fh:
        json.dump([asdict(r) for r in records], fh, indent=2)


def load_records(json_path) -> list[ExperimentRecord]:
    with open(json_path) as fh:
        raw = json.load(fh)
    return [ExperimentRecord(**entry) for entry in raw]


def collect_records(directory) -> list[ExperimentRecord]:
    """Read every record_*.json in a directory, sorted by filename."""
    records = []
    for path in sorted(Path(directory).glob("record_*.json")):
        with open(path) as fh:
            records.append(ExperimentRecord(**json.load(fh)))
    return records
