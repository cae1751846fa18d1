"""Global unstructured L1 magnitude pruning.

All weights of dense and conv layers form a single pool, ranked by absolute
value; pruning a rate p zeroes the floor(p*N) smallest and records a mask so
retraining cannot resurrect them. Biases and already-factorized layers stay
out of the pool.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Model
from .training import TrainConfig, TrainOutcome, evaluate, train

__all__ = [
    "PruneOutcome",
    "apply_prune",
    "prunable_weight_count",
    "prune_search",
    "rank_weights_global",
    "retrain_pruned",
]

_PRUNABLE = ("dense", "conv2d")


@dataclass
class PruneOutcome:
    overall_rate: float                       # pruned weights / pool size
    per_layer_rates: list[tuple[int, float]]  # (layer index, fraction pruned)
    baseline_accuracy: float
    pruned_accuracy: float


def prunable_weight_count(model: Model) -> int:
    return sum(l.weights.size for l in model.layers if l.kind in _PRUNABLE)


def rank_weights_global(model: Model) -> np.ndarray:
    """(N, 2) array of (layer index, flat index), ascending by |weight|.

    Ties break by layer index then flat index, which keeps the ordering
    deterministic and makes pruned sets nested across rates.
    """
    mags, layer_ids, flat_ids = [], [], []
    for idx, layer in enumerate(model.layers):
        if layer.kind not in _PRUNABLE:
            continue
        w = np.abs(layer.weights.reshape(-1))
        mags.append(w)
        layer_ids.append(np.full(w.size, idx, dtype=np.int64))
        flat_ids.append(np.arange(w.size, dtype=np.int64))
    if not mags:
        return np.empty((0, 2), dtype=np.int64)
    mags = np.concatenate(mags)
    layer_ids = np.concatenate(layer_ids)
    flat_ids = np.concatenate(flat_ids)
    # lexsort: last key is primary
    order = np.lexsort((flat_ids, layer_ids, mags))
    return np.stack([layer_ids[order], flat_ids[order]], axis=1)


def apply_prune(model: Model, rate: float) -> tuple[Model, PruneOutcome]:
    """Mask out the floor(rate*N) smallest-magnitude weights of a copy of the
    model. Every masked weight is set to 0.0 and stays pinned there through
    any later sgd steps. Accuracy fields of the outcome are left NaN for the
    caller (the rate search) to fill."""
    if not 0 <= rate <= 1:
        raise ValueError(f"prune rate must lie in [0, 1], got {rate}")
    pruned = model.copy()
    order = rank_weights_global(pruned)
    total = len(order)
    cut = int(np.floor(rate * total))
    sel_layer = order[:cut, 0]
    sel_flat = order[:cut, 1]

    per_layer_rates = []
    for i, layer in enumerate(pruned.layers):
        if layer.kind not in _PRUNABLE:
            continue
        hits = sel_flat[sel_layer == i]
        per_layer_rates.append((i, len(hits) / layer.weights.size))
        if len(hits):
            flat_mask = np.ones(layer.weights.size, dtype=bool)
            flat_mask[hits] = False
            layer.mask = flat_mask.reshape(layer.weights.shape)
            layer.weights = layer.weights * layer.mask

    outcome = PruneOutcome(
        overall_rate=cut / total if total else 0.0,
        per_layer_rates=per_layer_rates,
        baseline_accuracy=float("nan"),
        pruned_accuracy=float("nan"),
    )
    return pruned, outcome


def prune_search(model: Model, eval_x, eval_y, threshold: float = 0.01,
                 step: float = 0.01, evaluator=None) -> PruneOutcome:
    """Raise the pruning rate in fixed steps, each applied to a fresh copy of
    the original weights, and return the outcome at the last rate before
    accuracy first drops more than `threshold` below baseline.

    The grid stops short of 1.0, so a never-violating model comes back at
    the final step (0.99 for the default 1% step).
    """
    if evaluator is None:
        evaluator = lambda m: evaluate(m, eval_x, eval_y)
    baseline = evaluator(model)

    _, zero_outcome = apply_prune(model, 0.0)
    zero_outcome.baseline_accuracy = baseline
    zero_outcome.pruned_accuracy = baseline
    best = zero_outcome
    k = 1
    while True:
        rate = k * step
        if rate >= 1.0 - 1e-12:
            break
        pruned, outcome = apply_prune(model, rate)
        acc = evaluator(pruned)
        outcome.baseline_accuracy = baseline
        outcome.pruned_accuracy = acc
        if acc < baseline - threshold:
            break
        best = outcome
        k += 1
    return best


def retrain_pruned(model: Model, dataset, cfg: TrainConfig, meter=None) -> TrainOutcome:
    """Fine-tune the surviving weights; masks are enforced by sgd_step, so
    pruned weights remain exactly 0.0 throughout."""
    return train(model, dataset, cfg, meter=meter)
