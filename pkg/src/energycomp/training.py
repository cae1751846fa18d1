"""SGD-with-momentum training loop, early stopping, and evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyReport, PowerMonitor, integrate, mark_epoch
from .model import Model, forward, loss_and_grads, model_inputs

__all__ = [
    "EarlyStopper",
    "TrainConfig",
    "TrainOutcome",
    "evaluate",
    "init_velocity",
    "sgd_step",
    "train",
]


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0001
    patience: int = 3
    min_delta: float = 0.05   # relative improvement vs best validation loss
    max_epochs: int = 50
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 <= self.min_delta < 1:
            raise ValueError("min_delta must be in [0, 1)")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")


@dataclass
class TrainOutcome:
    epochs_run: int
    final_train_loss: float
    validation_loss_history: list[float]
    test_accuracy: float
    wall_seconds: float
    energy: EnergyReport


class EarlyStopper:
    """Stop once the relative validation-loss improvement over the best loss
    seen so far stays below min_delta for `patience` consecutive epochs."""

    def __init__(self, patience: int, min_delta: float):
        self.patience = patience
        self.min_delta = min_delta
        self.best: float | None = None
        self.streak = 0

    def update(self, loss: float) -> bool:
        """Record one epoch's validation loss; True means stop now."""
        if self.best is None:
            improvement = np.inf
        elif self.best > 0:
            improvement = (self.best - loss) / self.best
        else:
            improvement = self.best - loss
        if improvement < self.min_delta:
            self.streak += 1
        else:
            self.streak = 0
        if self.best is None or loss < self.best:
            self.best = loss
        return self.streak >= self.patience


def init_velocity(model: Model) -> list[dict]:
    """Zeroed momentum buffers shaped like each layer's parameters."""
    buffers = []
    for layer in model.layers:
        if layer.factor is not None:
            buffers.append({
                "u_fold": np.zeros_like(layer.factor.u_fold),
                "v_t": np.zeros_like(layer.factor.v_t),
                "bias": np.zeros_like(layer.bias),
            })
        else:
            buffers.append({
                "weights": np.zeros_like(layer.weights),
                "bias": np.zeros_like(layer.bias),
            })
    return buffers


def sgd_step(model: Model, grads: list[dict], velocity: list[dict], cfg: TrainConfig):
    """In-place update: v <- momentum*v - lr*(g + weight_decay*w); w <- w + v.

    Prune masks are re-applied after the update, so masked weights stay 0.
    """
    lr = cfg.learning_rate
    mu = cfg.momentum
    wd = cfg.weight_decay
    for layer, g, v in zip(model.layers, grads, velocity):
        if layer.factor is not None:
            params = {"u_fold": layer.factor.u_fold, "v_t": layer.factor.v_t,
                      "bias": layer.bias}
        else:
            params = {"weights": layer.weights, "bias": layer.bias}
        for name, w in params.items():
            vel = v[name]
            vel *= mu
            vel -= lr * (g[name] + wd * w)
            w += vel
        if layer.mask is not None:
            layer.weights *= layer.mask


def evaluate(model: Model, x: np.ndarray, y: np.ndarray, batch_size: int = 512) -> float:
    """Fraction of samples whose argmax logit matches the label. Argmax ties
    resolve to the lowest class index."""
    if len(x) == 0:
        raise ValueError("evaluation split is empty")
    correct = 0
    for start in range(0, len(x), batch_size):
        logits = forward(model, x[start : start + batch_size])
        correct += int(np.sum(np.argmax(logits, axis=1) == y[start : start + batch_size]))
    return correct / len(x)


def _split_loss(model: Model, x: np.ndarray, y: np.ndarray, batch_size: int = 512) -> float:
    total = 0.0
    for start in range(0, len(x), batch_size):
        xb = x[start : start + batch_size]
        yb = y[start : start + batch_size]
        logits = forward(model, xb)
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
        total += float(-logp[np.arange(len(xb)), yb].sum())
    return total / len(x)


def train(model: Model, dataset, cfg: TrainConfig, meter: PowerMonitor | None = None,
          post_step=None) -> TrainOutcome:
    """Train in place until early stop or max_epochs.

    Shuffling uses a generator seeded from cfg.seed, so runs with the same
    seed produce identical losses. `meter` is an optional PowerMonitor whose
    sampling starts at the first batch and whose ledger receives an epoch
    mark after each epoch. `post_step` runs after every optimizer step
    (quantized retraining re-applies its bit mask there).
    """
    rng = np.random.default_rng(cfg.seed)
    velocity = init_velocity(model)
    stopper = EarlyStopper(cfg.patience, cfg.min_delta)

    train_x = model_inputs(model, dataset.train_x)
    val_x = model_inputs(model, dataset.val_x)
    test_x = model_inputs(model, dataset.test_x)
    n = len(train_x)

    if meter is not None:
        meter.start()
    t0 = time.monotonic()
    val_history: list[float] = []
    train_loss = float("nan")
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(model, train_x[idx], dataset.train_y[idx])
            sgd_step(model, grads, velocity, cfg)
            if post_step is not None:
                post_step(model)
            epoch_loss += loss * len(idx)
        train_loss = epoch_loss / n
        val_history.append(_split_loss(model, val_x, dataset.val_y))
        if meter is not None:
            mark_epoch(meter.ledger, epoch)
        if stopper.update(val_history[-1]):
            break
    wall = time.monotonic() - t0

    if meter is not None:
        meter.stop()
        energy = integrate(meter.ledger)
    else:
        energy = EnergyReport.zero()

    return TrainOutcome(
        epochs_run=len(val_history),
        final_train_loss=train_loss,
        validation_loss_history=val_history,
        test_accuracy=evaluate(model, test_x, dataset.test_y),
        wall_seconds=wall,
        energy=energy,
    )
