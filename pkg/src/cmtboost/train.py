"""Adam with decoupled weight decay, the step learning-rate schedule and the
training loop with validation-based model selection."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .data import AugmentationSpec, DatasetSplit, augment, record_seed
from .metrics import DegenerateInputError, predict, report_from_scores
from .tensor import Tensor, backward

logger = logging.getLogger(__name__)


class OptimizerError(FloatingPointError):
    """A non-finite gradient reached the optimizer."""


class DivergenceError(FloatingPointError):
    """Training loss became non-finite.

    ``last_good`` holds the best parameter snapshot seen so far (or the
    initial weights), so callers can still persist a usable checkpoint.
    """

    def __init__(self, message: str, epoch: int, last_good: dict, history: list):
        super().__init__(message)
        self.epoch = epoch
        self.last_good = last_good
        self.history = history


# ---------------------------------------------------------------------------
# schedule

def lr_at(epoch: int, base: float = 1e-3, decay: float = 0.85, every: int = 20) -> float:
    """``base * decay ** floor(epoch / every)``, rounded once from exact rationals.

    Repeated float multiplication drifts by an ulp (0.85**2 * 1e-3 is not the
    double nearest 7.225e-4); exact arithmetic gives the correctly rounded value.
    """
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    k = epoch // every
    return float(Fraction(str(base)) * Fraction(str(decay)) ** k)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.04
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: Optional[float] = None) -> None:
    """One in-place bias-corrected Adam update with decoupled weight decay.

    ``params`` maps names to arrays (updated in place); ``grads`` maps the same
    names to gradients. Decay is applied as its own multiplicative shrink
    ``p *= 1 - lr * wd`` before the moment update, so it never enters m or v.
    All gradients are checked before any parameter changes.
    """
    lr = state.lr if lr is None else lr
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise OptimizerError(f"missing gradient for parameter {name}")
        if g.shape != p.shape:
            raise OptimizerError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient in parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    shrink = 1.0 - lr * state.weight_decay
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if state.weight_decay:
            p *= p.dtype.type(shrink)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    lr_decay: float = 0.85
    lr_decay_every: int = 20
    weight_decay: float = 0.04
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    augment: bool = True
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    seed: int = 0
    checkpoint_every: int = 0  # 0 = only the best model is written
    residual_init: str = ""    # checkpoint whose "res." tensors seed the residual branch

    def validate(self) -> "TrainConfig":
        from .model import ConfigError
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("train.lr must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("train.lr_decay must be in (0, 1]")
        if self.lr_decay_every < 1:
            raise ConfigError("train.lr_decay_every must be >= 1")
        if self.weight_decay < 0 or self.lr * self.weight_decay >= 1:
            raise ConfigError("train.weight_decay must be >= 0 with lr * weight_decay < 1")
        if self.checkpoint_every < 0:
            raise ConfigError("train.checkpoint_every must be >= 0")
        return self

    def lr_for(self, epoch: int) -> float:
        return lr_at(epoch, self.lr, self.lr_decay, self.lr_decay_every)


HISTORY_FIELDS = ("epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc",
                  "val_sen", "val_pre", "val_f1", "val_auc")


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_state: dict
    seconds: float

    def history_csv(self) -> str:
        return history_csv(self.history)


def history_csv(history: Sequence[dict]) -> str:
    lines = [",".join(HISTORY_FIELDS)]
    for row in history:
        cells = [str(row["epoch"])] + [f"{row[k]:.8g}" if k == "lr" else f"{row[k]:.8f}"
                                       for k in HISTORY_FIELDS[1:]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def snapshot(model) -> dict:
    return {name: p.data.copy() for name, p in model.named_parameters()}


def restore(model, state: dict) -> None:
    for name, p in model.named_parameters():
        p.data[...] = state[name]


def _stack(records, dtype) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([r.pixels for r in records]).astype(dtype)
    return x, np.array([r.label for r in records], dtype=np.intp)


def _nll(scores: np.ndarray, labels: np.ndarray) -> float:
    p = np.where(labels == 1, scores, 1.0 - scores)
    return float(-np.mean(np.log(np.clip(p, 1e-12, 1.0))))


def dataset_loss(model, records, batch_size: int = 32) -> float:
    """Mean cross-entropy of ``records`` in inference mode."""
    x, y = _stack(records, model.head.fc1_w.dtype)
    scores, _ = predict(model, x, batch_size)
    return _nll(scores, y)


def _better(row: dict, best: Optional[dict]) -> bool:
    """Validation F1 decides; ties go to the lower validation loss."""
    if best is None:
        return True
    if row["val_f1"] != best["val_f1"]:
        return row["val_f1"] > best["val_f1"]
    return row["val_loss"] < best["val_loss"]


def train(model, split: DatasetSplit, cfg: TrainConfig,
          on_improve: Optional[Callable[[int, dict], None]] = None,
          on_epoch: Optional[Callable[[int, dict, "Module"], None]] = None) -> TrainResult:
    """Mini-batch training with per-epoch validation.

    Shuffling, augmentation and dropout masks are all derived from
    ``cfg.seed`` so two runs with the same inputs produce identical histories.
    ``on_improve(epoch, state)`` fires whenever the validation selection
    criterion improves; ``on_epoch(epoch, row, model)`` after every epoch.
    On return the model holds the best parameters.
    """
    cfg.validate()
    if not split.train or not split.validation:
        raise DegenerateInputError("training needs non-empty train and validation splits")
    start = time.perf_counter()
    dtype = model.head.fc1_w.dtype
    named = dict(model.named_parameters())
    state = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    x_val, y_val = _stack(split.validation, dtype)
    history: list[dict] = []
    best_row, best_state = None, snapshot(model)
    n = len(split.train)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_for(epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        loss_sum, correct = 0.0, 0
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            batch = [split.train[i] for i in order[lo:lo + cfg.batch_size]]
            if cfg.augment:
                batch = [augment(r, cfg.augmentation, record_seed(cfg.seed, r.id, epoch))
                         for r in batch]
            x, y = _stack(batch, dtype)
            model.zero_grad()
            logits, _ = model.logits(Tensor(x), training=True,
                                     seed=record_seed(cfg.seed, "dropout", epoch, b) % 2**32)
            loss = ops.cross_entropy(logits, y)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"loss became {value} at epoch {epoch}, batch {b}",
                                      epoch, best_state, history)
            backward(loss)
            adam_step({k: p.data for k, p in named.items()},
                      {k: p.grad for k, p in named.items()}, state, lr)
            loss_sum += value * len(batch)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == y))
        scores, _ = predict(model, x_val)
        rep = report_from_scores(scores, y_val)
        row = {"epoch": epoch, "lr": lr, "train_loss": loss_sum / n,
               "train_acc": 100.0 * correct / n, "val_loss": _nll(scores, y_val),
               "val_acc": rep.acc, "val_sen": rep.sen, "val_pre": rep.pre, "val_f1": rep.f1,
               "val_auc": rep.auc_roc if np.isfinite(rep.auc_roc) else 0.0}
        history.append(row)
        logger.info("epoch %d loss %.4f train_acc %.1f val_f1 %.1f", epoch, row["train_loss"],
                    row["train_acc"], row["val_f1"])
        if _better(row, best_row):
            best_row, best_state = row, snapshot(model)
            if on_improve:
                on_improve(epoch, best_state)
        if on_epoch:
            on_epoch(epoch, row, model)
    restore(model, best_state)
    return TrainResult(history, best_row["epoch"], best_state, time.perf_counter() - start)
