"""Learning-rate schedules (CLR, CALR), SGD/AdaGrad updates and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, batches
from .models import Model, SparseRows, cross_entropy

log = logging.getLogger(__name__)

SCHEDULES = ("constant", "clr", "calr", "adagrad")
ADAGRAD_EPS = 1e-8


class OptimError(ValueError):
    pass


def clr(iteration: int, step_size: int, lr_lb: float, lr_ub: float) -> float:
    """Triangular cyclical learning rate of half-period ``step_size``."""
    bump = (lr_ub - lr_lb) / step_size
    cycle = iteration % (2 * step_size)
    if cycle < step_size:
        return lr_lb + cycle * bump
    return lr_ub - (cycle - step_size) * bump


@dataclass(frozen=True)
class CalrConfig:
    lr_lb: float = 1e-5
    lr_ub_init: float = 1e-3
    step_size: int | None = None   # None: two epochs' worth of batches
    decay: float = -0.05

    def __post_init__(self):
        if not 0 < self.lr_lb < self.lr_ub_init:
            raise OptimError(f"need 0 < lr_lb < lr_ub_init, got {self.lr_lb}, {self.lr_ub_init}")
        if self.step_size is not None and self.step_size < 1:
            raise OptimError(f"step_size must be >= 1, got {self.step_size}")
        if self.decay > 0:
            raise OptimError(f"decay must be <= 0 to anneal the upper bound, got {self.decay}")


@dataclass(frozen=True)
class CalrState:
    current_ub: float
    iteration: int = 0
    epoch: int = 0

    @classmethod
    def initial(cls, cfg: CalrConfig) -> "CalrState":
        return cls(current_ub=cfg.lr_ub_init)


def calr_epoch_update(state: CalrState, cfg: CalrConfig) -> CalrState:
    """Start-of-epoch step: decay the upper bound, warm-restart once it reaches the floor."""
    ub = state.current_ub * math.exp(cfg.decay)
    if ub <= cfg.lr_lb:
        ub = cfg.lr_ub_init
    return replace(state, current_ub=ub, epoch=state.epoch + 1)


class Schedule:
    """Per-batch learning rates for one of :data:`SCHEDULES`."""

    def __init__(self, kind: str, cfg: CalrConfig, batches_per_epoch: int):
        if kind not in SCHEDULES:
            raise OptimError(f"unknown schedule {kind!r}; expected one of {SCHEDULES}")
        self.kind = kind
        self.cfg = cfg
        self.step_size = cfg.step_size or 2 * batches_per_epoch
        self.state = CalrState.initial(cfg)

    def start_epoch(self):
        if self.kind == "calr":
            self.state = calr_epoch_update(self.state, self.cfg)
        else:
            self.state = replace(self.state, epoch=self.state.epoch + 1)

    def next_lr(self) -> float:
        it = self.state.iteration
        self.state = replace(self.state, iteration=it + 1)
        if self.kind in ("constant", "adagrad"):
            return self.cfg.lr_ub_init
        ub = self.state.current_ub if self.kind == "calr" else self.cfg.lr_ub_init
        return clr(it, self.step_size, self.cfg.lr_lb, ub)


def sgd_step(model: Model, grads: dict, lr: float, l2_weight: float = 0.0):
    """In-place ``w <- w - lr * (g + l2_weight * w)``.

    Sparse (embedding) gradients only touch, and only decay, the rows present
    in the batch.
    """
    for name, g in grads.items():
        w = model.params[name]
        if isinstance(g, SparseRows):
            rows = g.rows
            w[rows] -= lr * (g.values + l2_weight * w[rows])
        else:
            if g.shape != w.shape:
                raise OptimError(f"{name}: gradient shape {g.shape} != parameter shape {w.shape}")
            if l2_weight:
                w *= 1.0 - lr * l2_weight
            w -= lr * g


def adagrad_step(model: Model, grads: dict, lr: float, accumulators: dict,
                 l2_weight: float = 0.0):
    """In-place AdaGrad: ``acc += g**2``; ``w -= lr * g / (sqrt(acc) + 1e-8)``."""
    for name, g in grads.items():
        w = model.params[name]
        acc = accumulators.setdefault(name, np.zeros_like(w))
        if isinstance(g, SparseRows):
            rows = g.rows
            gv = g.values + l2_weight * w[rows]
            acc[rows] += gv * gv
            w[rows] -= lr * gv / (np.sqrt(acc[rows]) + ADAGRAD_EPS)
        else:
            if g.shape != w.shape:
                raise OptimError(f"{name}: gradient shape {g.shape} != parameter shape {w.shape}")
            gv = g + l2_weight * w
            acc += gv * gv
            w -= lr * gv / (np.sqrt(acc) + ADAGRAD_EPS)


@dataclass(frozen=True)
class TrainConfig:
    l2_weight: float = 0.005
    dropout: float = 0.4
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    schedule: str = "calr"

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise OptimError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.batch_size < 1 or self.epochs < 1:
            raise OptimError("batch_size and epochs must be positive")
        if self.schedule not in SCHEDULES:
            raise OptimError(f"unknown schedule {self.schedule!r}")
        if self.seed < 0:
            raise OptimError("seed must be non-negative")


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)

    HEADER = ("batch_index", "epoch", "lr", "train_loss", "dev_accuracy")

    def add(self, batch_index, epoch, lr, loss, dev_accuracy=None):
        self.rows.append((batch_index, epoch, lr, loss, dev_accuracy))

    @property
    def dev_accuracies(self) -> list[float]:
        return [r[4] for r in self.rows if r[4] is not None]

    @property
    def lrs(self) -> list[float]:
        return [r[2] for r in self.rows]

    def write_csv(self, path, offset: int = 0):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            for b, e, lr, loss, acc in self.rows:
                w.writerow((b + offset, e, repr(lr), repr(loss), "" if acc is None else repr(acc)))


def accuracy(model: Model, dataset: Dataset) -> float:
    preds = model.predict([s.token_ids for s in dataset.sentences])
    return float(np.mean(preds == dataset.labels))


def train(model: Model, train_set: Dataset, dev_set: Dataset, cfg: TrainConfig,
          calr_cfg: CalrConfig | None = None):
    """Mini-batch training; returns ``(best_dev_snapshot, MetricsLog)``.

    Dev accuracy is measured after every epoch. The model argument is
    updated in place; the returned snapshot is the one with the best dev
    accuracy (earliest on ties).
    """
    calr_cfg = calr_cfg or CalrConfig()
    model.dropout = cfg.dropout
    per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    schedule = Schedule(cfg.schedule, calr_cfg, per_epoch)
    rng = np.random.default_rng([cfg.seed, 1])
    accumulators: dict = {}
    metrics = MetricsLog()
    best, best_acc = model.copy(), -1.0
    batch_index = 0
    for epoch in range(1, cfg.epochs + 1):
        schedule.start_epoch()
        epoch_batches = batches(train_set, cfg.batch_size, cfg.seed, epoch)
        for j, group in enumerate(epoch_batches):
            lr = schedule.next_lr()
            labels = [s.label for s in group]
            _, probs, trace = model.forward([s.token_ids for s in group], train=True, rng=rng)
            loss = float(np.mean([cross_entropy(p, y) for p, y in zip(probs, labels)]))
            grads = model.backward(trace, labels)
            if cfg.schedule == "adagrad":
                adagrad_step(model, grads, lr, accumulators, cfg.l2_weight)
            else:
                sgd_step(model, grads, lr, cfg.l2_weight)
            dev_acc = None
            if j == len(epoch_batches) - 1:
                dev_acc = accuracy(model, dev_set)
                if dev_acc > best_acc:
                    best, best_acc = model.copy(), dev_acc
                log.debug("epoch %d dev accuracy %.4f", epoch, dev_acc)
            metrics.add(batch_index, epoch, lr, loss, dev_acc)
            batch_index += 1
    return best, metrics
