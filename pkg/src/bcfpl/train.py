"""AdamW, the step learning-rate schedule, and the training loop."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Manifest, make_batches
from .errors import DataError, ShapeError
from .imaging import MODEL_SIDE
from .nn import BcfplModel, init_model, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    epochs: int = 20
    batch_size: int = 128
    halve_every: int = 4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    k: int = MODEL_SIDE
    attenuation: bool = True
    workers: int = 1

    def __post_init__(self):
        if not self.lr0 > 0:
            raise DataError(f"lr0 must be positive, got {self.lr0}")
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if self.k < 1:
            raise DataError(f"resolution k must be >= 1, got {self.k}")
        if self.batch_size < 1 or self.halve_every < 1:
            raise DataError("batch_size and halve_every must be positive")

    @classmethod
    def overfit_study(cls, epochs: int = 50, **overrides) -> "TrainConfig":
        """Small constant learning rate, many epochs."""
        return cls(lr0=2e-5, attenuation=False, epochs=epochs, **overrides)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Learning rate for a 0-based epoch; constant within the epoch."""
    if epoch < 0:
        raise DataError("epoch must be non-negative")
    if not config.attenuation:
        return config.lr0
    return config.lr0 * 0.5 ** (epoch // config.halve_every)


@dataclass
class AdamWState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamWState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float, config: TrainConfig) -> None:
    """One in-place AdamW update with bias correction and decoupled weight decay."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m, v = state.m[name], state.v[name]
        if config.weight_decay:
            p -= (lr * config.weight_decay) * p
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_acc: float | None = None

    def row(self):
        test = "" if self.test_acc is None else repr(float(self.test_acc))
        return [self.epoch, repr(float(self.lr)), repr(float(self.train_loss)), repr(float(self.train_acc)), test]


EPOCH_CSV_HEADER = ["epoch", "lr", "train_loss", "train_acc", "test_acc"]


def write_epoch_csv(logs, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPOCH_CSV_HEADER)
        for entry in logs:
            w.writerow(entry.row())


def read_epoch_csv(path) -> list[EpochLog]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        EpochLog(int(r["epoch"]), float(r["lr"]), float(r["train_loss"]), float(r["train_acc"]),
                 float(r["test_acc"]) if r["test_acc"] else None)
        for r in rows
    ]


@dataclass
class TrainResult:
    model: BcfplModel
    logs: list[EpochLog]
    optimizer: AdamWState = field(repr=False, default=None)

    def __iter__(self):
        # allows ``model, logs = train_run(...)``
        return iter((self.model, self.logs))


def train_run(
    config: TrainConfig,
    train_manifest: Manifest,
    eval_manifest: Manifest | None = None,
    cache: dict | None = None,
    on_epoch=None,
) -> TrainResult:
    """Train a freshly initialized model; deterministic given ``config.seed``.

    When ``eval_manifest`` is given, accuracy on it is measured after every
    epoch. ``cache`` memoizes degraded inputs across epochs (flips are still
    drawn fresh each epoch).
    """
    from .evaluate import accuracy_of, predict_scores

    if len(train_manifest) == 0:
        raise DataError("training manifest is empty")
    cache = {} if cache is None else cache
    model = init_model(config.seed)
    state = AdamWState.zeros_like(model.params)
    logs = []
    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        loss_sum, correct, seen = 0.0, 0, 0
        batches = make_batches(train_manifest, config.batch_size, config.k, True,
                               config.seed, epoch, cache, config.workers)
        for b, batch in enumerate(batches):
            if len(batch) < 2:
                # a lone trailing sample cannot be batch-normalized
                log.warning("epoch %d: skipping trailing batch of size 1", epoch)
                continue
            rng = np.random.default_rng([config.seed, epoch, b, 0x0D])
            logits, fcache = model.forward(batch.inputs, "train", rng)
            loss, dlogits = softmax_cross_entropy(logits, batch.labels)
            if not math.isfinite(loss):
                raise FloatingPointError(f"epoch {epoch}: loss became {loss}")
            grads = model.backward(fcache, dlogits)
            adamw_step(model.params, grads, state, lr, config)
            loss_sum += loss * len(batch)
            correct += int((logits.argmax(axis=1) == batch.labels).sum())
            seen += len(batch)
        if seen == 0:
            raise DataError("no trainable batches (need at least 2 training samples)")
        entry = EpochLog(epoch, lr, loss_sum / seen, correct / seen)
        if eval_manifest is not None and len(eval_manifest):
            scored = predict_scores(model, eval_manifest, config.k, config.batch_size, cache)
            entry.test_acc = accuracy_of(scored)
        logs.append(entry)
        log.info("epoch %d lr=%.3g loss=%.4f train_acc=%.4f test_acc=%s", epoch, lr,
                 entry.train_loss, entry.train_acc,
                 "-" if entry.test_acc is None else f"{entry.test_acc:.4f}")
        if on_epoch is not None:
            on_epoch(entry, model)
    return TrainResult(model, logs, state)
