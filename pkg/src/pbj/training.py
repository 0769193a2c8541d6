"""SGD training with in-batch class-example sampling."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import Dataset, make_training_batch
from .model import BaselineModel, PBJModel
from .tensor import NonFiniteError, Tensor

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 75
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: tuple[tuple[int, float], ...] = ((25, 0.1), (50, 0.1))
    gamma: float = 100.0
    seed: int = 0

    def __post_init__(self):
        self.schedule = tuple((int(e), float(m)) for e, m in self.schedule)
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        epochs = [e for e, _ in self.schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("schedule epochs must be strictly increasing")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Initial rate times every multiplier whose trigger epoch has been reached."""
    lr = config.lr
    for trigger, multiplier in config.schedule:
        if epoch >= trigger:
            lr *= multiplier
    return lr


class SGD:
    """Heavy-ball SGD: ``v = momentum * v + (g + wd * p)``, ``p -= lr * v``."""

    def __init__(self, params: list[Tensor], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        sgd_step(self.params, [p.grad for p in self.params], self.velocity, lr, self.momentum, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def sgd_step(params, grads, velocity, lr, momentum=0.0, weight_decay=0.0) -> None:
    """In-place update of ``params`` and ``velocity``; ``None`` grads count as zero."""
    for p, g, v in zip(params, grads, velocity):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("sgd_step: non-finite gradient")
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * p.data
        p.data -= (lr * v).astype(p.dtype)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    lr: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint_path: str | None = None

    def to_csv(self, path, config_hash: str = "", seed: int | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "accuracy", "lr", "config_hash", "seed"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.loss), repr(r.accuracy), repr(r.lr), config_hash, seed])
        return path


def pbj_batch_loss(model: PBJModel, dataset: Dataset, batch) -> tuple[Tensor, np.ndarray]:
    """Cross-entropy of a training batch; one backbone pass over its unique examples."""
    latents = model.forward_latent(dataset.features[batch.encode_ids])
    n = len(batch.anchor_ids)
    anchors = T.take(latents, np.arange(n))
    class_latents = T.take(latents, batch.slots)
    scores = model.scores_from_latents(anchors, class_latents)
    return T.softmax_cross_entropy(scores, batch.labels), scores.data


def baseline_batch_loss(model: BaselineModel, dataset: Dataset, ids) -> tuple[Tensor, np.ndarray]:
    scores = model(dataset.features[ids])
    return T.softmax_cross_entropy(scores, dataset.labels[ids]), scores.data


def train(
    model,
    dataset: Dataset,
    config: TrainConfig,
    checkpoint_path=None,
    meta: dict | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainReport:
    """Train ``model`` in place. Every example is an anchor once per epoch."""
    dataset.check_all_classes()
    if dataset.num_classes != model.num_classes:
        raise ValueError(f"model has {model.num_classes} classes, dataset {dataset.num_classes}")
    rng = np.random.default_rng(config.seed)
    opt = SGD(model.parameters(), config.momentum, config.weight_decay)
    report = TrainReport()
    is_pbj = isinstance(model, PBJModel)
    start = time.perf_counter()
    model.train()
    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        order = rng.permutation(len(dataset))
        total_loss, correct = 0.0, 0
        for b0 in range(0, len(order), config.batch_size):
            ids = order[b0 : b0 + config.batch_size]
            opt.zero_grad()
            try:
                if is_pbj:
                    batch = make_training_batch(dataset, ids, rng)
                    loss, scores = pbj_batch_loss(model, dataset, batch)
                else:
                    loss, scores = baseline_batch_loss(model, dataset, ids)
                T.backward(loss)
                opt.step(lr)
            except NonFiniteError as exc:
                raise DivergenceError(f"non-finite values at epoch {epoch}, batch {b0 // config.batch_size}: {exc}") from exc
            total_loss += loss.item() * len(ids)
            correct += int((scores.argmax(axis=1) == dataset.labels[ids]).sum())
        record = EpochRecord(epoch, total_loss / len(dataset), correct / len(dataset), lr)
        report.epochs.append(record)
        log.info("epoch %d loss %.4f acc %.4f lr %g", epoch, record.loss, record.accuracy, lr)
        if on_epoch is not None:
            on_epoch(record)
    report.wall_time = time.perf_counter() - start
    model.eval()
    if checkpoint_path is not None:
        report.checkpoint_path = str(save_checkpoint(model, checkpoint_path, meta))
    return report
