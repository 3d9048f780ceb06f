"""Shared mini-batch SGD loop for the classifiers."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data_model import ProtocolSplit
from .errors import DataError, ValidationError
from .fusion import ScoreTable


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip_norm: float = 5.0       # global gradient-norm clip; 0 disables
    schedule: str = "cosine"     # "constant" or "cosine" decay to zero over all epochs

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        if self.schedule == "constant":
            return self.lr
        if self.schedule == "cosine":
            return 0.5 * self.lr * (1.0 + np.cos(np.pi * (epoch - 1) / self.epochs))
        raise ValidationError(f"unknown learning-rate schedule {self.schedule!r}")


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)

    def save_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "accuracy"])
            for e, l, a in zip(self.epochs, self.loss, self.accuracy):
                w.writerow([e, repr(float(l)), "" if a is None else repr(float(a))])

    @classmethod
    def load_csv(cls, path) -> "TrainHistory":
        h = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                h.epochs.append(int(row["epoch"]))
                h.loss.append(float(row["loss"]))
                h.accuracy.append(float(row["accuracy"]) if row["accuracy"] else None)
        return h


@dataclass
class Batchable:
    """Inputs as a list of arrays sharing the leading sample axis."""
    inputs: list
    labels: np.ndarray
    sample_ids: list

    def __len__(self):
        return len(self.sample_ids)

    def take(self, idx):
        return [x[idx] for x in self.inputs]


def split_ids(split):
    if isinstance(split, ProtocolSplit):
        return split.sample_ids("train"), split.sample_ids("test")
    train, test = split
    return set(train), set(test)


def collect_items(items: dict, ids, num_inputs: int, what: str = "inputs") -> Batchable:
    """Stack ``items[sid] = (list of arrays, class_id)`` for the ids present, in sorted order."""
    xs = [[] for _ in range(num_inputs)]
    labels, kept = [], []
    for sid in sorted(ids):
        if sid not in items:
            continue
        arrays, label = items[sid]
        if len(arrays) != num_inputs or any(a is None for a in arrays):
            raise DataError(f"sample {sid!r} does not supply all {num_inputs} {what}")
        for i, a in enumerate(arrays):
            xs[i].append(np.asarray(a, dtype=np.float64))
        labels.append(int(label))
        kept.append(sid)
    stacked = [np.stack(x) for x in xs] if kept else []
    return Batchable(stacked, np.array(labels, dtype=np.int64), kept)


def predict_batched(model, inputs, batch_size: int = 64) -> np.ndarray:
    n = inputs[0].shape[0]
    out = [model.predict([x[i:i + batch_size] for x in inputs]) for i in range(0, n, batch_size)]
    return np.concatenate(out, axis=0)


def fit_classifier(model, train: Batchable, test: Batchable, hyper: TrainConfig | None = None,
                   seed: int = 0, source=None):
    """Momentum SGD on mean cross-entropy; evaluates the test set after every epoch.

    ``model`` needs ``forward(list) -> logits Tensor``, ``predict(list) -> probs``
    and ``parameters()``.
    """
    hyper = hyper or TrainConfig()
    if len(train) == 0:
        raise DataError("no training samples found for the split")
    opt = nn.SGD(model.parameters(), hyper.lr, hyper.momentum, hyper.weight_decay)
    rng = np.random.default_rng(seed)
    history = TrainHistory()
    scores = None
    for epoch in range(1, hyper.epochs + 1):
        opt.lr = hyper.lr_at(epoch)
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            opt.zero_grad()
            loss = nn.cross_entropy_loss(model.forward(train.take(idx)), train.labels[idx] - 1)
            loss.backward()
            if hyper.clip_norm:
                opt.clip_grad_norm(hyper.clip_norm)
            opt.step()
            total += loss.item() * len(idx)
        acc = None
        if len(test):
            probs = predict_batched(model, test.inputs)
            scores = ScoreTable(tuple(test.sample_ids), test.labels, probs, dict(source or {}))
            acc = float(np.mean(scores.predictions() == test.labels))
        history.epochs.append(epoch)
        history.loss.append(total / len(train))
        history.accuracy.append(acc)
    return history, scores
