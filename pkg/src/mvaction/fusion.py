"""Score tables, late fusion and the accuracy/confusion reports."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, DataError, NumericError, ValidationError

FUSION_MODES = ("addition", "multiplication", "maximum")
ONE_CHANNEL_ORDER = ("front", "side", "top")


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Per-sample class probabilities. ``labels`` hold 1-based class ids."""

    sample_ids: tuple
    labels: np.ndarray
    probs: np.ndarray
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)
        n = len(self.sample_ids)
        if probs.ndim != 2 or probs.shape[0] != n or labels.shape != (n,):
            raise ValidationError(f"score table shapes disagree: {n} ids, probs {probs.shape}, labels {labels.shape}")
        if len(set(self.sample_ids)) != n:
            raise ValidationError("score table has duplicate sample ids")
        if n and (np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)):
            raise ValidationError("score table rows must be non-negative and sum to 1")
        if n and (labels.min() < 1 or labels.max() > probs.shape[1]):
            raise ValidationError(f"labels must lie in [1, {probs.shape[1]}]")

    def __len__(self):
        return len(self.sample_ids)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    def predictions(self) -> np.ndarray:
        """1-based argmax; ties resolve to the lowest class index."""
        return np.argmax(self.probs, axis=1) + 1

    def reorder(self, sample_ids) -> "ScoreTable":
        index = {s: i for i, s in enumerate(self.sample_ids)}
        try:
            rows = [index[s] for s in sample_ids]
        except KeyError as exc:
            raise AlignmentError(f"sample {exc.args[0]!r} missing from score table {self.source}") from None
        return ScoreTable(tuple(sample_ids), self.labels[rows], self.probs[rows], dict(self.source))

    def save_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "true_class"] + [f"p{k}" for k in range(1, self.num_classes + 1)])
            for sid, lab, row in zip(self.sample_ids, self.labels, self.probs):
                w.writerow([sid, int(lab)] + [repr(float(p)) for p in row])

    @classmethod
    def load_csv(cls, path, source=None) -> "ScoreTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:2] != ["sample_id", "true_class"]:
            raise ValidationError(f"{path}: expected header 'sample_id,true_class,p1,...'")
        body = rows[1:]
        ids = [r[0] for r in body]
        labels = [int(r[1]) for r in body]
        probs = np.array([[float(x) for x in r[2:]] for r in body]).reshape(len(body), len(rows[0]) - 2)
        return cls(tuple(ids), np.array(labels), probs, source or {"path": str(path)})


def fuse_scores(tables, mode: str = "multiplication") -> ScoreTable:
    """Late fusion of aligned score tables.

    ``addition`` averages, ``multiplication`` multiplies (in log space) and
    ``maximum`` takes the elementwise max; every fused row is renormalised.
    """
    tables = list(tables)
    if len(tables) < 2:
        raise ValidationError("fusion needs at least two score tables")
    if mode not in FUSION_MODES:
        raise ValidationError(f"unknown fusion mode {mode!r}; choose from {FUSION_MODES}")
    ref = tables[0]
    for t in tables[1:]:
        if set(t.sample_ids) != set(ref.sample_ids):
            extra = sorted(set(t.sample_ids) ^ set(ref.sample_ids))
            raise AlignmentError(f"score tables cover different samples, e.g. {extra[:3]}")
        if t.num_classes != ref.num_classes:
            raise AlignmentError("score tables have different class counts")
    aligned = [ref] + [t.reorder(ref.sample_ids) for t in tables[1:]]
    for t in aligned[1:]:
        if not np.array_equal(t.labels, ref.labels):
            raise AlignmentError("score tables disagree on true labels")
    stack = np.stack([t.probs for t in aligned])
    if mode == "addition":
        fused = stack.mean(axis=0)
    elif mode == "maximum":
        fused = stack.max(axis=0)
    else:
        with np.errstate(divide="ignore"):
            logs = np.log(stack).sum(axis=0)
        top = logs.max(axis=1, keepdims=True)
        dead = ~np.isfinite(top[:, 0])
        if np.any(dead):
            sid = ref.sample_ids[int(np.argmax(dead))]
            raise NumericError(f"multiplicative fusion gives an all-zero row for sample {sid!r}")
        fused = np.exp(logs - top)
    totals = fused.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        sid = ref.sample_ids[int(np.argmax(totals[:, 0] <= 0))]
        raise NumericError(f"fusion gives an all-zero row for sample {sid!r}")
    source = {"fusion": mode, "inputs": [t.source for t in tables]}
    return ScoreTable(ref.sample_ids, ref.labels, fused / totals, source)


def one_channel_assemble(samples: dict, views=ONE_CHANNEL_ORDER) -> dict:
    """Stack per-view inputs along the channel axis, in the fixed order ``views``.

    ``samples`` maps sample_id -> {view: array (..., c)}; the result maps
    sample_id -> array with ``sum(c)`` channels.
    """
    out = {}
    for sid, per_view in samples.items():
        missing = [v for v in views if v not in per_view]
        if missing:
            raise DataError(f"sample {sid!r} is missing view(s) {missing}")
        arrays = [np.asarray(per_view[v]) for v in views]
        shapes = {a.shape[:-1] for a in arrays}
        if len(shapes) != 1:
            raise DataError(f"sample {sid!r}: views differ in spatial size {sorted(shapes)}")
        out[sid] = np.concatenate(arrays, axis=-1)
    return out


def one_channel_split(item: np.ndarray, channels) -> list:
    """Inverse of :func:`one_channel_assemble` given the per-view channel counts."""
    bounds = np.cumsum([0] + list(channels))
    return [item[..., lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]


def accuracy(table: ScoreTable) -> float:
    if len(table) == 0:
        raise ValidationError("accuracy of an empty score table is undefined")
    return float(np.mean(table.predictions() == table.labels))


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    matrix: np.ndarray           # row = true class, column = predicted; rows sum to 1 where supported
    support: np.ndarray          # samples per true class

    @property
    def empty_rows(self) -> np.ndarray:
        return self.support == 0


def confusion_matrix(table: ScoreTable, num_classes: int | None = None) -> ConfusionMatrix:
    if len(table) == 0:
        raise ValidationError("confusion matrix of an empty score table is undefined")
    k = num_classes or table.num_classes
    counts = np.zeros((k, k))
    np.add.at(counts, (table.labels - 1, table.predictions() - 1), 1.0)
    support = counts.sum(axis=1)
    safe = np.where(support > 0, support, 1.0)
    return ConfusionMatrix(counts / safe[:, None], support.astype(np.int64))


def top_reports(matrix, k: int = 5):
    """Top-k classes by diagonal value and top-k off-diagonal (true -> predicted) pairs.

    Classes are returned 1-based. Zero off-diagonal entries are not reported.
    """
    m = matrix.matrix if isinstance(matrix, ConfusionMatrix) else np.asarray(matrix, dtype=np.float64)
    n = m.shape[0]
    if k > n:
        warnings.warn(f"k={k} exceeds class count {n}; clipped", UserWarning, stacklevel=2)
        k = n
    diag = np.diag(m)
    order = sorted(range(n), key=lambda c: (-diag[c], c))
    accurate = [(c + 1, float(diag[c])) for c in order[:k]]
    pairs = [(-m[a, b], a, b) for a in range(n) for b in range(n) if a != b and m[a, b] > 0]
    pairs.sort()
    confused = [(a + 1, b + 1, -v) for v, a, b in pairs[:k]]
    return accurate, confused


def save_confusion_csv(cm: ConfusionMatrix, path):
    n = cm.matrix.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + [str(c) for c in range(1, n + 1)] + ["support"])
        for a in range(n):
            w.writerow([str(a + 1)] + [f"{v:.6f}" for v in cm.matrix[a]] + [int(cm.support[a])])


_SHADES = " .:-=+*#%@"


def render_heat_table(cm: ConfusionMatrix) -> str:
    """Character heat map, one row per true class."""
    n = cm.matrix.shape[0]
    lines = ["    " + "".join(f"{c % 10}" for c in range(1, n + 1))]
    for a in range(n):
        cells = "".join(_SHADES[min(int(v * (len(_SHADES) - 1) + 0.5), len(_SHADES) - 1)] for v in cm.matrix[a])
        flag = "  (no samples)" if cm.support[a] == 0 else ""
        lines.append(f"{a + 1:>3} {cells}{flag}")
    return "\n".join(lines) + "\n"
