"""Shared value types: label spaces, datasets, score matrices and confidence sets.

Labels are 1-based everywhere a user can see them (``1..K``). Internally the
score matrices are indexed 0..K-1 along the class axis.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabelSpace:
    """The label set ``{1, ..., K}``."""

    k_classes: int

    def __post_init__(self):
        if int(self.k_classes) != self.k_classes or self.k_classes < 2:
            raise ValueError(f"need K >= 2 classes, got {self.k_classes}")

    def labels(self) -> np.ndarray:
        return np.arange(1, self.k_classes + 1)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"features must be a non-empty n x d matrix, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError("labels must be a vector with one entry per feature row")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain NaN or inf")
        if y.size and (not np.issubdtype(y.dtype, np.integer)):
            if not np.all(y == np.round(y)):
                raise ValueError("labels must be integers")
            y = y.astype(np.int64)
        if np.any(y < 1):
            raise ValueError("labels are 1-based; found a label < 1")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y.astype(np.int64)))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def check_labels(self, k_classes: int) -> None:
        if self.labels.max() > k_classes:
            raise ValueError(f"label {self.labels.max()} outside 1..{k_classes}")

    def unlabeled(self) -> "UnlabeledDataset":
        return UnlabeledDataset(self.features)

    def head(self, m: int) -> "LabeledDataset":
        return LabeledDataset(self.features[:m], self.labels[:m])

    def tail(self, m: int) -> "LabeledDataset":
        return LabeledDataset(self.features[self.n - m:], self.labels[self.n - m:])


@dataclass(frozen=True, eq=False)
class UnlabeledDataset:
    """Feature-only sample. ``N = 0`` is allowed; pass ``dim`` in that case."""

    features: np.ndarray
    dim: int = field(default=-1)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.size == 0:
            d = self.dim if self.dim >= 1 else (x.shape[1] if x.ndim == 2 else -1)
            if d < 1:
                raise ValueError("an empty unlabeled set needs an explicit dim")
            x = np.empty((0, d))
        if x.ndim != 2:
            raise ValueError(f"features must be an N x d matrix, got shape {x.shape}")
        if self.dim not in (-1, x.shape[1]):
            raise ValueError(f"dim={self.dim} disagrees with features of width {x.shape[1]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain NaN or inf")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "dim", x.shape[1])

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @classmethod
    def empty(cls, dim: int) -> "UnlabeledDataset":
        return cls(np.empty((0, dim)), dim=dim)


def as_score_matrix(scores, clip: bool = True) -> np.ndarray:
    """Validate an ``M x K`` score matrix, clipping it into ``[0, 1]``."""
    p = np.asarray(scores, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or p.shape[1] < 2:
        raise ValueError(f"scores must be an M x K matrix with K >= 2, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("scores contain NaN or inf")
    if clip:
        p = np.clip(p, 0.0, 1.0)
    return p


@dataclass(frozen=True)
class ConfidenceSet:
    """A subset of ``{1, ..., K}`` stored as an integer bitmask.

    Bit ``k - 1`` is set when label ``k`` is a member. Python integers are
    unbounded, so the same representation covers any K.
    """

    k_classes: int
    bits: int = 0

    def __post_init__(self):
        LabelSpace(self.k_classes)
        if self.bits < 0 or self.bits >> self.k_classes:
            raise ValueError("bitmask has members outside 1..K")

    @classmethod
    def from_labels(cls, labels, k_classes: int) -> "ConfidenceSet":
        bits = 0
        for lab in labels:
            lab = int(lab)
            if not 1 <= lab <= k_classes:
                raise ValueError(f"label {lab} outside 1..{k_classes}")
            bits |= 1 << (lab - 1)
        return cls(k_classes, bits)

    @classmethod
    def from_mask(cls, mask) -> "ConfidenceSet":
        mask = np.asarray(mask, dtype=bool)
        return cls.from_labels(np.flatnonzero(mask) + 1, mask.shape[0])

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(k + 1 for k in range(self.k_classes) if self.bits >> k & 1)

    @property
    def cardinality(self) -> int:
        return self.bits.bit_count()

    def __len__(self) -> int:
        return self.cardinality

    def __contains__(self, label) -> bool:
        label = int(label)
        return 1 <= label <= self.k_classes and bool(self.bits >> (label - 1) & 1)

    def __iter__(self):
        return iter(self.members)

    def to_mask(self) -> np.ndarray:
        return np.array([bool(self.bits >> k & 1) for k in range(self.k_classes)])


def confidence_set_cardinality(s: ConfidenceSet) -> int:
    return s.cardinality


def symmetric_difference_size(a: ConfidenceSet, b: ConfidenceSet) -> int:
    """``|a △ b|``; both sets must live on the same label space."""
    if a.k_classes != b.k_classes:
        raise ValueError(f"label spaces differ: K={a.k_classes} vs K={b.k_classes}")
    return (a.bits ^ b.bits).bit_count()


# ---------------------------------------------------------------- CSV I/O


def _header(dim: int, with_labels: bool) -> list[str]:
    cols = [f"x_{j}" for j in range(1, dim + 1)]
    return cols + ["y"] if with_labels else cols


def dataset_to_csv(data, path=None) -> str:
    """Write a dataset as CSV (``x_1..x_d`` then ``y`` when labeled).

    Returns the CSV text; also writes it to ``path`` if given.
    """
    labeled = isinstance(data, LabeledDataset)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(data.dim, labeled))
    for i in range(data.n):
        row = [repr(float(v)) for v in data.features[i]]
        if labeled:
            row.append(str(int(data.labels[i])))
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_dataset_csv(path, k_classes: int | None = None):
    """Read a dataset CSV; returns a LabeledDataset if a ``y`` column exists."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    labeled = bool(header) and header[-1] == "y"
    xcols = header[:-1] if labeled else header
    if not xcols or xcols != [f"x_{j}" for j in range(1, len(xcols) + 1)]:
        raise ValueError(f"{path}: header must be x_1..x_d[,y], got {header}")
    body = [r for r in rows[1:] if r]
    if any(len(r) != len(header) for r in body):
        raise ValueError(f"{path}: ragged rows")
    x = np.array([[float(v) for v in r[: len(xcols)]] for r in body], dtype=float).reshape(
        len(body), len(xcols)
    )
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{path}: features contain NaN or inf")
    if not labeled:
        return UnlabeledDataset(x, dim=len(xcols))
    y = np.array([int(r[-1]) for r in body], dtype=np.int64)
    data = LabeledDataset(x, y)
    if k_classes is not None:
        data.check_labels(k_classes)
    return data
