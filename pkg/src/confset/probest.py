"""Class-probability estimators.

Three model kinds share one small interface (``predict``, ``k_classes``,
``dim``, ``to_dict``):

* :class:`OraclePosterior` wraps a distribution with an exact posterior.
* :class:`KnnModel` returns neighbor label frequencies.
* :class:`SoftmaxModel` is multinomial logistic regression fit by full-batch
  gradient descent.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import LabeledDataset, _frozen
from .distgen import _softmax_rows, mixture_posterior, spec_from_dict  # noqa: F401


def _as_queries(x, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"expected queries of dimension {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("queries must be finite")
    return X, single


@dataclass(frozen=True)
class OraclePosterior:
    dist: object

    kind = "oracle"

    @property
    def k_classes(self) -> int:
        return self.dist.k_classes

    @property
    def dim(self) -> int:
        return self.dist.dim

    def predict(self, x) -> np.ndarray:
        return self.dist.posterior(x)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dist": self.dist.to_dict()}


@dataclass(frozen=True, eq=False)
class KnnModel:
    features: np.ndarray
    labels: np.ndarray  # 1-based
    k_classes: int
    k_neighbors: int

    kind = "knn"

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def neighbors(self, x, block: int = 4_000_000) -> np.ndarray:
        """Indices of the k nearest training rows; ties go to the lower index."""
        X, _ = _as_queries(x, self.dim)
        k = self.k_neighbors
        tr = self.features
        out = np.empty((X.shape[0], k), dtype=np.int64)
        step = max(1, block // tr.size)
        for s in range(0, X.shape[0], step):
            q = X[s:s + step]
            d2 = ((q[:, None, :] - tr[None, :, :]) ** 2).sum(axis=2)
            # stable sort keeps training order among equal distances
            out[s:s + step] = np.argsort(d2, axis=1, kind="stable")[:, :k]
        return out

    def predict(self, x) -> np.ndarray:
        X, single = _as_queries(x, self.dim)
        nb = self.neighbors(X)
        lab0 = self.labels[nb] - 1
        counts = np.zeros((X.shape[0], self.k_classes))
        np.add.at(counts, (np.repeat(np.arange(X.shape[0]), nb.shape[1]), lab0.ravel()), 1.0)
        p = counts / self.k_neighbors
        return p[0] if single else p

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "k_classes": self.k_classes,
            "k_neighbors": self.k_neighbors,
            "features": self.features.tolist(),
            "labels": self.labels.tolist(),
        }


def fit_knn(train: LabeledDataset, k_neighbors: int | None = None, k_classes: int | None = None) -> KnnModel:
    """kNN frequency estimator; ``k_neighbors`` defaults to ``ceil(sqrt(n))``."""
    n = train.n
    if k_neighbors is None:
        k_neighbors = math.ceil(math.sqrt(n))
    if not 1 <= k_neighbors <= n:
        raise ValueError(f"k_neighbors must lie in 1..{n}, got {k_neighbors}")
    K = int(k_classes or train.labels.max())
    train.check_labels(K)
    return KnnModel(train.features, train.labels, max(K, 2), int(k_neighbors))


# ---------------------------------------------------------------- softmax


@dataclass(frozen=True, eq=False)
class SoftmaxModel:
    """``softmax(W @ [z; 1])`` with ``z = (x - shift) / scale``.

    ``weights`` has shape ``K x (d + 1)``; the last column is the bias.
    """

    weights: np.ndarray
    shift: np.ndarray
    scale: np.ndarray

    kind = "softmax"

    @property
    def k_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1] - 1

    def predict(self, x) -> np.ndarray:
        X, single = _as_queries(x, self.dim)
        Z = _design(X, self.shift, self.scale)
        p = _softmax_rows(Z @ self.weights.T)
        return p[0] if single else p

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "weights": self.weights.tolist(),
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
        }


def _design(X, shift, scale) -> np.ndarray:
    return np.hstack([(X - shift) / scale, np.ones((X.shape[0], 1))])


def softmax_loss_grad(W: np.ndarray, Z: np.ndarray, Y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus ``l2/2 * ||W[:, :-1]||^2`` and its gradient.

    ``Z`` is the design matrix (bias column last), ``Y`` the one-hot labels.
    The bias column is not penalized.
    """
    n = Z.shape[0]
    logits = Z @ W.T
    logits -= logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(logits).sum(axis=1))
    loss = float(np.mean(logsum - (logits * Y).sum(axis=1)))
    P = np.exp(logits - logsum[:, None])
    grad = (P - Y).T @ Z / n
    pen = W.copy()
    pen[:, -1] = 0.0
    loss += 0.5 * l2 * float(np.sum(pen * pen))
    grad += l2 * pen
    return loss, grad


def fit_softmax(
    train: LabeledDataset,
    l2: float = 1e-3,
    iters: int = 2000,
    step: float = 0.5,
    k_classes: int | None = None,
) -> SoftmaxModel:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized with the training mean and standard deviation
    before fitting; weights start at zero, so ``iters=0`` yields the uniform
    predictor.
    """
    if iters < 0 or int(iters) != iters:
        raise ValueError(f"iters must be a nonnegative integer, got {iters}")
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    if l2 < 0:
        raise ValueError("l2 must be nonnegative")
    K = int(k_classes or train.labels.max())
    K = max(K, 2)
    train.check_labels(K)
    X = train.features
    n, d = X.shape
    if n < K:
        warnings.warn(f"fitting {K} classes on only {n} rows", RuntimeWarning, stacklevel=2)
    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = _design(X, shift, scale)
    Y = np.zeros((n, K))
    Y[np.arange(n), train.labels - 1] = 1.0
    W = np.zeros((K, d + 1))
    for _ in range(int(iters)):
        _, g = softmax_loss_grad(W, Z, Y, l2)
        W -= step * g
    return SoftmaxModel(_frozen(W), _frozen(shift), _frozen(scale))


def model_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "oracle":
        return OraclePosterior(spec_from_dict(d["dist"]))
    if kind == "knn":
        return KnnModel(
            _frozen(np.array(d["features"], dtype=float)),
            _frozen(np.array(d["labels"], dtype=np.int64)),
            int(d["k_classes"]),
            int(d["k_neighbors"]),
        )
    if kind == "softmax":
        return SoftmaxModel(
            _frozen(np.array(d["weights"], dtype=float)),
            _frozen(np.array(d["shift"], dtype=float)),
            _frozen(np.array(d["scale"], dtype=float)),
        )
    raise ValueError(f"unknown model kind {kind!r}")
