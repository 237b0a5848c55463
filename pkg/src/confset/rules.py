"""Confidence-set rules: top-beta, supervised and semi-supervised plug-in, oracle.

A rule is either fixed-cardinality (``mode="top_beta"``: the ``beta`` highest
scores) or threshold based (``mode="threshold"``: every class whose score is
at least the threshold). Threshold rules built from data pick the threshold as
the generalized inverse of an empirical G computed on a pool of feature
vectors. Scores of fitted plug-in rules carry a tiny half-normal perturbation
keyed on the feature vector, which breaks ties without making prediction
random.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .core import ConfidenceSet, LabeledDataset, UnlabeledDataset
from .gfun import (
    DEFAULT_MC_SIZE,
    DEFAULT_NOISE_STD,
    build_empirical_g,
    generalized_inverse,
    mc_true_threshold,
    perturb_keyed,
)
from .probest import OraclePosterior, fit_knn, fit_softmax, model_from_dict

TOP_BETA = "top_beta"
THRESHOLD = "threshold"


@dataclass(frozen=True)
class FitConfig:
    """How to fit a plug-in rule.

    ``estimator`` is one of ``"softmax"``, ``"knn"`` or ``"oracle"``; the
    oracle estimator needs ``dist``. ``knn_k=None`` means ``ceil(sqrt(n))``.
    """

    beta: int
    k_classes: int
    estimator: str = "softmax"
    knn_k: int | None = None
    l2: float = 1e-3
    iters: int = 2000
    step: float = 0.5
    noise_std: float = DEFAULT_NOISE_STD
    seed: int = 0
    dist: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.k_classes < 2:
            raise ValueError("k_classes must be >= 2")
        if not 1 <= self.beta <= self.k_classes:
            raise ValueError(f"beta must lie in 1..{self.k_classes}")
        if self.estimator not in ("softmax", "knn", "oracle"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.estimator == "oracle" and self.dist is None:
            raise ValueError("the oracle estimator needs a distribution with an exact posterior")


def fit_model(train: LabeledDataset, cfg: FitConfig):
    if cfg.estimator == "softmax":
        return fit_softmax(train, l2=cfg.l2, iters=cfg.iters, step=cfg.step, k_classes=cfg.k_classes)
    if cfg.estimator == "knn":
        return fit_knn(train, cfg.knn_k, k_classes=cfg.k_classes)
    return OraclePosterior(cfg.dist)


@dataclass(frozen=True)
class ConfidenceRule:
    mode: str
    model: object = field(repr=False)
    beta: int | None = None
    threshold: float | None = None
    perturb_seed: int | None = None
    noise_std: float = 0.0

    def __post_init__(self):
        K = self.model.k_classes
        if self.mode == TOP_BETA:
            if self.beta is None or not 1 <= self.beta <= K:
                raise ValueError(f"top-beta rules need beta in 1..{K}")
            if self.threshold is not None:
                raise ValueError("top-beta rules carry no threshold")
        elif self.mode == THRESHOLD:
            if self.threshold is None or not 0.0 <= self.threshold <= 1.0:
                raise ValueError("threshold rules need a threshold in [0, 1]")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @property
    def k_classes(self) -> int:
        return self.model.k_classes

    @property
    def dim(self) -> int:
        return self.model.dim

    def scores(self, X) -> np.ndarray:
        """Clipped model scores, plus the keyed perturbation for fitted plug-in rules."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = np.clip(np.atleast_2d(self.model.predict(X)), 0.0, 1.0)
        if self.perturb_seed is not None and self.noise_std > 0:
            p = perturb_keyed(X, p, self.noise_std, self.perturb_seed)
        return p

    def predict_mask(self, X) -> np.ndarray:
        """Boolean ``M x K`` membership matrix for a batch of points."""
        return mask_from_scores(self.scores(X), self)

    def predict_set(self, x) -> ConfidenceSet:
        return predict_set(self, x)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "beta": self.beta,
            "threshold": self.threshold,
            "perturb_seed": self.perturb_seed,
            "noise_std": self.noise_std,
            "model": self.model.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ConfidenceRule":
        return cls(
            mode=d["mode"],
            model=model_from_dict(d["model"]),
            beta=d.get("beta"),
            threshold=d.get("threshold"),
            perturb_seed=d.get("perturb_seed"),
            noise_std=float(d.get("noise_std", 0.0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "ConfidenceRule":
        return cls.from_dict(json.loads(text))


def top_beta_mask(scores: np.ndarray, beta: int) -> np.ndarray:
    """The ``beta`` largest entries per row; ties go to the smaller class index."""
    # stable sort on -scores keeps lower indices first among equal values
    order = np.argsort(-scores, axis=1, kind="stable")[:, :beta]
    mask = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def mask_from_scores(scores: np.ndarray, rule: ConfidenceRule) -> np.ndarray:
    if rule.mode == TOP_BETA:
        return top_beta_mask(scores, rule.beta)
    return scores >= rule.threshold


def predict_set(rule: ConfidenceRule, x) -> ConfidenceSet:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("predict_set takes a single feature vector; use predict_mask for batches")
    if x.shape[0] != rule.dim:
        raise ValueError(f"expected dimension {rule.dim}, got {x.shape[0]}")
    return ConfidenceSet.from_mask(rule.predict_mask(x[None, :])[0])


# ---------------------------------------------------------------- fitting


def fit_top_beta(model, beta: int) -> ConfidenceRule:
    return ConfidenceRule(TOP_BETA, model, beta=int(beta))


def _check_threshold_beta(beta, k_classes: int) -> None:
    if not 1 <= beta <= k_classes - 1:
        raise ValueError(f"threshold rules need beta in 1..{k_classes - 1}, got {beta}")


def fit_plugin(model, pool, beta: float, noise_std: float = DEFAULT_NOISE_STD, seed: int = 0) -> ConfidenceRule:
    """Threshold rule at the generalized inverse of G_hat over ``pool``.

    ``pool`` is an ``M x d`` feature matrix (or dataset). Scores are perturbed
    by ``noise_std`` times a half-normal draw keyed on each point and on
    ``seed``; the returned rule applies the same perturbation when predicting,
    so pooled and predicted scores come from one estimator.
    """
    X = getattr(pool, "features", pool)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("the threshold pool is empty")
    if X.shape[1] != model.dim:
        raise ValueError(f"pool has dimension {X.shape[1]}, model expects {model.dim}")
    if not 0 < beta < model.k_classes:
        raise ValueError(f"beta must lie in (0, {model.k_classes})")
    scores = perturb_keyed(X, np.atleast_2d(model.predict(X)), noise_std, seed)
    theta = generalized_inverse(build_empirical_g(scores), beta)
    return ConfidenceRule(THRESHOLD, model, beta=beta, threshold=theta, perturb_seed=seed, noise_std=float(noise_std))


def split_halves(train: LabeledDataset) -> tuple[LabeledDataset, LabeledDataset]:
    """First ``floor(n/2)`` rows for fitting, last ``ceil(n/2)`` for the threshold."""
    if train.n < 2:
        raise ValueError("need at least two labeled rows to split")
    first = train.n // 2
    return train.head(first), train.tail(train.n - first)


def fit_supervised(train: LabeledDataset, cfg: FitConfig) -> ConfidenceRule:
    _check_threshold_beta(cfg.beta, cfg.k_classes)
    fit_part, held_out = split_halves(train)
    model = fit_model(fit_part, cfg)
    return fit_plugin(model, held_out.features, cfg.beta, cfg.noise_std, cfg.seed)


def fit_semi_supervised(train: LabeledDataset, unlabeled: UnlabeledDataset, cfg: FitConfig) -> ConfidenceRule:
    _check_threshold_beta(cfg.beta, cfg.k_classes)
    if unlabeled.dim != train.dim:
        raise ValueError(f"unlabeled dim {unlabeled.dim} != labeled dim {train.dim}")
    fit_part, held_out = split_halves(train)
    model = fit_model(fit_part, cfg)
    pool = np.vstack([held_out.features, unlabeled.features])
    return fit_plugin(model, pool, cfg.beta, cfg.noise_std, cfg.seed)


def fit_oracle(dist, beta: int, mc_size: int = DEFAULT_MC_SIZE, seed: int = 0) -> ConfidenceRule:
    """Threshold the exact posterior at the Monte-Carlo population threshold."""
    theta = mc_true_threshold(dist, beta, mc_size, seed)
    return ConfidenceRule(THRESHOLD, OraclePosterior(dist), beta=beta, threshold=theta, perturb_seed=None)
