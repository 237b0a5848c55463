"""Monte-Carlo estimators of error, information and the three risk measures.

Every estimator averages over the rows of one test sample. Within a
repetition all metrics should be computed on the same rows; the excess-risk
identity below is exact only on a common empirical measure.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from .core import LabeledDataset


def _features(test) -> np.ndarray:
    X = getattr(test, "features", test)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("empty test set")
    return X


def _labels(test: LabeledDataset) -> np.ndarray:
    if not isinstance(test, LabeledDataset):
        raise TypeError("a labeled test set is required")
    if test.n < 1:
        raise ValueError("empty test set")
    return test.labels


def error_from_mask(mask: np.ndarray, labels: np.ndarray) -> float:
    covered = mask[np.arange(mask.shape[0]), labels - 1]
    return float(1.0 - covered.mean())


def error_rate(rule, test: LabeledDataset) -> float:
    """Fraction of test rows whose label falls outside the predicted set."""
    y = _labels(test)
    return error_from_mask(rule.predict_mask(test.features), y)


def information(rule, test) -> float:
    """Average size of the predicted set over the test rows."""
    return float(rule.predict_mask(_features(test)).sum(axis=1).mean())


def hamming(rule_a, rule_b, test) -> float:
    """Average ``|A(x) △ B(x)|`` over the test rows."""
    if rule_a.k_classes != rule_b.k_classes:
        raise ValueError(f"label spaces differ: K={rule_a.k_classes} vs K={rule_b.k_classes}")
    X = _features(test)
    return float((rule_a.predict_mask(X) ^ rule_b.predict_mask(X)).sum(axis=1).mean())


def risk_beta(rule, test: LabeledDataset, theta: float) -> float:
    """``error + theta * information`` over the same test rows."""
    theta = float(theta)
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    y = _labels(test)
    mask = rule.predict_mask(test.features)
    return error_from_mask(mask, y) + theta * float(mask.sum(axis=1).mean())


def _posterior(dist, X) -> np.ndarray:
    if not hasattr(dist, "posterior"):
        raise TypeError(f"{type(dist).__name__} does not expose an exact posterior")
    return np.atleast_2d(dist.posterior(X))


def excess_from_masks(mask: np.ndarray, oracle_mask: np.ndarray, post: np.ndarray, theta_star: float) -> float:
    weight = np.abs(post - theta_star)
    return float((weight * (mask ^ oracle_mask)).sum(axis=1).mean())


def excess_risk(rule, dist, theta_star: float, test) -> float:
    """Weighted symmetric difference to the oracle set.

    Averages ``sum_k |p_k(x) - theta_star| * 1{k in rule(x) △ oracle(x)}``
    where the oracle set thresholds the exact posterior at ``theta_star``.
    """
    X = _features(test)
    post = _posterior(dist, X)
    return excess_from_masks(rule.predict_mask(X), post >= theta_star, post, float(theta_star))


def posterior_error(rule, dist, test) -> float:
    """Error computed from the exact posterior: mean of ``1 - sum_{k in set} p_k``."""
    X = _features(test)
    post = _posterior(dist, X)
    return float(1.0 - (post * rule.predict_mask(X)).sum(axis=1).mean())


def discrepancy(rule, oracle_error: float, beta: float, test: LabeledDataset) -> float:
    """``|error - oracle_error| + |beta - information|``."""
    if not 0.0 <= oracle_error <= 1.0:
        raise ValueError("oracle_error must lie in [0, 1]")
    y = _labels(test)
    mask = rule.predict_mask(test.features)
    return abs(error_from_mask(mask, y) - oracle_error) + abs(beta - float(mask.sum(axis=1).mean()))


# ---------------------------------------------------------------- aggregation

_METRICS = ("error", "info", "hamming", "excess", "discrepancy")


@dataclass(frozen=True)
class RiskSample:
    error: float
    info: float
    hamming: float
    excess: float
    discrepancy: float
    test_size: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EvalReport:
    error_mean: float
    error_std: float
    info_mean: float
    info_std: float
    hamming_mean: float
    hamming_std: float
    excess_mean: float
    excess_std: float
    discrepancy_mean: float
    discrepancy_std: float
    repetitions: int
    config_digest: str = ""
    single_repetition: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def evaluate_masks(
    mask: np.ndarray,
    labels: np.ndarray,
    oracle_mask: np.ndarray,
    post: np.ndarray,
    theta_star: float,
    oracle_error: float,
    beta: float,
) -> RiskSample:
    """All five metrics from precomputed membership masks on shared test rows."""
    err = error_from_mask(mask, labels)
    info = float(mask.sum(axis=1).mean())
    return RiskSample(
        error=err,
        info=info,
        hamming=float((mask ^ oracle_mask).sum(axis=1).mean()),
        excess=excess_from_masks(mask, oracle_mask, post, theta_star),
        discrepancy=abs(err - oracle_error) + abs(beta - info),
        test_size=int(mask.shape[0]),
    )


def aggregate(samples, config_digest: str = "") -> EvalReport:
    """Mean and (B-1)-denominator standard deviation of each metric."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to aggregate")
    B = len(samples)
    out = {}
    for name in _METRICS:
        v = np.array([getattr(s, name) for s in samples], dtype=float)
        out[f"{name}_mean"] = float(v.mean())
        out[f"{name}_std"] = float(v.std(ddof=1)) if B > 1 else 0.0
    if B == 1:
        warnings.warn("a single repetition: standard deviations are reported as 0", RuntimeWarning, stacklevel=2)
    return EvalReport(**out, repetitions=B, config_digest=config_digest, single_repetition=B == 1)


def mean_abs_deviation_slope(sizes, deviations) -> tuple[float, float]:
    """Least-squares slope of ``log(deviation)`` on ``log(size)`` and its standard error."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(deviations, dtype=float))
    if x.size < 3:
        raise ValueError("need at least three grid points for a slope and its error")
    xc = x - x.mean()
    slope = float((xc * (y - y.mean())).sum() / (xc * xc).sum())
    resid = y - y.mean() - slope * xc
    se = math.sqrt(float((resid**2).sum()) / (x.size - 2) / float((xc * xc).sum()))
    return slope, se
