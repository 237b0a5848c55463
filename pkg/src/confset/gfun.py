"""The expected-size function G, its empirical version and generalized inverse.

For a score matrix ``P`` with ``M`` rows and ``K`` columns the empirical
function is

    G_hat(t) = (1 / M) * #{(i, k) : P[i, k] > t},

a nonincreasing right-continuous step function with values in ``[0, K]``.
Its generalized inverse ``inf{t in [0, 1] : G_hat(t) <= beta}`` is always one
of the pooled score values (or 0), namely the ``(floor(beta * M) + 1)``-th
largest pooled value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .core import _frozen, as_score_matrix
from .seeding import derive_rng

DEFAULT_NOISE_STD = math.exp(-5.0)
DEFAULT_MC_SIZE = 1_000_000


@dataclass(frozen=True, eq=False)
class EmpiricalG:
    """Pooled scores sorted in descending order."""

    pooled_scores: np.ndarray
    m_points: int
    k_classes: int

    def __call__(self, t):
        return self.evaluate(t)

    def evaluate(self, t):
        """``(1/M) * #{values > t}``; vectorized over ``t``."""
        asc = self.pooled_scores[::-1]
        above = asc.size - np.searchsorted(asc, t, side="right")
        return above / self.m_points

    def count_at_least(self, t):
        """``(1/M) * #{values >= t}``, the left limit ``G_hat(t-)``."""
        asc = self.pooled_scores[::-1]
        return (asc.size - np.searchsorted(asc, t, side="left")) / self.m_points

    def inverse(self, beta: float) -> float:
        return generalized_inverse(self, beta)


def build_empirical_g(scores) -> EmpiricalG:
    p = as_score_matrix(scores, clip=False)
    if p.shape[0] < 1:
        raise ValueError("empty score matrix")
    pooled = np.sort(p, axis=None)[::-1]
    return EmpiricalG(_frozen(pooled), p.shape[0], p.shape[1])


def _check_beta(beta: float, k_classes: int) -> None:
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if beta > k_classes:
        raise ValueError(f"beta={beta} exceeds K={k_classes}")


def _rank(beta: float, m_points: int) -> int:
    """Largest ``j`` with ``j / M <= beta``, compared exactly as ``evaluate`` divides."""
    j = math.floor(beta * m_points)
    while (j + 1) / m_points <= beta:
        j += 1
    while j > 0 and j / m_points > beta:
        j -= 1
    return j


def generalized_inverse(g: EmpiricalG, beta: float) -> float:
    """``inf{t in [0, 1] : G_hat(t) <= beta}``.

    Examples
    --------
    >>> g = build_empirical_g([[0.9, 0.1], [0.6, 0.4]])
    >>> generalized_inverse(g, 1)
    0.4
    >>> generalized_inverse(g, 2)
    0.0
    """
    _check_beta(beta, g.k_classes)
    j = _rank(beta, g.m_points)
    if j >= g.pooled_scores.size:
        return 0.0
    return max(float(g.pooled_scores[j]), 0.0)


def inverse_from_scores(scores, beta: float) -> float:
    """Same value as ``generalized_inverse(build_empirical_g(scores), beta)``.

    Uses a partial sort, so it is the one to call on very large pools.
    """
    p = np.asarray(scores, dtype=float)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValueError("scores must be a non-empty M x K matrix")
    m, k = p.shape
    _check_beta(beta, k)
    j = _rank(beta, m)
    if j >= m * k:
        return 0.0
    flat = p.ravel()
    # (j+1)-th largest == element of ascending rank m*k - 1 - j
    pos = m * k - 1 - j
    return max(float(np.partition(flat, pos)[pos]), 0.0)


def perturb_scores(scores, noise_std: float = DEFAULT_NOISE_STD, seed: int = 0) -> np.ndarray:
    """Add independent half-normal noise ``|N(0, noise_std^2)|`` and clip to [0, 1]."""
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    p = as_score_matrix(scores)
    if noise_std == 0:
        return p.copy()
    rng = derive_rng(seed, "perturb")
    return np.clip(p + np.abs(rng.standard_normal(p.shape)) * noise_std, 0.0, 1.0)


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def keyed_half_normal(X, k_classes: int, seed: int) -> np.ndarray:
    """Standard half-normal draws that are a deterministic function of each row of ``X``.

    Row ``x`` and class ``k`` map to ``|Z|`` through a SplitMix64 hash of the
    bit pattern of ``x``, ``k`` and ``seed``; distinct points get (pseudo)
    independent draws, and the same point always gets the same draw.
    """
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)) + 0.0)
    bits = X.view(np.uint64)
    with np.errstate(over="ignore"):
        h = np.full(X.shape[0], np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        h = _splitmix64(h)
        for j in range(bits.shape[1]):
            h = _splitmix64(h ^ bits[:, j])
        ks = np.arange(1, k_classes + 1, dtype=np.uint64) * _GOLDEN
        u = _splitmix64(h[:, None] ^ ks[None, :])
    unif = (u >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return ndtri(0.5 + 0.5 * unif)


def perturb_keyed(X, scores, noise_std: float, seed: int) -> np.ndarray:
    """Clip ``scores + noise_std * keyed_half_normal(X)`` into [0, 1].

    This is the perturbation rules apply both when pooling scores for the
    threshold and when predicting, so it acts as part of the estimator.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    p = as_score_matrix(scores)
    if noise_std == 0:
        return p
    return np.clip(p + noise_std * keyed_half_normal(X, p.shape[1], seed), 0.0, 1.0)


def _mc_chunks(mc_size: int, chunk: int = 250_000):
    start = 0
    while start < mc_size:
        stop = min(mc_size, start + chunk)
        yield start // chunk, stop - start
        start = stop


def mc_posterior_scores(dist, mc_size: int, seed: int) -> np.ndarray:
    """Exact posterior scores of ``mc_size`` fresh draws from ``dist``'s marginal.

    Sampling is sharded into fixed-size chunks with seeds derived from
    ``(seed, chunk index)``.
    """
    if not hasattr(dist, "posterior"):
        raise TypeError(f"{type(dist).__name__} does not expose an exact posterior")
    out = np.empty((mc_size, dist.k_classes))
    row = 0
    for idx, size in _mc_chunks(mc_size):
        x = dist.sample_unlabeled(size, derive_rng(seed, "mc-threshold", idx).integers(2**63))
        out[row:row + size] = dist.posterior(x.features)
        row += size
    return out


def mc_true_threshold(dist, beta: float, mc_size: int = DEFAULT_MC_SIZE, seed: int = 0) -> float:
    """Monte-Carlo stand-in for the population threshold ``G^{-1}(beta)``."""
    if mc_size < 1000:
        raise ValueError("mc_size must be >= 1000")
    if not hasattr(dist, "posterior"):
        raise TypeError(f"{type(dist).__name__} does not expose an exact posterior")
    _check_beta(beta, dist.k_classes)
    return inverse_from_scores(mc_posterior_scores(dist, mc_size, seed), beta)
