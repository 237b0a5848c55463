"""Data-generating processes with exact class posteriors.

Two families are provided:

* :class:`MixtureSpec` -- K Gaussian components with identity covariance and a
  uniform label prior; means drawn uniformly on ``[0, 4]^d``.
* :class:`PathologySpec` -- a radially symmetric distribution on a ball plus two
  annuli whose posterior makes every fixed-cardinality rule inconsistent.

Both expose ``posterior(X)``, ``sample_labeled`` and ``sample_unlabeled`` so
that they can be used interchangeably as a "distribution handle".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import LabeledDataset, UnlabeledDataset, _frozen
from .seeding import derive_rng


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def _draw_labels_from_posterior(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # inverse-CDF draw, one uniform per row
    cdf = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0]) * cdf[:, -1]
    y = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(y, p.shape[1] - 1) + 1


# ---------------------------------------------------------------- mixture


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Gaussian mixture, identity covariance, uniform prior over K classes."""

    means: np.ndarray
    seed_of_means: int | None = None

    def __post_init__(self):
        mu = np.asarray(self.means, dtype=float)
        if mu.ndim != 2 or mu.shape[0] < 2 or mu.shape[1] < 1:
            raise ValueError(f"means must be K x d with K >= 2, got shape {mu.shape}")
        if not np.all(np.isfinite(mu)):
            raise ValueError("means must be finite")
        object.__setattr__(self, "means", _frozen(mu))

    @property
    def k_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def posterior(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("x must be finite")
        # -||x - mu||^2 / 2 up to a per-row constant
        logits = X @ self.means.T - 0.5 * np.einsum("kj,kj->k", self.means, self.means)
        p = _softmax_rows(logits)
        return p[0] if single else p

    def sample_labeled(self, n: int, seed: int) -> LabeledDataset:
        return sample_labeled(self, n, seed)

    def sample_unlabeled(self, n: int, seed: int) -> UnlabeledDataset:
        return sample_unlabeled(self, n, seed)

    def to_dict(self) -> dict:
        return {
            "kind": "mixture",
            "means": self.means.tolist(),
            "seed_of_means": self.seed_of_means,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        if d.get("kind", "mixture") != "mixture":
            raise ValueError(f"not a mixture spec: kind={d.get('kind')}")
        return cls(np.array(d["means"], dtype=float), d.get("seed_of_means"))


def sample_mixture_spec(K: int, d: int, seed: int) -> MixtureSpec:
    """Draw K means i.i.d. uniform on ``[0, 4]^d``."""
    if K < 2 or d < 1:
        raise ValueError(f"need K >= 2 and d >= 1, got K={K}, d={d}")
    rng = derive_rng(seed, "mixture-means")
    return MixtureSpec(rng.uniform(0.0, 4.0, size=(K, d)), seed_of_means=seed)


def mixture_posterior(x, spec: MixtureSpec) -> np.ndarray:
    """Exact posterior ``p_k(x)``: softmax of ``-||x - mu_k||^2 / 2`` over k."""
    return spec.posterior(x)


def _mixture_features(spec: MixtureSpec, labels0: np.ndarray, rng) -> np.ndarray:
    noise = rng.standard_normal((labels0.shape[0], spec.dim))
    return spec.means[labels0] + noise


def sample_labeled(spec: MixtureSpec, n: int, seed: int) -> LabeledDataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = derive_rng(seed, "mixture-sample")
    y0 = rng.integers(0, spec.k_classes, size=n)
    return LabeledDataset(_mixture_features(spec, y0, rng), y0 + 1)


def sample_unlabeled(spec: MixtureSpec, N: int, seed: int) -> UnlabeledDataset:
    if N < 0:
        raise ValueError("N must be >= 0")
    if N == 0:
        return UnlabeledDataset.empty(spec.dim)
    rng = derive_rng(seed, "mixture-sample")
    y0 = rng.integers(0, spec.k_classes, size=N)
    return UnlabeledDataset(_mixture_features(spec, y0, rng))


# ---------------------------------------------------------------- pathology


def ball_volume(r: float, d: int) -> float:
    return math.exp(0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1)) * r**d


@dataclass(frozen=True)
class PathologySpec:
    """Ball ``B(0, r1)`` plus annuli ``D(r2, 2 r2)`` and ``D(r3, 2 r3)``.

    The first ``beta + 1`` classes share one posterior value and the remaining
    ``K - beta - 1`` classes share another. Compensation terms for the trailing
    classes are divided by ``K - beta - 1`` so each posterior row sums to one.
    """

    beta: int = 2
    k_classes: int = 10
    dim: int = 2
    r1: float = 0.1
    r2: float = 1.0
    r3: float = 3.0
    c_l: float = 1.0 / 16

    def __post_init__(self):
        b, K = self.beta, self.k_classes
        if b < 2:
            raise ValueError("beta must be >= 2")
        if K < 2 * b:
            raise ValueError(f"need K >= 2*beta, got K={K}, beta={b}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not 0 < self.r1 < self.r2 < 2 * self.r2 < self.r3:
            raise ValueError("radii must satisfy 0 < r1 < r2 < 2*r2 < r3")
        if not 0 <= self.c_l <= 1 / 8:
            raise ValueError("c_l must lie in [0, 1/8]")
        if self.inner_mass > b / (2 * (b + 1)):
            raise ValueError(
                f"ball mass {self.inner_mass:.4g} exceeds beta/(2(beta+1)) = {b / (2 * (b + 1)):.4g}"
            )

    @property
    def inner_mass(self) -> float:
        return ball_volume(self.r1, self.dim)

    @property
    def region_masses(self) -> tuple[float, float, float]:
        w1 = self.inner_mass
        return w1, self.beta / (self.beta + 1) - w1, 1 / (self.beta + 1)

    @property
    def analytic_threshold(self) -> float:
        return 1 / (2 * (self.beta + 1))

    def region(self, x) -> np.ndarray:
        """0 for the ball, 1 for the middle annulus, 2 for the outer one.

        Raises on points outside the support.
        """
        X = np.atleast_2d(np.asarray(x, dtype=float))
        rho = np.linalg.norm(X, axis=1)
        # tolerance absorbs rounding of points sampled on the boundary radii
        tol = 1e-12 * max(1.0, self.r3)
        reg = np.full(rho.shape, -1)
        reg[rho <= self.r1 + tol] = 0
        reg[(rho >= self.r2 - tol) & (rho <= 2 * self.r2 + tol)] = 1
        reg[(rho >= self.r3 - tol) & (rho <= 2 * self.r3 + tol)] = 2
        if np.any(reg < 0):
            bad = rho[reg < 0][0]
            raise ValueError(f"point with norm {bad:.6g} lies outside the support")
        return reg

    def posterior(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("x must be finite")
        reg = self.region(X)
        rho = np.linalg.norm(X, axis=1)
        b, K, c = self.beta, self.k_classes, self.c_l
        lead_n, rest_n = b + 1, K - b - 1
        radius = np.array([self.r1, self.r2, self.r3])[reg]
        bump = c * (1 - np.cos(2 * np.pi * rho / radius))
        lead = np.select(
            [reg == 0, reg == 1],
            [1 / (2 * lead_n) + bump / lead_n, 1 / lead_n - bump / lead_n],
            1 / (4 * lead_n) - bump / lead_n,
        )
        rest = np.select(
            [reg == 0, reg == 1],
            [1 / (2 * rest_n) - bump / rest_n, bump / rest_n],
            3 / (4 * rest_n) + bump / rest_n,
        )
        p = np.empty((X.shape[0], K))
        p[:, :lead_n] = lead[:, None]
        p[:, lead_n:] = rest[:, None]
        return p[0] if single else p

    def _sample_features(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d = self.dim
        reg = rng.choice(3, size=n, p=np.array(self.region_masses))
        direction = rng.standard_normal((n, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        u = rng.random(n)
        # inverse transform for a radial density proportional to rho^(d-1)
        lo = np.array([0.0, self.r2, self.r3])[reg]
        hi = np.array([self.r1, 2 * self.r2, 2 * self.r3])[reg]
        rho = (lo**d + u * (hi**d - lo**d)) ** (1 / d)
        return direction * rho[:, None]

    def sample_labeled(self, n: int, seed: int) -> LabeledDataset:
        return sample_pathology(self, n, seed)

    def sample_unlabeled(self, n: int, seed: int) -> UnlabeledDataset:
        if n < 0:
            raise ValueError("N must be >= 0")
        if n == 0:
            return UnlabeledDataset.empty(self.dim)
        return UnlabeledDataset(self._sample_features(n, derive_rng(seed, "pathology-sample")))

    def to_dict(self) -> dict:
        return {
            "kind": "pathology",
            "beta": self.beta,
            "k_classes": self.k_classes,
            "dim": self.dim,
            "r1": self.r1,
            "r2": self.r2,
            "r3": self.r3,
            "c_l": self.c_l,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PathologySpec":
        d = dict(d)
        if d.pop("kind", "pathology") != "pathology":
            raise ValueError("not a pathology spec")
        return cls(**d)


def pathology_posterior(x, spec: PathologySpec) -> np.ndarray:
    return spec.posterior(x)


def sample_pathology(spec: PathologySpec, n: int, seed: int) -> LabeledDataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = derive_rng(seed, "pathology-sample")
    X = spec._sample_features(n, rng)
    y = _draw_labels_from_posterior(spec.posterior(X), rng)
    return LabeledDataset(X, y)


def spec_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "mixture":
        return MixtureSpec.from_dict(d)
    if kind == "pathology":
        return PathologySpec.from_dict(d)
    raise ValueError(f"unknown distribution kind {kind!r}")
