"""Experiment orchestration: table reproduction, the top-beta inconsistency
experiment and sample-size sweeps.

Every random draw in a run is seeded by ``derive_int_seed(master_seed,
repetition, purpose)`` so repetitions never share a stream and a run is
reproducible from its config alone. Repetitions run on a thread pool; results
are collected in repetition order, so the thread count does not change the
output.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .distgen import MixtureSpec, PathologySpec, sample_mixture_spec
from .gfun import DEFAULT_MC_SIZE, DEFAULT_NOISE_STD, build_empirical_g, inverse_from_scores, mc_posterior_scores
from .metrics import EvalReport, aggregate, evaluate_masks, excess_risk, mean_abs_deviation_slope
from .probest import OraclePosterior
from .rules import THRESHOLD, ConfidenceRule, FitConfig, fit_model, fit_plugin, fit_top_beta, split_halves, top_beta_mask
from .seeding import derive_int_seed

PAPER43 = "paper43"
ANALYZED41 = "analyzed41"

CSV_COLUMNS = [
    "distribution", "rule", "beta", "n", "N", "M", "B",
    "error_mean", "error_std", "info_mean", "info_std",
    "hamming_mean", "hamming_std", "excess_mean", "excess_std",
    "discrepancy_mean", "discrepancy_std", "seed", "digest", "version",
]  # fmt: skip


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a benchmark run.

    ``distribution`` is ``"mixture"`` (``k_classes`` Gaussians in ``dim``
    dimensions, means uniform on ``[0, mean_range]^dim`` drawn with
    ``means_seed``) or ``"pathology"`` (the ball-and-annuli construction with
    ``pathology_beta``). ``n``, ``n_unlabeled`` and ``m`` are the labeled,
    unlabeled and test sizes; ``reps`` is the number of repetitions.
    """

    distribution: str = "mixture"
    k_classes: int = 10
    dim: int = 10
    means_seed: int = 0
    mean_range: float = 4.0
    pathology_beta: int = 2
    betas: tuple = (2, 5)
    n: int = 1000
    n_unlabeled: int = 10_000
    m: int = 1000
    reps: int = 20
    estimator: str = "softmax"
    knn_k: int | None = None
    l2: float = 1e-3
    iters: int = 2000
    step: float = 0.5
    protocol: str = PAPER43
    master_seed: int = 0
    noise_std: float = DEFAULT_NOISE_STD
    mc_oracle_size: int = DEFAULT_MC_SIZE
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(int(b) for b in self.betas))
        if self.distribution not in ("mixture", "pathology"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.k_classes < 2 or self.dim < 1:
            raise ValueError("need k_classes >= 2 and dim >= 1")
        if not self.betas or any(not 1 <= b <= self.k_classes - 1 for b in self.betas):
            raise ValueError(f"betas must lie in 1..{self.k_classes - 1}")
        if self.n < 1 or self.m < 1 or self.reps < 1 or self.n_unlabeled < 0:
            raise ValueError("sizes must be >= 1 (n_unlabeled >= 0)")
        if self.protocol not in (PAPER43, ANALYZED41):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.estimator not in ("softmax", "knn", "oracle"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.mean_range <= 0:
            raise ValueError("mean_range must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    def digest(self) -> str:
        # the thread count never changes results, so it is not part of the identity
        d = self.to_dict()
        d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def seed(self, rep: int, purpose: str) -> int:
        return derive_int_seed(self.master_seed, rep, purpose)


def make_distribution(cfg: ExperimentConfig):
    if cfg.distribution == "pathology":
        return PathologySpec(beta=cfg.pathology_beta, k_classes=cfg.k_classes, dim=cfg.dim)
    spec = sample_mixture_spec(cfg.k_classes, cfg.dim, cfg.means_seed)
    if cfg.mean_range != 4.0:
        spec = MixtureSpec(spec.means * (cfg.mean_range / 4.0), seed_of_means=cfg.means_seed)
    return spec


@dataclass(frozen=True)
class OracleReference:
    """High-precision oracle quantities for one distribution."""

    thresholds: dict
    errors: dict
    mc_size: int


def oracle_reference(dist, betas, mc_size: int, seed: int) -> OracleReference:
    """Monte-Carlo thresholds and oracle errors for each beta.

    The oracle error uses the exact posterior, ``1 - E[sum_{k in set} p_k]``,
    which has far less variance than counting label misses.
    """
    post = mc_posterior_scores(dist, mc_size, seed)
    thresholds, errors = {}, {}
    for b in betas:
        theta = inverse_from_scores(post, b)
        thresholds[b] = theta
        errors[b] = float(1.0 - np.where(post >= theta, post, 0.0).sum(axis=1).mean())
    return OracleReference(thresholds, errors, mc_size)


def _map_reps(cfg: ExperimentConfig, fn):
    if cfg.threads == 1:
        return [fn(r) for r in range(cfg.reps)]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(fn, range(cfg.reps)))


def _fit_config(cfg: ExperimentConfig, beta: int, dist) -> FitConfig:
    return FitConfig(
        beta=beta,
        k_classes=cfg.k_classes,
        estimator=cfg.estimator,
        knn_k=cfg.knn_k,
        l2=cfg.l2,
        iters=cfg.iters,
        step=cfg.step,
        noise_std=cfg.noise_std,
        dist=dist,
    )


def _rows(cfg, per_rep, ref, rules, started, n, N) -> list[dict]:
    digest = cfg.digest()
    duration = time.perf_counter() - started
    rows = []
    for b in cfg.betas:
        for name in rules:
            rep = aggregate([r[(b, name)] for r in per_rep], config_digest=digest)
            row = {
                "distribution": cfg.distribution,
                "rule": name,
                "beta": b,
                "n": n,
                "N": N,
                "M": cfg.m,
                "B": cfg.reps,
            }
            row.update({k: getattr(rep, k) for k in EvalReport.field_names() if k.endswith(("_mean", "_std"))})
            row.update(
                seed=cfg.master_seed,
                digest=digest,
                version=__version__,
                theta_star=ref.thresholds[b],
                oracle_error=ref.errors[b],
                duration_s=duration,
            )
            rows.append(row)
    return rows


def run_oracle_table(cfg: ExperimentConfig, ref: OracleReference | None = None) -> list[dict]:
    """Error and information of the empirical beta-oracle and the top-beta oracle.

    Each repetition draws a fresh unlabeled sample of size ``n_unlabeled`` and
    a test sample of size ``m``. The oracle threshold is the generalized
    inverse of the empirical G of exact-posterior scores over the unlabeled
    sample; the exact posterior is continuous, so no perturbation is applied.
    """
    if cfg.n_unlabeled < 1:
        raise ValueError("the oracle table needs n_unlabeled >= 1")
    started = time.perf_counter()
    dist = make_distribution(cfg)
    ref = ref or oracle_reference(dist, cfg.betas, cfg.mc_oracle_size, cfg.seed(0, "mc-oracle"))
    model = OraclePosterior(dist)

    def one(r):
        pool = dist.sample_unlabeled(cfg.n_unlabeled, cfg.seed(r, "unlabeled"))
        test = dist.sample_labeled(cfg.m, cfg.seed(r, "test"))
        post = dist.posterior(test.features)
        out = {}
        for b in cfg.betas:
            theta_star = ref.thresholds[b]
            oracle_mask = post >= theta_star
            rule = fit_plugin(model, pool.features, b, noise_std=0.0)
            for name, mask in (("oracle", post >= rule.threshold), ("top_beta_oracle", top_beta_mask(post, b))):
                out[(b, name)] = evaluate_masks(mask, test.labels, oracle_mask, post, theta_star, ref.errors[b], b)
        return out

    per_rep = _map_reps(cfg, one)
    return _rows(cfg, per_rep, ref, ("oracle", "top_beta_oracle"), started, 0, cfg.n_unlabeled)


def run_plugin_table(cfg: ExperimentConfig, ref: OracleReference | None = None) -> list[dict]:
    """Semi-supervised plug-in rule versus top-beta on the same fitted model.

    Under the ``paper43`` protocol the estimator is fit on all of ``D_n`` and
    the threshold pool is ``D_N``; under ``analyzed41`` the estimator is fit on
    the first half of ``D_n`` and the pool is the second half plus ``D_N``.
    """
    started = time.perf_counter()
    dist = make_distribution(cfg)
    ref = ref or oracle_reference(dist, cfg.betas, cfg.mc_oracle_size, cfg.seed(0, "mc-oracle"))
    if cfg.protocol == PAPER43 and cfg.n_unlabeled < 1:
        raise ValueError("the paper43 protocol thresholds on D_N alone; n_unlabeled must be >= 1")

    def one(r):
        train = dist.sample_labeled(cfg.n, cfg.seed(r, "train"))
        unl = dist.sample_unlabeled(cfg.n_unlabeled, cfg.seed(r, "unlabeled"))
        test = dist.sample_labeled(cfg.m, cfg.seed(r, "test"))
        post = dist.posterior(test.features)
        fcfg = _fit_config(cfg, cfg.betas[0], dist)
        if cfg.protocol == PAPER43:
            model = fit_model(train, fcfg)
            pool = unl.features
        else:
            fit_part, held = split_halves(train)
            model = fit_model(fit_part, fcfg)
            pool = np.vstack([held.features, unl.features])
        perturb_seed = cfg.seed(r, "perturb")
        out = {}
        for b in cfg.betas:
            theta_star = ref.thresholds[b]
            oracle_mask = post >= theta_star
            sse = fit_plugin(model, pool, b, cfg.noise_std, perturb_seed)
            top = fit_top_beta(model, b)
            for name, rule in (("sse", sse), ("top_beta", top)):
                mask = rule.predict_mask(test.features)
                out[(b, name)] = evaluate_masks(mask, test.labels, oracle_mask, post, theta_star, ref.errors[b], b)
        return out

    per_rep = _map_reps(cfg, one)
    return _rows(cfg, per_rep, ref, ("sse", "top_beta"), started, cfg.n, cfg.n_unlabeled)


def run_inconsistency_experiment(cfg: ExperimentConfig) -> dict:
    """Excess risk of the exact-posterior top-beta rule on the pathology.

    Any rule of fixed cardinality ``beta`` misses a class of the oracle set on
    the middle annulus, so its excess risk stays above
    ``beta / (8 (beta + 1)^2)`` no matter how much data is available. The
    oracle threshold used to score both rules comes from ``mc_oracle_size``
    posterior draws; the oracle rule itself is refit on an independent draw.
    """
    if cfg.distribution != "pathology":
        raise ValueError("the inconsistency experiment runs on the pathology distribution")
    beta = cfg.pathology_beta
    if beta < 2:
        raise ValueError("beta must be >= 2; the bound is vacuous otherwise")
    started = time.perf_counter()
    dist = make_distribution(cfg)
    model = OraclePosterior(dist)
    post_mc = mc_posterior_scores(dist, cfg.mc_oracle_size, cfg.seed(0, "mc-oracle"))
    theta_star = inverse_from_scores(post_mc, beta)
    theta_fit = inverse_from_scores(mc_posterior_scores(dist, cfg.mc_oracle_size, cfg.seed(0, "oracle-fit")), beta)
    oracle = ConfidenceRule(THRESHOLD, model, beta=beta, threshold=theta_fit)
    top = fit_top_beta(model, beta)
    test = dist.sample_unlabeled(cfg.m, cfg.seed(0, "test"))
    bound = beta / (8 * (beta + 1) ** 2)
    top_excess = excess_risk(top, dist, theta_star, test)
    oracle_excess = excess_risk(oracle, dist, theta_star, test)
    return {
        "beta": beta,
        "k_classes": cfg.k_classes,
        "M": cfg.m,
        "theta_star": theta_star,
        "theta_oracle_fit": theta_fit,
        "analytic_threshold": dist.analytic_threshold,
        "oracle_excess": oracle_excess,
        "best_topbeta_excess": top_excess,
        "bound": bound,
        "bound_half": 0.5 * bound,
        "fixed_cardinality_bound": (beta - 1) / (4 * cfg.k_classes),
        "topbeta_exceeds_half_bound": bool(top_excess >= 0.5 * bound),
        "oracle_below_noise": bool(oracle_excess <= 0.005),
        "digest": cfg.digest(),
        "version": __version__,
        "duration_s": time.perf_counter() - started,
    }


@dataclass(frozen=True)
class SweepResult:
    sweep: str
    grid: tuple
    sizes: tuple
    supervised_dev: tuple
    semi_dev: tuple
    supervised_slope: float
    supervised_slope_se: float
    semi_slope: float
    semi_slope_se: float
    config: dict = field(repr=False)

    def to_dict(self) -> dict:
        return asdict(self)


def run_rate_sweep(cfg: ExperimentConfig, grid, sweep: str = "N", beta: int | None = None) -> SweepResult:
    """Mean ``|beta - I(rule)|`` over repetitions along a grid of sample sizes.

    ``sweep="N"`` holds ``cfg.n`` fixed and varies the unlabeled size; the
    semi-supervised slope is taken against ``log(n + N)`` and the supervised
    one against ``log(N)``. ``sweep="n"`` sets ``N = 0`` and varies the labeled
    size; both slopes are taken against ``log(n)``.

    Information is measured on one reference sample of ``cfg.m`` points shared
    by every repetition, so the test-set noise does not floor the deviations.
    """
    grid = tuple(int(g) for g in grid)
    if len(grid) < 4 or min(grid) < 1 or math.log10(max(grid) / min(grid)) < 2 - 1e-9:
        raise ValueError("the grid needs >= 4 positive sizes spanning >= 2 decades")
    if len(set(grid)) != len(grid):
        raise ValueError("grid sizes must be distinct")
    if sweep not in ("N", "n"):
        raise ValueError("sweep must be 'N' or 'n'")
    beta = cfg.betas[0] if beta is None else beta
    dist = make_distribution(cfg)
    ref_x = dist.sample_unlabeled(cfg.m, cfg.seed(0, "reference")).features
    fast = cfg.estimator == "oracle" and cfg.noise_std == 0
    if fast:
        ref_g = build_empirical_g(dist.posterior(ref_x))

    def info_of(rule) -> float:
        if fast:
            return float(ref_g.count_at_least(rule.threshold))
        return float(rule.predict_mask(ref_x).sum(axis=1).mean())

    def one_rep(r):
        sup, semi = [], []
        fcfg = replace(_fit_config(cfg, beta, dist), seed=cfg.seed(r, "perturb"))
        for g in grid:
            n, N = (cfg.n, g) if sweep == "N" else (g, 0)
            # the labeled draw depends on n only, so supervised fits repeat across an N sweep
            train = dist.sample_labeled(n, cfg.seed(r, f"train-{n}"))
            unl = dist.sample_unlabeled(N, cfg.seed(r, f"unlabeled-{N}"))
            fit_part, held = split_halves(train)
            model = fit_model(fit_part, fcfg)
            rule_se = fit_plugin(model, held.features, beta, fcfg.noise_std, fcfg.seed)
            rule_sse = fit_plugin(model, np.vstack([held.features, unl.features]), beta, fcfg.noise_std, fcfg.seed)
            sup.append(abs(beta - info_of(rule_se)))
            semi.append(abs(beta - info_of(rule_sse)))
        return sup, semi

    per_rep = _map_reps(cfg, one_rep)
    sup_dev = np.mean([p[0] for p in per_rep], axis=0)
    semi_dev = np.mean([p[1] for p in per_rep], axis=0)
    if sweep == "N":
        sizes = tuple(cfg.n + g for g in grid)
        sup_x = grid
    else:
        sizes = grid
        sup_x = grid
    s_sup, se_sup = mean_abs_deviation_slope(sup_x, sup_dev)
    s_semi, se_semi = mean_abs_deviation_slope(sizes, semi_dev)
    return SweepResult(
        sweep=sweep,
        grid=grid,
        sizes=sizes,
        supervised_dev=tuple(float(v) for v in sup_dev),
        semi_dev=tuple(float(v) for v in semi_dev),
        supervised_slope=s_sup,
        supervised_slope_se=se_sup,
        semi_slope=s_semi,
        semi_slope_se=se_semi,
        config=cfg.to_dict(),
    )


# ---------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    """CSV text over :data:`CSV_COLUMNS`; wall-clock fields stay in the JSON mirror."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def rows_to_json(rows: list[dict], cfg: ExperimentConfig) -> str:
    return json.dumps({"config": cfg.to_dict(), "digest": cfg.digest(), "version": __version__, "rows": rows}, indent=2)
