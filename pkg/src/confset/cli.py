"""``confset`` command-line frontend.

Every subcommand accepts ``--config FILE``: a flat JSON object whose keys are
flag names (``"n-unlabeled"`` or ``"n_unlabeled"``). Inline flags override the
file, and the effective configuration is echoed into every JSON output.
Progress goes to standard error; data goes to files or standard output.

Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .bench import (
    ExperimentConfig,
    rows_to_csv,
    rows_to_json,
    run_inconsistency_experiment,
    run_oracle_table,
    run_plugin_table,
    run_rate_sweep,
)
from .core import LabeledDataset, UnlabeledDataset, dataset_to_csv, read_dataset_csv
from .distgen import MixtureSpec, PathologySpec, sample_mixture_spec, spec_from_dict
from .gfun import DEFAULT_MC_SIZE, DEFAULT_NOISE_STD, mc_true_threshold
from .metrics import discrepancy, error_rate, excess_risk, hamming, information
from .rules import ConfidenceRule, FitConfig, fit_oracle, fit_semi_supervised, fit_supervised, fit_top_beta, fit_model

log = logging.getLogger("confset")

class UsageError(Exception):
    pass

def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc

# every subcommand: {dest: (flags, kwargs, default)}
_COMMON = {
    "config": (("--config",), dict(help="JSON file with flag values (flat keys)"), None),
    "seed": (("--seed",), dict(type=int, help="master seed (fallback: $CONFSET_SEED, then 0)"), None),
    "verbose": (("-v", "--verbose"), dict(action="count", help="more progress output on stderr"), 0),
}

_MIXTURE = {
    "k": (("--k",), dict(type=int, help="number of classes K"), 10),
    "d": (("--d",), dict(type=int, help="feature dimension d"), 10),
    "means_seed": (("--means-seed",), dict(type=int, help="seed of the mixture means"), 0),
    "mean_range": (("--mean-range",), dict(type=float, help="means are uniform on [0, R]^d"), 4.0),
}

_ESTIMATOR = {
    "estimator": (("--estimator",), dict(choices=["oracle", "knn", "softmax"], help="class-probability estimator"), "softmax"),
    "knn_k": (("--knn-k",), dict(type=int, help="neighbors for knn (default ceil(sqrt(n)))"), None),
    "l2": (("--l2",), dict(type=float, help="softmax L2 penalty"), 1e-3),
    "iters": (("--iters",), dict(type=int, help="softmax gradient steps"), 2000),
    "step": (("--step",), dict(type=float, help="softmax step size"), 0.5),
    "noise_std": (("--noise-std",), dict(type=float, help="std of the tie-breaking half-normal perturbation"), DEFAULT_NOISE_STD),
}

_BENCH = {
    "betas": (("--betas",), dict(type=_int_list, help="comma-separated beta values"), [2, 5]),
    "n": (("--n",), dict(type=int, help="labeled sample size"), 1000),
    "n_unlabeled": (("--n-unlabeled",), dict(type=int, help="unlabeled sample size N"), 10_000),
    "m": (("--m",), dict(type=int, help="test sample size M"), 1000),
    "reps": (("--reps",), dict(type=int, help="repetitions B"), 20),
    "protocol": (("--protocol",), dict(choices=["paper43", "analyzed41"], help="fitting protocol"), "paper43"),
    "mc_size": (("--mc-size",), dict(type=int, help="Monte-Carlo size of the oracle reference"), DEFAULT_MC_SIZE),
    "threads": (("--threads",), dict(type=int, help="worker threads"), 1),
    "out": (("--out", "-o"), dict(help="output directory (default: CSV to stdout)"), None),
    "full": (("--full",), dict(action="store_true", help="also run the K=100 settings"), False),
}

SUBCOMMANDS = {
    "gen": {
        **_MIXTURE,
        "dist": (("--dist",), dict(choices=["mixture", "pathology"], help="distribution"), "mixture"),
        "n": (("--n",), dict(type=int, help="number of rows"), 1000),
        "beta": (("--beta",), dict(type=int, help="pathology beta"), 2),
        "unlabeled": (("--unlabeled",), dict(action="store_true", help="omit the y column"), False),
        "spec_out": (("--spec-out",), dict(help="also write the distribution spec as JSON"), None),
        "out": (("-o", "--out"), dict(help="output CSV (default stdout)"), None),
    },
    "fit": {
        **_MIXTURE,
        **_ESTIMATOR,
        "rule": (("--rule",), dict(choices=["sse", "se", "top", "oracle"], help="rule family"), "sse"),
        "beta": (("--beta",), dict(type=int, help="target information beta"), 2),
        "train": (("--train",), dict(help="labeled CSV"), None),
        "unlabeled": (("--unlabeled",), dict(help="unlabeled CSV (sse only)"), None),
        "spec": (("--spec",), dict(help="distribution JSON (oracle estimator / oracle rule)"), None),
        "mc_size": (("--mc-size",), dict(type=int, help="Monte-Carlo size for the oracle rule"), DEFAULT_MC_SIZE),
        "out": (("-o", "--out"), dict(help="output rule JSON (default stdout)"), None),
    },
    "eval": {
        "rule": (("--rule",), dict(help="rule JSON"), None),
        "test": (("--test",), dict(help="labeled test CSV"), None),
        "spec": (("--spec",), dict(help="distribution JSON; adds oracle-relative risks"), None),
        "mc_size": (("--mc-size",), dict(type=int, help="Monte-Carlo size of the oracle threshold"), DEFAULT_MC_SIZE),
        "out": (("-o", "--out"), dict(help="output JSON (default stdout)"), None),
    },
    "bench-oracle": {**_MIXTURE, **_BENCH},
    "bench-plugin": {**_MIXTURE, **_ESTIMATOR, **_BENCH},
    "pathology": {
        "beta": (("--beta",), dict(type=int, help="pathology beta (>= 2)"), 2),
        "k": (("--k",), dict(type=int, help="number of classes K"), 10),
        "d": (("--d",), dict(type=int, help="feature dimension"), 2),
        "m": (("--m",), dict(type=int, help="test sample size"), 100_000),
        "mc_size": (("--mc-size",), dict(type=int, help="Monte-Carlo size of the threshold"), DEFAULT_MC_SIZE),
        "out": (("-o", "--out"), dict(help="output JSON (default stdout)"), None),
    },
    "ratesweep": {
        **_MIXTURE,
        **_ESTIMATOR,
        "sweep": (("--sweep",), dict(choices=["N", "n"], help="vary the unlabeled (N) or labeled (n) size"), "N"),
        "grid": (("--grid",), dict(type=_int_list, help="comma-separated sizes"), [100, 1000, 10_000, 100_000]),
        "n": (("--n",), dict(type=int, help="labeled size held fixed in an N sweep"), 1000),
        "beta": (("--beta",), dict(type=int, help="target information"), 2),
        "reps": (("--reps",), dict(type=int, help="repetitions"), 40),
        "m": (("--m",), dict(type=int, help="reference sample size for the information"), 2_000_000),
        "threads": (("--threads",), dict(type=int, help="worker threads"), 1),
        "out": (("-o", "--out"), dict(help="output JSON (default stdout)"), None),
    },
}

_HELP = {
    "gen": "sample a dataset to CSV",
    "fit": "fit a confidence-set rule to JSON",
    "eval": "evaluate a rule on a labeled CSV",
    "bench-oracle": "beta-oracle vs top-beta oracle table",
    "bench-plugin": "semi-supervised plug-in vs top-beta table",
    "pathology": "top-beta inconsistency experiment",
    "ratesweep": "information deviation vs sample size",
}

# rate sweeps default to exact posterior scores without perturbation
_SUB_DEFAULTS = {"ratesweep": {"estimator": "oracle", "noise_std": 0.0}}

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confset", description="Set-valued classification with controlled expected size.")
    parser.add_argument("--version", action="version", version=f"confset {__version__}")
    subs = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, opts in SUBCOMMANDS.items():
        sp = subs.add_parser(name, help=_HELP[name], description=_HELP[name])
        for dest, (flags, kwargs, _) in {**_COMMON, **opts}.items():
            sp.add_argument(*flags, dest=dest, default=argparse.SUPPRESS, **kwargs)
    return parser

def effective_config(command: str, ns: argparse.Namespace) -> dict:
    opts = {**_COMMON, **SUBCOMMANDS[command]}
    cfg = {dest: default for dest, (_, _, default) in opts.items()}
    cfg.update(_SUB_DEFAULTS.get(command, {}))
    given = {k: v for k, v in vars(ns).items() if k != "command"}
    path = given.get("config")
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        for key, value in raw.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in opts or dest == "config":
                raise UsageError(f"unknown config key {key!r} for {command}")
            if dest in ("betas", "grid") and isinstance(value, str):
                value = _int_list(value)
            cfg[dest] = value
    cfg.update(given)
    if cfg.get("seed") is None:
        env = os.environ.get("CONFSET_SEED")
        try:
            cfg["seed"] = int(env) if env is not None else 0
        except ValueError as exc:
            raise UsageError(f"CONFSET_SEED must be an integer, got {env!r}") from exc
    cfg.pop("config", None)
    return cfg

# ---------------------------------------------------------------- helpers

def _emit(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).write_text(text if text.endswith("\n") else text + "\n")

def _mixture(cfg) -> MixtureSpec:
    spec = sample_mixture_spec(cfg["k"], cfg["d"], cfg["means_seed"])
    if cfg["mean_range"] != 4.0:
        spec = MixtureSpec(spec.means * (cfg["mean_range"] / 4.0), seed_of_means=cfg["means_seed"])
    return spec

def _load_spec(cfg):
    if cfg.get("spec"):
        return spec_from_dict(json.loads(Path(cfg["spec"]).read_text()))
    return None

def _require(cfg, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))

# ---------------------------------------------------------------- commands

def cmd_gen(cfg) -> None:
    if cfg["dist"] == "mixture":
        spec = _mixture(cfg)
    else:
        spec = PathologySpec(beta=cfg["beta"], k_classes=cfg["k"], dim=cfg["d"])
    if cfg["unlabeled"]:
        data = spec.sample_unlabeled(cfg["n"], cfg["seed"])
    else:
        data = spec.sample_labeled(cfg["n"], cfg["seed"])
    if cfg["spec_out"]:
        Path(cfg["spec_out"]).write_text(json.dumps(spec.to_dict()) + "\n")
    _emit(dataset_to_csv(data), cfg["out"])
    log.info("wrote %d rows", data.n)

def cmd_fit(cfg) -> None:
    spec = _load_spec(cfg)
    beta = cfg["beta"]
    if cfg["rule"] == "oracle":
        dist = spec or _mixture(cfg)
        rule = fit_oracle(dist, beta, cfg["mc_size"], cfg["seed"])
    else:
        _require(cfg, "train")
        train = read_dataset_csv(cfg["train"])
        if not isinstance(train, LabeledDataset):
            raise UsageError(f"{cfg['train']} has no y column")
        dist = spec or (_mixture(cfg) if cfg["estimator"] == "oracle" else None)
        K = dist.k_classes if dist is not None else max(cfg["k"], int(train.labels.max()))
        fcfg = FitConfig(
            beta=beta,
            k_classes=K,
            estimator=cfg["estimator"],
            knn_k=cfg["knn_k"],
            l2=cfg["l2"],
            iters=cfg["iters"],
            step=cfg["step"],
            noise_std=cfg["noise_std"],
            seed=cfg["seed"],
            dist=dist,
        )
        if cfg["rule"] == "top":
            rule = fit_top_beta(fit_model(train, fcfg), beta)
        elif cfg["rule"] == "se":
            rule = fit_supervised(train, fcfg)
        else:
            if cfg["unlabeled"]:
                unl = read_dataset_csv(cfg["unlabeled"])
                if isinstance(unl, LabeledDataset):
                    unl = unl.unlabeled()
            else:
                unl = UnlabeledDataset.empty(train.dim)
            rule = fit_semi_supervised(train, unl, fcfg)
    _emit(rule.to_json(), cfg["out"])
    log.info("fitted %s rule, threshold=%s", rule.mode, rule.threshold)

def cmd_eval(cfg) -> None:
    _require(cfg, "rule", "test")
    rule = ConfidenceRule.from_json(Path(cfg["rule"]).read_text())
    test = read_dataset_csv(cfg["test"], k_classes=rule.k_classes)
    if not isinstance(test, LabeledDataset):
        raise UsageError(f"{cfg['test']} has no y column")
    report = {
        "error": error_rate(rule, test),
        "info": information(rule, test),
        "test_size": test.n,
        "rule_digest": rule.digest(),
    }
    spec = _load_spec(cfg)
    if spec is not None:
        beta = rule.beta if rule.beta is not None else 1
        oracle = fit_oracle(spec, beta, cfg["mc_size"], cfg["seed"])
        theta = mc_true_threshold(spec, beta, cfg["mc_size"], cfg["seed"])
        report.update(
            theta_star=theta,
            hamming=hamming(rule, oracle, test),
            excess=excess_risk(rule, spec, theta, test),
            discrepancy=discrepancy(rule, error_rate(oracle, test), beta, test),
        )
    report["config"] = cfg
    _emit(json.dumps(report, indent=2, sort_keys=True), cfg["out"])

def _bench_configs(cfg, plugin: bool) -> list[ExperimentConfig]:
    base = dict(
        distribution="mixture",
        dim=cfg["d"],
        means_seed=cfg["means_seed"],
        mean_range=cfg["mean_range"],
        n_unlabeled=cfg["n_unlabeled"],
        m=cfg["m"],
        reps=cfg["reps"],
        master_seed=cfg["seed"],
        mc_oracle_size=cfg["mc_size"],
        threads=cfg["threads"],
        protocol=cfg["protocol"],
    )
    if plugin:
        base.update(
            estimator=cfg["estimator"],
            knn_k=cfg["knn_k"],
            l2=cfg["l2"],
            iters=cfg["iters"],
            step=cfg["step"],
            noise_std=cfg["noise_std"],
        )
    if cfg["full"]:
        return [
            ExperimentConfig(k_classes=10, betas=(2, 5), n=1000, **base),
            ExperimentConfig(k_classes=100, betas=(2, 5, 10, 20), n=10_000, **{**base, "mc_oracle_size": min(cfg["mc_size"], 200_000)}),
        ]
    return [ExperimentConfig(k_classes=cfg["k"], betas=tuple(cfg["betas"]), n=cfg["n"], **base)]

def _cmd_bench(cfg, runner, name: str, plugin: bool) -> None:
    rows = []
    configs = _bench_configs(cfg, plugin)
    for ecfg in configs:
        log.info("running %s: K=%d betas=%s", name, ecfg.k_classes, ecfg.betas)
        rows.extend(runner(ecfg))
    text = rows_to_csv(rows)
    if cfg["out"] is None:
        sys.stdout.write(text)
        return
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.csv").write_text(text)
    mirror = json.loads(rows_to_json(rows, configs[0]))
    mirror["effective_flags"] = cfg
    (out / f"{name}.json").write_text(json.dumps(mirror, indent=2) + "\n")
    log.info("wrote %s", out / f"{name}.csv")

def cmd_pathology(cfg) -> None:
    ecfg = ExperimentConfig(
        distribution="pathology",
        k_classes=cfg["k"],
        dim=cfg["d"],
        pathology_beta=cfg["beta"],
        betas=(cfg["beta"],),
        m=cfg["m"],
        master_seed=cfg["seed"],
        mc_oracle_size=cfg["mc_size"],
    )
    report = run_inconsistency_experiment(ecfg)
    report["config"] = cfg
    _emit(json.dumps(report, indent=2, sort_keys=True), cfg["out"])

def cmd_ratesweep(cfg) -> None:
    ecfg = ExperimentConfig(
        k_classes=cfg["k"],
        dim=cfg["d"],
        means_seed=cfg["means_seed"],
        mean_range=cfg["mean_range"],
        betas=(cfg["beta"],),
        n=cfg["n"],
        m=cfg["m"],
        reps=cfg["reps"],
        estimator=cfg["estimator"],
        knn_k=cfg["knn_k"],
        l2=cfg["l2"],
        iters=cfg["iters"],
        step=cfg["step"],
        noise_std=cfg["noise_std"],
        protocol="analyzed41",
        master_seed=cfg["seed"],
        threads=cfg["threads"],
    )
    res = run_rate_sweep(ecfg, cfg["grid"], cfg["sweep"])
    out = res.to_dict()
    out["effective_flags"] = cfg
    _emit(json.dumps(out, indent=2, sort_keys=True), cfg["out"])

_COMMANDS = {
    "gen": cmd_gen,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "bench-oracle": lambda cfg: _cmd_bench(cfg, run_oracle_table, "bench_oracle", plugin=False),
    "bench-plugin": lambda cfg: _cmd_bench(cfg, run_plugin_table, "bench_plugin", plugin=True),
    "pathology": cmd_pathology,
    "ratesweep": cmd_ratesweep,
}

def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = effective_config(ns.command, ns)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"confset: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.DEBUG if cfg["verbose"] >= 2 else logging.INFO if cfg["verbose"] == 1 else logging.WARNING,
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _COMMANDS[ns.command](cfg)
    except UsageError as exc:
        print(f"confset: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, TypeError, KeyError) as exc:
        print(f"confset: {ns.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0

def main() -> None:
    sys.exit(dispatch())

if __name__ == "__main__":
    main()
