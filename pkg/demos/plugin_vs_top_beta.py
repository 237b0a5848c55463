"""Fit the semi-supervised plug-in rule and the top-beta rule on one mixture draw.

Run with ``python demos/plugin_vs_top_beta.py``. Prints error and average
set size for both rules and the oracle on a fresh test sample.
"""

import math

from confset.distgen import sample_mixture_spec
from confset.metrics import error_rate, information
from confset.probest import fit_softmax
from confset.rules import FitConfig, fit_oracle, fit_semi_supervised, fit_top_beta

K, D, BETA = 10, 10, 2

mix = sample_mixture_spec(K, D, seed=0)
train = mix.sample_labeled(1000, 1)
pool = mix.sample_unlabeled(10_000, 2)
test = mix.sample_labeled(5000, 3)

cfg = FitConfig(beta=BETA, k_classes=K, estimator="softmax", noise_std=math.exp(-5), seed=4)
rules = {
    "plug-in (semi-supervised)": fit_semi_supervised(train, pool, cfg),
    "top-beta": fit_top_beta(fit_softmax(train, k_classes=K), BETA),
    "oracle": fit_oracle(mix, BETA, 1_000_000, seed=5),
}
print(f"{'rule':28s} {'error':>8s} {'size':>8s}")
for name, rule in rules.items():
    print(f"{name:28s} {error_rate(rule, test):8.4f} {information(rule, test):8.3f}")
