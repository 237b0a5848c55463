"""Show that top-beta is not consistent on the pathological distribution.

Run with ``python demos/top_beta_inconsistency.py``. The oracle threshold rule
reaches near-zero excess risk while the best top-beta rule stays above the
lower bound.
"""

from confset.bench import ExperimentConfig, run_inconsistency_experiment

cfg = ExperimentConfig(distribution="pathology", k_classes=10, dim=2, pathology_beta=2, betas=(2,), m=100_000)
rep = run_inconsistency_experiment(cfg)
print(f"population threshold       {rep['theta_star']:.4f}")
print(f"oracle excess risk         {rep['oracle_excess']:.2e}")
print(f"best top-beta excess risk  {rep['best_topbeta_excess']:.4f}")
print(f"lower bound                {rep['bound']:.4f}")
