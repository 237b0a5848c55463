"""Set-valued classification with controlled expected set size."""

__version__ = "0.1.0"

from .core import (
    ConfidenceSet,
    LabeledDataset,
    LabelSpace,
    UnlabeledDataset,
    confidence_set_cardinality,
    symmetric_difference_size,
)
from .distgen import MixtureSpec, PathologySpec, sample_mixture_spec, sample_pathology
from .gfun import build_empirical_g, generalized_inverse, mc_true_threshold, perturb_scores
from .metrics import aggregate, discrepancy, error_rate, excess_risk, hamming, information, risk_beta
from .probest import fit_knn, fit_softmax, mixture_posterior
from .rules import (
    ConfidenceRule,
    FitConfig,
    fit_oracle,
    fit_semi_supervised,
    fit_supervised,
    fit_top_beta,
    predict_set,
)
