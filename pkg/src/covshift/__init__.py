"""Off-policy evaluation and learning for contextual bandits under covariate shift."""

from .core import (
    DeterministicLabelPolicy,
    EvaluationDataset,
    FoldPartition,
    HistoricalDataset,
    MixturePolicy,
    NuisanceBounds,
    NuisanceSet,
    Policy,
    TablePolicy,
    UniformPolicy,
    mixture_policy,
    policy_prob_vector,
    sampling_fraction,
    value_v,
)
from .density_ratio import (
    KdeModel,
    KulsifModel,
    fit_kde,
    fit_kulsif,
    kde_eval,
    kde_ratio_predict,
    ratio_predict,
)
from .estimators import (
    EstimateReport,
    dm_estimate,
    drcs_estimate,
    drcs_known_q,
    efficiency_bound_tabular,
    eif_variance_estimate,
    ipwcs_estimate,
    ipwcsb_estimate,
    self_normalized,
    standard_bound_tabular,
    standard_dr_estimate,
)
from .opl import OplConfig, SoftmaxKernelPolicy, opl_gradient, opl_objective, train_policy
from .regression import (
    KernelRidgeModel,
    NadarayaWatsonModel,
    fit_behavior_krr,
    fit_behavior_nw,
    fit_outcome_krr,
    fit_outcome_nw,
)
from .synthetic import TabularDGP, exact_policy_value, misspecify, sample_datasets

__version__ = "0.1.0"

__all__ = [
    "DeterministicLabelPolicy",
    "EstimateReport",
    "EvaluationDataset",
    "FoldPartition",
    "HistoricalDataset",
    "KdeModel",
    "KernelRidgeModel",
    "KulsifModel",
    "MixturePolicy",
    "NadarayaWatsonModel",
    "NuisanceBounds",
    "NuisanceSet",
    "OplConfig",
    "Policy",
    "SoftmaxKernelPolicy",
    "TablePolicy",
    "TabularDGP",
    "UniformPolicy",
    "dm_estimate",
    "drcs_estimate",
    "drcs_known_q",
    "efficiency_bound_tabular",
    "eif_variance_estimate",
    "exact_policy_value",
    "fit_behavior_krr",
    "fit_behavior_nw",
    "fit_kde",
    "fit_kulsif",
    "fit_outcome_krr",
    "fit_outcome_nw",
    "ipwcs_estimate",
    "ipwcsb_estimate",
    "kde_eval",
    "kde_ratio_predict",
    "misspecify",
    "mixture_policy",
    "opl_gradient",
    "opl_objective",
    "policy_prob_vector",
    "ratio_predict",
    "sample_datasets",
    "sampling_fraction",
    "self_normalized",
    "standard_bound_tabular",
    "standard_dr_estimate",
    "train_policy",
    "value_v",
]
