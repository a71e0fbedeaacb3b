"""Treatment-effect estimation, heterogeneity tests and contextual policies."""

from .context import (
    FEATURE_INDEX, FEATURES, N_FEATURES, ContextVector, FeatureMismatch, StudentHistory,
    compute_context, context_matrix,
)
from .forest import (
    MODEL_FEATURES, CateModel, ForestConfig, InsufficientData, Tree, constant_model,
    fit_cate_forest, predict_cate, tune_forest,
)
from .htetests import AUTOC, QINI, aipw_scores, calibration_test, rate_autoc
from .policy import (
    ConstantPolicy, ContextualPolicy, NoMatchedSamples, PolicyValue, compare_policy_values,
    derive_contextual_policy, estimate_policy_value,
)
from .scan import (
    DEFAULT_OUTCOMES, OUTCOME_LABELS, ContrastResult, HteReport, PolicyComparison, ScanConfig,
    cb_compare, comparisons_to_csv, hte_scan, mab_contrasts, scan_treatment_datasets,
)
from .treatment import (
    AteResult, CovariateMissing, EmptyArm, InvalidContrast, TreatmentDataset, TreatmentSample,
    UnknownAction, build_treatment_dataset, estimate_ate, linear_hte_test,
)

__all__ = [
    "FEATURE_INDEX", "FEATURES", "N_FEATURES", "ContextVector", "FeatureMismatch", "StudentHistory",
    "compute_context", "context_matrix", "MODEL_FEATURES", "CateModel", "ForestConfig",
    "InsufficientData", "Tree", "constant_model", "fit_cate_forest", "predict_cate", "tune_forest",
    "AUTOC", "QINI", "aipw_scores", "calibration_test", "rate_autoc", "ConstantPolicy",
    "ContextualPolicy", "NoMatchedSamples", "PolicyValue", "compare_policy_values",
    "derive_contextual_policy", "estimate_policy_value", "DEFAULT_OUTCOMES", "OUTCOME_LABELS",
    "ContrastResult", "HteReport", "PolicyComparison", "ScanConfig", "cb_compare",
    "comparisons_to_csv", "hte_scan", "mab_contrasts", "scan_treatment_datasets", "AteResult",
    "CovariateMissing", "EmptyArm", "InvalidContrast", "TreatmentDataset", "TreatmentSample",
    "UnknownAction", "build_treatment_dataset", "estimate_ate", "linear_hte_test",
]
