"""Self-contained statistical kernels."""

from .special import betainc, f_cdf, f_sf, norm_cdf, norm_ppf, norm_sf, t_cdf, t_sf
from .inference import (
    NO_INFORMATION,
    ONE_SIDED_GREATER,
    TWO_SIDED,
    AllSameLabel,
    DegenerateSample,
    EmptySample,
    RankDeficient,
    RegressionFit,
    StatError,
    TestResult,
    anova_f,
    bh_adjust,
    logistic_wald,
    mean_ci,
    ols_wald,
    welch_from_stats,
    welch_t_one_sided,
)

__all__ = [
    "betainc", "f_cdf", "f_sf", "norm_cdf", "norm_ppf", "norm_sf", "t_cdf", "t_sf",
    "NO_INFORMATION", "ONE_SIDED_GREATER", "TWO_SIDED", "AllSameLabel", "DegenerateSample",
    "EmptySample", "RankDeficient", "RegressionFit", "StatError", "TestResult", "anova_f",
    "bh_adjust", "logistic_wald", "mean_ci", "ols_wald", "welch_from_stats", "welch_t_one_sided",
]
