"""Held-out tests of whether a fitted CATE model found real heterogeneity."""

from __future__ import annotations

import math

import numpy as np

from ..statkit import NO_INFORMATION, ONE_SIDED_GREATER, DegenerateSample, TestResult, norm_sf, ols_wald
from .forest import CateModel
from .treatment import TreatmentDataset

AUTOC = "autoc"
QINI = "qini"
N_HALF_SAMPLES = 200


def _check_arms(td: TreatmentDataset, minimum: int = 2):
    if td.n_treated < minimum or td.n_control < minimum:
        raise DegenerateSample(f"need at least {minimum} samples in each arm")


def calibration_test(model: CateModel, td: TreatmentDataset) -> TestResult:
    """Best-linear-predictor check on held-out data.

    The centred outcome is regressed, without intercept, on (w - e) * mean_tau
    and (w - e) * (tau_hat - mean_tau), with e the held-out treated share.
    A positive coefficient on the second regressor indicates the model's
    ranking carries real heterogeneity; the one-sided Wald p is returned.
    """
    _check_arms(td)
    tau = model.predict(td.X, td.present)
    tau_bar = float(tau.mean())
    dev = tau - tau_bar
    if np.ptp(tau) == 0:
        return NO_INFORMATION
    wc = td.w - td.w.mean()
    resid = td.y - td.y.mean()
    cols, names = [wc * dev], ["differential"]
    if abs(tau_bar) > 1e-12:
        cols.insert(0, wc * tau_bar)
        names.insert(0, "mean")
    fit = ols_wald(np.column_stack(cols), resid, names)
    z = fit.statistic("differential")
    return TestResult(float(z), fit.df_resid, fit.one_sided_p("differential"), ONE_SIDED_GREATER)


def aipw_scores(td: TreatmentDataset) -> np.ndarray:
    """Doubly-robust effect scores with arm means as the outcome model."""
    _check_arms(td, 1)
    w, y = td.w, td.y
    e = w.mean()
    mu1 = y[w == 1].mean()
    mu0 = y[w == 0].mean()
    return (mu1 - mu0) + w * (y - mu1) / e - (1 - w) * (y - mu0) / (1 - e)


def _tie_averaged(scores_sorted: np.ndarray, keys_sorted: np.ndarray) -> np.ndarray:
    # replace scores within runs of equal keys by the run mean
    starts = np.r_[0, np.nonzero(keys_sorted[1:] != keys_sorted[:-1])[0] + 1]
    sums = np.add.reduceat(scores_sorted, starts)
    lens = np.diff(np.r_[starts, scores_sorted.size])
    return np.repeat(sums / lens, lens)


def rate_from_sorted(gamma: np.ndarray, target: str = AUTOC) -> float:
    """Area under the TOC curve for scores already sorted by priority."""
    n = gamma.size
    k = np.arange(1, n + 1)
    toc = np.cumsum(gamma) / k - gamma.mean()
    if target == QINI:
        return float(np.sum(toc * k) / n / n)
    return float(toc.mean())


def rate_autoc(model: CateModel, td: TreatmentDataset, seed: int = 0, target: str = AUTOC,
               priorities: np.ndarray | None = None) -> TestResult:
    """Rank-weighted ATE of the model's prioritization with a one-sided z test.

    The standard error is the spread of the estimate over half-samples drawn
    without replacement; at half size that spread already matches the
    full-sample sampling error, so no rescaling is applied.
    """
    if target not in (AUTOC, QINI):
        raise ValueError(f"unknown RATE target {target!r}")
    _check_arms(td)
    tau = model.predict(td.X, td.present) if priorities is None else np.asarray(priorities, dtype=float)
    if np.ptp(tau) == 0:
        return NO_INFORMATION
    order = np.argsort(-tau, kind="stable")
    gamma = _tie_averaged(aipw_scores(td)[order], tau[order])
    estimate = rate_from_sorted(gamma, target)
    n = gamma.size
    half = n // 2
    rng = np.random.Generator(np.random.Philox(key=[seed, 0x2A7E]))
    reps = np.empty(N_HALF_SAMPLES)
    for r in range(N_HALF_SAMPLES):
        pick = np.sort(rng.choice(n, size=half, replace=False))
        reps[r] = rate_from_sorted(gamma[pick], target)
    se = float(reps.std(ddof=1))
    if not se > 0:
        return NO_INFORMATION
    z = estimate / se
    return TestResult(float(z), math.inf, float(norm_sf(z)), ONE_SIDED_GREATER)
