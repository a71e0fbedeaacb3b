"""Hypothesis tests, regression fits and multiple-testing correction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .special import f_sf, norm_ppf, norm_sf, t_sf

ONE_SIDED_GREATER = "one_sided_greater"
TWO_SIDED = "two_sided"


class StatError(ValueError):
    pass


class EmptySample(StatError):
    pass


class DegenerateSample(StatError):
    pass


class RankDeficient(StatError):
    pass


class AllSameLabel(StatError):
    pass


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: Union[float, Tuple[float, float]]
    p_value: float
    sided: str = TWO_SIDED

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value out of range: {self.p_value}")


NO_INFORMATION = TestResult(statistic=0.0, df=float("nan"), p_value=1.0, sided=ONE_SIDED_GREATER)


@dataclass(frozen=True)
class RegressionFit:
    coefficients: Dict[str, float]
    standard_errors: Dict[str, float]
    wald_p: Dict[str, float]
    model: str
    converged: bool = True
    df_resid: float = float("inf")

    def statistic(self, name: str) -> float:
        se = self.standard_errors[name]
        beta = self.coefficients[name]
        if se > 0:
            return beta / se
        return 0.0 if beta == 0 else math.copysign(math.inf, beta)

    def one_sided_p(self, name: str) -> float:
        """P-value for H1: coefficient ``name`` > 0."""
        z = self.statistic(name)
        if self.model == "linear":
            return float(t_sf(z, self.df_resid))
        return float(norm_sf(z))


def mean_ci(samples: Sequence[float], level: float = 0.95) -> Tuple[float, float]:
    """Sample mean and normal-approximation CI halfwidth z*s/sqrt(n)."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise EmptySample("mean_ci needs at least one sample")
    mean = float(x.mean())
    if x.size < 2:
        return mean, 0.0
    z = norm_ppf(0.5 + level / 2.0)
    return mean, float(z * x.std(ddof=1) / math.sqrt(x.size))


def welch_from_stats(m1, v1, n1, m2, v2, n2) -> TestResult:
    """One-sided Welch test of mean1 > mean2 from summary statistics
    (sample means, unbiased variances, counts)."""
    if n1 < 2 or n2 < 2:
        raise DegenerateSample("Welch test needs at least two samples per group")
    s1, s2 = v1 / n1, v2 / n2
    se2 = s1 + s2
    if not se2 > 0:
        raise DegenerateSample("zero variance in both groups")
    t = (m1 - m2) / math.sqrt(se2)
    df = se2 * se2 / (s1 * s1 / (n1 - 1) + s2 * s2 / (n2 - 1))
    return TestResult(float(t), float(df), float(t_sf(t, df)), ONE_SIDED_GREATER)


def welch_t_one_sided(treat: Sequence[float], control: Sequence[float]) -> TestResult:
    """Welch t-test of H1: mean(treat) > mean(control)."""
    a = np.asarray(treat, dtype=float)
    b = np.asarray(control, dtype=float)
    if a.size < 2 or b.size < 2:
        raise DegenerateSample("Welch test needs at least two samples per group")
    return welch_from_stats(a.mean(), a.var(ddof=1), a.size, b.mean(), b.var(ddof=1), b.size)


def anova_f(groups: Sequence[Sequence[float]]) -> TestResult:
    """One-way ANOVA F test across ``groups``."""
    arrs = [np.asarray(g, dtype=float) for g in groups]
    if len(arrs) < 2 or any(g.size < 2 for g in arrs):
        raise DegenerateSample("ANOVA needs >= 2 groups with >= 2 samples each")
    k = len(arrs)
    n = sum(g.size for g in arrs)
    grand = sum(g.sum() for g in arrs) / n
    ssb = sum(g.size * (g.mean() - grand) ** 2 for g in arrs)
    ssw = sum(((g - g.mean()) ** 2).sum() for g in arrs)
    df1, df2 = k - 1, n - k
    # Guard against rounding noise in ssb when all group means coincide.
    if ssb <= 1e-14 * max(1.0, ssw):
        return TestResult(0.0, (df1, df2), 1.0, TWO_SIDED)
    if ssw == 0:
        return TestResult(math.inf, (df1, df2), 0.0, TWO_SIDED)
    f = (ssb / df1) / (ssw / df2)
    return TestResult(float(f), (df1, df2), float(f_sf(f, df1, df2)), TWO_SIDED)


def _names(k: int, names: Optional[Sequence[str]]):
    if names is None:
        return [f"x{i}" for i in range(k)]
    if len(names) != k:
        raise ValueError("one name per design column required")
    return list(names)


def _check_design(X: np.ndarray, y: np.ndarray):
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("design must be (n, k) with n matching y")
    n, k = X.shape
    if n <= k:
        raise RankDeficient(f"need more rows than columns, got {n}x{k}")
    if np.linalg.matrix_rank(X) < k:
        raise RankDeficient("design matrix is not full column rank")


def ols_wald(design, y, names: Optional[Sequence[str]] = None) -> RegressionFit:
    """Least squares with iid standard errors and two-sided t Wald p-values."""
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_design(X, y)
    n, k = X.shape
    names = _names(k, names)
    xtx_inv = np.linalg.inv(X.T @ X)
    beta = xtx_inv @ (X.T @ y)
    resid = y - X @ beta
    dof = n - k
    sigma2 = float(resid @ resid) / dof
    se = np.sqrt(np.maximum(np.diag(xtx_inv) * sigma2, 0.0))
    coefs, ses, ps = {}, {}, {}
    for i, name in enumerate(names):
        b, s = float(beta[i]), float(se[i])
        if s > 0:
            p = 2.0 * float(t_sf(abs(b) / s, dof))
        else:
            p = 1.0 if abs(b) <= 1e-12 else 0.0
        coefs[name], ses[name], ps[name] = b, s, min(1.0, p)
    return RegressionFit(coefs, ses, ps, "linear", True, float(dof))


_SEPARATION_BOUND = 15.0


def logistic_wald(
    design, y, names: Optional[Sequence[str]] = None, tol: float = 1e-8, max_iter: int = 100
) -> RegressionFit:
    """Logistic regression by IRLS with normal-approximation Wald p-values.

    On separation (any |beta| exceeding 15) iteration stops with
    ``converged=False`` and coefficients clamped to +-15.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_design(X, y)
    if np.all(y == y[0]):
        raise AllSameLabel("all outcomes identical")
    n, k = X.shape
    names = _names(k, names)
    beta = np.zeros(k)
    converged = False
    for _ in range(max_iter):
        eta = X @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = X.T @ (y - p)
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        wts = p * (1.0 - p)
        hess = X.T @ (X * wts[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        beta = beta + step
        if np.any(np.abs(beta) > _SEPARATION_BOUND):
            beta = np.clip(beta, -_SEPARATION_BOUND, _SEPARATION_BOUND)
            break
    p = 1.0 / (1.0 + np.exp(-(X @ beta)))
    wts = p * (1.0 - p)
    hess = X.T @ (X * wts[:, None])
    try:
        cov = np.linalg.inv(hess)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        se = np.full(k, np.inf)
    coefs, ses, ps = {}, {}, {}
    for i, name in enumerate(names):
        b, s = float(beta[i]), float(se[i])
        p_val = 2.0 * float(norm_sf(abs(b) / s)) if s > 0 and np.isfinite(s) else 1.0
        coefs[name], ses[name], ps[name] = b, s, min(1.0, p_val)
    return RegressionFit(coefs, ses, ps, "logistic", converged)


def bh_adjust(p_values: Sequence[float], q: float = 0.2) -> Tuple[np.ndarray, np.ndarray]:
    """Benjamini-Hochberg step-up procedure.

    Returns ``(rejected, adjusted)`` in the input order.
    """
    p = np.asarray(p_values, dtype=float)
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    order = np.argsort(p, kind="mergesort")
    ranked = p[order]
    ranks = np.arange(1, m + 1)
    passing = np.nonzero(ranked <= ranks * q / m)[0]
    rejected_sorted = np.zeros(m, dtype=bool)
    if passing.size:
        rejected_sorted[: passing[-1] + 1] = True
    adj_sorted = np.minimum.accumulate((m * ranked / ranks)[::-1])[::-1]
    adj_sorted = np.minimum(adj_sorted, 1.0)
    rejected = np.empty(m, dtype=bool)
    adjusted = np.empty(m)
    rejected[order] = rejected_sorted
    adjusted[order] = adj_sorted
    return rejected, adjusted
