import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from assistopt.statkit import (
    AllSameLabel, DegenerateSample, EmptySample, RankDeficient, anova_f, bh_adjust, f_cdf, logistic_wald, mean_ci,
    norm_cdf, norm_ppf, ols_wald, t_cdf, welch_t_one_sided,
)

ORACLE = json.loads((Path(__file__).parent / "fixtures" / "statkit_oracle.json").read_text())
TOL = 1e-6


@pytest.mark.parametrize("case", ORACLE["welch"], ids=lambda c: f"n{len(c['treat'])}x{len(c['control'])}")
def test_welch_matches_oracle(case):
    r = welch_t_one_sided(case["treat"], case["control"])
    assert r.statistic == pytest.approx(case["t"], abs=TOL)
    assert r.df == pytest.approx(case["df"], abs=TOL)
    assert r.p_value == pytest.approx(case["p"], abs=TOL)


@pytest.mark.parametrize("case", ORACLE["anova"], ids=lambda c: f"k{len(c['groups'])}")
def test_anova_matches_oracle(case):
    r = anova_f(case["groups"])
    assert r.statistic == pytest.approx(case["F"], rel=TOL, abs=TOL)
    assert r.p_value == pytest.approx(case["p"], abs=TOL)


@pytest.mark.parametrize("case", ORACLE["ols"], ids=lambda c: f"n{len(c['y'])}")
def test_ols_matches_oracle(case):
    fit = ols_wald(case["X"], case["y"], ["b0", "bw", "bx", "bwx"])
    for i, name in enumerate(["b0", "bw", "bx", "bwx"]):
        assert fit.coefficients[name] == pytest.approx(case["params"][i], abs=TOL)
        assert fit.standard_errors[name] == pytest.approx(case["bse"][i], abs=TOL)
        assert fit.wald_p[name] == pytest.approx(case["p"][i], abs=TOL)


@pytest.mark.parametrize("case", ORACLE["logistic"], ids=lambda c: f"n{len(c['y'])}")
def test_logistic_matches_oracle(case):
    fit = logistic_wald(case["X"], case["y"], ["b0", "bw", "bx", "bwx"])
    assert fit.converged
    for i, name in enumerate(["b0", "bw", "bx", "bwx"]):
        assert fit.coefficients[name] == pytest.approx(case["params"][i], abs=TOL)
        assert fit.standard_errors[name] == pytest.approx(case["bse"][i], abs=TOL)
        assert fit.wald_p[name] == pytest.approx(case["p"][i], abs=TOL)


def test_distribution_kernels_match_integration_oracle():
    funcs = {"t": lambda c: t_cdf(c["x"], *c["df"]), "f": lambda c: f_cdf(c["x"], *c["df"]),
             "norm": lambda c: norm_cdf(c["x"])}
    assert len(ORACLE["kernels"]) == 200
    for c in ORACLE["kernels"]:
        assert abs(float(funcs[c["kind"]](c)) - c["cdf"]) <= 1e-8, c


def test_welch_examples():
    r = welch_t_one_sided([1, 2, 3], [1, 2, 3])
    assert r.statistic == 0 and r.p_value == pytest.approx(0.5, abs=1e-12)
    # frozen from the scipy oracle (fixture 0)
    r = welch_t_one_sided([2.1, 2.5, 2.3, 2.2], [1.9, 2.0, 2.1])
    assert (r.statistic, r.df, r.p_value) == pytest.approx((2.6678918754, 4.8495960224, 0.0229279208), abs=1e-8)
    with pytest.raises(DegenerateSample):
        welch_t_one_sided([1, 1], [1, 1])
    with pytest.raises(DegenerateSample):
        welch_t_one_sided([1], [1, 2])


def test_anova_examples():
    r = anova_f([[1, 2, 3], [1, 2, 3]])
    assert r.statistic == 0 and r.p_value == 1.0
    assert anova_f([[0, 0, 0, 0], [1, 1, 1, 1]]).p_value < 1e-15
    assert anova_f([[1, 2], [2, 3], [3, 4]]).df == (2, 3)
    with pytest.raises(DegenerateSample):
        anova_f([[1, 2, 3]])


def test_mean_ci_examples():
    assert mean_ci([3.0, 3.0, 3.0]) == (3.0, 0.0)
    m, h = mean_ci([0, 1])
    assert m == 0.5 and h == pytest.approx(norm_ppf(0.975) * math.sqrt(0.5) / math.sqrt(2), abs=1e-12)
    assert h == pytest.approx(0.980, abs=1e-3)
    with pytest.raises(EmptySample):
        mean_ci([])


def test_ols_examples():
    x = np.arange(10.0)
    fit = ols_wald(np.column_stack([np.ones(10), x]), 2 * x)
    assert fit.coefficients["x0"] == pytest.approx(0, abs=1e-10)
    assert fit.coefficients["x1"] == pytest.approx(2, abs=1e-12)
    assert fit.standard_errors["x1"] == pytest.approx(0, abs=1e-10)
    assert ols_wald(np.ones((5, 1)), [5.0] * 5).coefficients["x0"] == pytest.approx(5)
    rng = np.random.default_rng(0)
    w = (rng.random(50) < 0.5).astype(float)
    xs = rng.normal(size=50)
    X = np.column_stack([np.ones(50), w, xs, w * xs])
    fit = ols_wald(X, X @ [0.1, 0.2, -0.3, 0.5], ["b0", "bw", "bx", "bwx"])
    assert fit.coefficients["bwx"] == pytest.approx(0.5, abs=1e-10)
    with pytest.raises(RankDeficient):
        ols_wald(np.column_stack([np.ones(5), np.ones(5)]), np.arange(5.0))
    with pytest.raises(RankDeficient):
        ols_wald(np.ones((1, 1)), [1.0])


def test_logistic_examples():
    one = np.ones((10, 1))
    assert logistic_wald(one, [0, 1] * 5).coefficients["x0"] == pytest.approx(0, abs=1e-10)
    y = [1] * 3 + [0] * 7
    assert logistic_wald(one, y).coefficients["x0"] == pytest.approx(math.log(0.3 / 0.7), abs=1e-8)
    assert math.log(0.3 / 0.7) == pytest.approx(-0.8473, abs=1e-4)
    x = np.arange(10.0)
    fit = logistic_wald(np.column_stack([np.ones(10), x]), (x > 4.5).astype(float))
    assert not fit.converged
    assert all(math.isfinite(v) and abs(v) <= 15 for v in fit.coefficients.values())
    with pytest.raises(AllSameLabel):
        logistic_wald(one, [1] * 10)


def test_bh_examples():
    rej, adj = bh_adjust([0.01, 0.04, 0.03, 0.20], 0.2)
    assert rej.all()
    rej, _ = bh_adjust([1.0, 1.0], 0.2)
    assert not rej.any()
    rej, adj = bh_adjust([0.001], 0.2)
    assert rej[0] and adj[0] == 0.001


@settings(max_examples=60)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=20), st.lists(st.floats(-5, 5), min_size=2, max_size=20))
def test_welch_orientation_sums_to_one(a, b):
    if np.var(a) + np.var(b) < 1e-6:
        return
    p = welch_t_one_sided(a, b).p_value + welch_t_one_sided(b, a).p_value
    assert p == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.floats(0, 1), max_size=30), st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_bh_monotone_in_q(p, q1, q2):
    lo, hi = sorted((q1, q2))
    r_lo, adj = bh_adjust(p, lo)
    r_hi, _ = bh_adjust(p, hi)
    assert np.all(r_hi[r_lo])
    order = np.argsort(p, kind="mergesort")
    assert np.all(np.diff(adj[order]) >= -1e-15)


@settings(max_examples=40)
@given(st.integers(6, 60), st.integers(0, 10_000))
def test_ols_residuals_orthogonal(n, seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    y = rng.normal(size=n)
    fit = ols_wald(X, y)
    beta = np.array([fit.coefficients[f"x{i}"] for i in range(3)])
    assert np.all(np.abs(X.T @ (y - X @ beta)) <= 1e-8)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_logistic_score_equations(seed):
    rng = np.random.default_rng(seed)
    n = 150
    X = np.column_stack([np.ones(n), rng.normal(size=n), (rng.random(n) < 0.5)])
    y = (rng.random(n) < 1 / (1 + np.exp(-(X @ [0.2, 0.7, -0.4])))).astype(float)
    fit = logistic_wald(X, y)
    beta = np.array([fit.coefficients[f"x{i}"] for i in range(3)])
    p = 1 / (1 + np.exp(-(X @ beta)))
    assert fit.converged
    assert np.all(np.abs(X.T @ (y - p)) <= 1e-6)


def test_bh_empirical_fdr():
    rng = np.random.default_rng(17)
    m, fams = 20, 1000
    null = np.zeros((fams, m), dtype=bool)
    null[:, : m // 2] = True
    z = rng.normal(size=(fams, m)) + np.where(null, 0.0, 3.0)
    p = 1 - norm_cdf(z)
    fdp = []
    for k in range(fams):
        rej, _ = bh_adjust(p[k], 0.2)
        fdp.append((rej & null[k]).sum() / max(rej.sum(), 1))
    assert np.mean(fdp) <= 0.2 + 0.03
