import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from assistopt.causal import (
    FEATURE_INDEX, FEATURES, N_FEATURES, ConstantPolicy, ContextualPolicy, ContextVector, CovariateMissing,
    EmptyArm, FeatureMismatch, ForestConfig, InsufficientData, InvalidContrast, NoMatchedSamples, PolicyValue,
    ScanConfig, TreatmentDataset, Tree, UnknownAction, build_treatment_dataset, calibration_test, compare_policy_values,
    compute_context, constant_model, derive_contextual_policy, estimate_ate, estimate_policy_value, fit_cate_forest,
    hte_scan, linear_hte_test, mab_contrasts, predict_cate, rate_autoc, scan_treatment_datasets,
)
from assistopt.causal.forest import CateModel, model_matrix
from assistopt.causal.htetests import aipw_scores, rate_from_sorted
from assistopt.ingestion import PreprocessConfig, preprocess
from assistopt.mab import train_mab_policy
from assistopt.outcomes import NEXT_CORRECT, REATTEMPT, REWARD
from assistopt.simulator import ContrastModel
from assistopt.statkit import DegenerateSample

from conftest import flat_items, rec, session

TEST_FOREST = ForestConfig(n_trees=50)
ABILITY = FEATURE_INDEX["stud_ability"]


def contrast_td(cm: ContrastModel, n: int, seed: int, **meta) -> TreatmentDataset:
    X, P, w, y = cm.sample(n, seed)
    return TreatmentDataset(X, P, w, y, **meta)


def ability_grid(values):
    X = np.zeros((len(values), N_FEATURES))
    X[:, ABILITY] = values
    return X, np.ones_like(X, dtype=bool)


def split_tree(left_value, right_value, threshold=0.0):
    """Depth-one tree on stud_ability."""
    return Tree(np.array([ABILITY, -1, -1]), np.array([threshold, 0.0, 0.0]), np.array([1, -1, -1]),
                np.array([2, -1, -1]), np.array([0.0, left_value, right_value]))


# ---------------------------------------------------------------- context


def test_first_question_has_no_history():
    s = session([rec(1, "q1", True), rec(2, "q2", False)])
    x = compute_context([], s, 1, flat_items(["q1", "q2"]))
    assert x["quest_num"] == 1
    for name in ("cor_rate", "prev_resp_cor", "confidence") + FEATURES[8:]:
        assert not x.is_present(name) and x[name] == 0.0
    assert x["stud_ability"] == 0.0


def test_within_session_counts_before_focal():
    s = session([rec(1, "q1", True), rec(2, "q2", False), rec(3, "q3", True), rec(4, "q4", False)])
    x = compute_context([], s, 4, flat_items(["q1", "q2", "q3", "q4"]))
    assert x["cor_rate"] == pytest.approx(2 / 3, abs=1e-4)
    assert x["prev_resp_cor"] == 1.0
    assert x["quest_num"] == 4


def test_history_average_session_length():
    h1 = session([rec(k, f"a{k}", True, ts=k) for k in range(1, 9)], sid="h1")
    h2 = session([rec(k, f"b{k}", k % 2 == 0, ts=100 + k) for k in range(1, 13)], sid="h2")
    now = session([rec(1, "c1", True, ts=1000), rec(2, "c2", True, ts=1001)], sid="now")
    items = flat_items([r.question_id for s in (h1, h2, now) for r in s.records])
    x = compute_context([h1, h2, now], now, 2, items)
    assert x["avg_quest_num"] == 10
    assert x["num_sess_total"] == 2 and x["num_quest_total"] == 20
    # sessions that start later are not history
    assert not compute_context([h1, h2, now], h1, 1, items).is_present("avg_quest_num")


def test_context_vector_dict_round_trip():
    x = ContextVector.from_dict({"stud_ability": 0.5, "quest_num": 3, "cor_rate": None})
    assert x.is_present("quest_num") and not x.is_present("cor_rate") and not x.is_present("weekend")
    assert ContextVector.from_dict(x.as_dict()) == x
    with pytest.raises(FeatureMismatch):
        ContextVector.from_dict({"shoe_size": 1.0})


# ---------------------------------------------------------------- treatment datasets and ATE


def _exposure_session(sid, action, second, at=1, n=6):
    records = []
    for k in range(1, n + 1):
        if k == at:
            records.append(rec(k, "qf", False, action, second, sid=sid, student=sid))
        else:
            records.append(rec(k, f"o{k}", k % 2 == 1, sid=sid, student=sid))
    return session(records, sid=sid, student=sid)


@pytest.fixture
def five_exposures():
    sessions = [_exposure_session(f"t{i}", "qf/T", i != 1) for i in range(3)]
    sessions += [_exposure_session(f"c{i}", "qf/C", i == 0) for i in range(2)]
    sessions.append(_exposure_session("last", "qf/T", True, at=6))
    ds = preprocess(sessions, PreprocessConfig(min_samples_per_action=1))
    return ds, flat_items(["qf"] + [f"o{k}" for k in range(1, 7)])


def test_treatment_dataset_labels(five_exposures):
    ds, items = five_exposures
    td = build_treatment_dataset("qf", ds, "qf/T", "qf/C", REATTEMPT, items)
    assert (td.n, td.n_treated, td.n_control) == (6, 4, 2)
    assert sorted(zip(td.w, td.y)) == [(0, 0), (0, 1), (1, 0), (1, 1), (1, 1), (1, 1)]
    assert td.binary and td.question_id == "qf"


def test_session_final_exposure_dropped_for_next_question(five_exposures):
    ds, items = five_exposures
    td = build_treatment_dataset("qf", ds, "qf/T", "qf/C", NEXT_CORRECT, items)
    assert (td.n_treated, td.n_control) == (3, 2)


def test_contrast_errors(five_exposures):
    ds, items = five_exposures
    with pytest.raises(InvalidContrast):
        build_treatment_dataset("qf", ds, "qf/T", "qf/T", REATTEMPT, items)
    with pytest.raises(UnknownAction):
        build_treatment_dataset("qf", ds, "qf/T", "qf/Z", REATTEMPT, items)
    only_t = preprocess([_exposure_session(f"t{i}", "qf/T", True) for i in range(3)]
                        + [_exposure_session("c0", "qf/C", True, at=6)], PreprocessConfig(min_samples_per_action=1))
    with pytest.raises(EmptyArm):
        build_treatment_dataset("qf", only_t, "qf/T", "qf/C", NEXT_CORRECT, items)


def _arms(y1, y0, x1=None, x0=None):
    y = np.r_[y1, y0]
    X = np.zeros((y.size, N_FEATURES))
    if x1 is not None:
        X[:, ABILITY] = np.r_[x1, x0]
    return TreatmentDataset(X, np.ones_like(X, dtype=bool), np.r_[np.ones(len(y1)), np.zeros(len(y0))], y)


def test_ate_printed_means():
    td = _arms(np.r_[np.ones(693), np.zeros(307)], np.r_[np.ones(313), np.zeros(687)])
    res = estimate_ate(td)
    assert res.tau_hat == pytest.approx(0.380, abs=1e-12)
    assert res.ci95[0] < res.tau_hat < res.ci95[1]


def test_ate_identical_arms_and_degenerate():
    res = estimate_ate(_arms([0.1, 0.5, 0.9], [0.1, 0.5, 0.9]))
    assert res.tau_hat == 0.0 and res.se > 0
    with pytest.raises(DegenerateSample):
        estimate_ate(_arms([1.0], [0.0, 1.0]))


def test_ate_matches_constrained_regression():
    rng = np.random.default_rng(5)
    x = rng.normal(size=40)
    x -= x.mean()
    # identical covariates in both arms make the regression coefficient the mean difference
    td = _arms(1.0 + 0.5 * x + rng.normal(size=40), 0.4 * x + rng.normal(size=40), x, x)
    fit = linear_hte_test(td, "stud_ability", interaction=False)
    assert fit.coefficients["w"] == pytest.approx(estimate_ate(td).tau_hat, abs=1e-8)


# ---------------------------------------------------------------- linear HTE test


def test_linear_exact_fit():
    rng = np.random.default_rng(1)
    n = 50
    x = rng.normal(size=n)
    w = (np.arange(n) % 2).astype(float)
    y = 0.1 + 0.2 * w + 0.3 * x + 0.5 * w * x
    X = np.zeros((n, N_FEATURES))
    X[:, ABILITY] = x
    td = TreatmentDataset(X, np.ones_like(X, dtype=bool), w, y)
    fit = linear_hte_test(td, "stud_ability")
    assert fit.model == "linear" and list(fit.coefficients) == ["const", "w", "x", "wx"]
    assert fit.coefficients["wx"] == pytest.approx(0.5, abs=1e-8)
    assert [fit.coefficients[k] for k in ("const", "w", "x")] == pytest.approx([0.1, 0.2, 0.3], abs=1e-8)


def test_linear_binary_uses_logistic_and_coverage():
    td = contrast_td(ContrastModel(tau_slope=0.2), 3000, 0)
    fit = linear_hte_test(td, "stud_ability")
    assert fit.model == "logistic" and fit.wald_p["wx"] < 0.01
    # cor_rate is masked on first questions (about 1 in 15 here), history on ~30%
    with pytest.raises(CovariateMissing):
        linear_hte_test(td, "avg_1st_cor")
    linear_hte_test(td, "avg_1st_cor", min_coverage=0.5)


# ---------------------------------------------------------------- forest


@pytest.fixture(scope="module")
def constant_fit():
    cm = ContrastModel(tau0=0.2)
    return fit_cate_forest(contrast_td(cm, 5000, 0), TEST_FOREST, 0), cm


def test_forest_constant_effect(constant_fit):
    model, cm = constant_fit
    ev = contrast_td(cm, 2000, 99)
    pred = model.predict(ev.X, ev.present)
    assert np.mean((pred >= 0.15) & (pred <= 0.25)) >= 0.95


def test_forest_null_effect():
    cm = ContrastModel()
    model = fit_cate_forest(contrast_td(cm, 5000, 1), TEST_FOREST, 1)
    ev = contrast_td(cm, 2000, 98)
    assert np.abs(model.predict(ev.X, ev.present)).mean() <= 0.05


def test_forest_recovers_linear_effect():
    cm = ContrastModel(tau_slope=1.0, outcome="continuous")
    model = fit_cate_forest(contrast_td(cm, 5000, 2), TEST_FOREST, 2)
    X, P = ability_grid(np.linspace(-2, 2, 81))
    assert np.corrcoef(model.predict(X, P), cm.tau(X))[0, 1] >= 0.7


def test_forest_insufficient_data():
    td = contrast_td(ContrastModel(), 39, 0)
    with pytest.raises(InsufficientData):
        fit_cate_forest(td, ForestConfig(n_trees=5, min_leaf=10))
    fit_cate_forest(contrast_td(ContrastModel(), 40, 0), ForestConfig(n_trees=5, min_leaf=10))


def test_forest_honesty(constant_fit):
    model, cm = constant_fit
    td = contrast_td(cm, 5000, 0)
    Z = model_matrix(td.X, td.present)
    min_leaf = model.config.min_leaf
    for tree in model.trees[:10]:
        assert np.intersect1d(tree.split_ids, tree.estimate_ids).size == 0
        ids = tree.estimate_ids
        leaf = tree.apply(Z[ids])
        for node in np.unique(leaf):
            members = ids[leaf == node]
            t = td.w[members] == 1
            assert tree.value[node] == pytest.approx(td.y[members][t].mean() - td.y[members][~t].mean(), abs=1e-12)
            if tree.feature.size > 1:
                assert t.sum() >= min_leaf and (~t).sum() >= min_leaf


def test_forest_deterministic_and_round_trip(constant_fit):
    model, cm = constant_fit
    ev = contrast_td(cm, 500, 3)
    again = fit_cate_forest(contrast_td(cm, 5000, 0), TEST_FOREST, 0)
    assert np.array_equal(model.predict(ev.X, ev.present), again.predict(ev.X, ev.present))
    loaded = CateModel.from_json(model.to_json())
    assert np.array_equal(model.predict(ev.X, ev.present), loaded.predict(ev.X, ev.present))
    x = ContextVector.from_arrays(ev.X[0], ev.present[0])
    assert predict_cate(model, x) == predict_cate(loaded, x)


def test_predict_cate_examples():
    x = ContextVector.from_dict({"stud_ability": 1.3})
    assert predict_cate(constant_model(0.3), x) == pytest.approx(0.3)
    pair = CateModel([constant_model(0.1).trees[0], constant_model(0.3).trees[0]], ForestConfig(n_trees=2))
    assert predict_cate(pair, x) == pytest.approx(0.2)
    odd = CateModel(pair.trees, pair.config, feature_names=FEATURES)
    with pytest.raises(FeatureMismatch):
        predict_cate(odd, x)
    with pytest.raises(FeatureMismatch):
        pair.predict(np.zeros((2, 5)), np.ones((2, 5), dtype=bool))


# ---------------------------------------------------------------- calibration and RATE


def test_constant_model_gives_no_information():
    td = contrast_td(ContrastModel(tau0=0.1), 400, 0)
    assert calibration_test(constant_model(0.1), td).p_value == 1.0
    assert rate_autoc(constant_model(0.1), td).p_value == 1.0


def test_forest_tests_detect_strong_heterogeneity():
    cm = ContrastModel(tau_slope=1.0, outcome="continuous", x_dist="uniform")
    fit, held = contrast_td(cm, 5000, 4).split(0.5, 4)
    model = fit_cate_forest(fit, TEST_FOREST, 4)
    assert calibration_test(model, held).p_value < 0.01
    assert rate_autoc(model, held, seed=4).p_value < 0.01


def test_calibration_needs_both_arms():
    td = contrast_td(ContrastModel(), 200, 0)
    treated = td.subset(np.nonzero(td.w == 1)[0])
    with pytest.raises(DegenerateSample):
        calibration_test(constant_model(0.0), treated)


def test_rate_random_scores_null():
    cm = ContrastModel(tau0=0.1)
    inside = 0
    for seed in range(500):
        td = contrast_td(cm, 1000, seed)
        scores = np.random.default_rng(seed).random(td.n)
        res = rate_autoc(constant_model(0.0), td, seed, priorities=scores)
        inside += abs(res.statistic) <= 2
    assert inside >= 475


def test_rate_oracle_scores_power():
    cm = ContrastModel(tau_slope=1.0, outcome="continuous", x_dist="uniform")
    hits = 0
    for seed in range(100):
        td = contrast_td(cm, 5000, seed)
        hits += rate_autoc(constant_model(0.0), td, seed, priorities=cm.tau(td.X)).p_value < 0.05
    assert hits >= 80


def test_rate_sorted_scores_example():
    # a perfect ranking of effects (1, 1, 0, 0) lifts the top half by 0.5
    gamma = np.array([1.0, 1.0, 0.0, 0.0])
    toc = [1 - 0.5, 1 - 0.5, 2 / 3 - 0.5, 0.0]
    assert rate_from_sorted(gamma) == pytest.approx(np.mean(toc))
    assert rate_from_sorted(gamma[::-1]) < 0


def test_aipw_scores_average_to_ate():
    td = contrast_td(ContrastModel(tau0=0.2), 1000, 7)
    assert aipw_scores(td).mean() == pytest.approx(estimate_ate(td).tau_hat, abs=1e-12)


# ---------------------------------------------------------------- policies


@settings(max_examples=50, deadline=None)
@given(st.floats(0.001, 1.0), st.floats(0.001, 1.0), st.booleans(),
       st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_one_signed_model_matches_constant_policy(a, b, positive, xs):
    sign = 1.0 if positive else -1.0
    model = CateModel([split_tree(sign * a, sign * b)], ForestConfig(n_trees=1))
    policy = derive_contextual_policy(model, "q/T", "q/C")
    X, P = ability_grid(xs)
    assert np.array_equal(policy.decide(X, P), ConstantPolicy(positive).decide(X, P))


def test_sign_changing_model_uses_both_actions():
    model = CateModel([split_tree(-0.2, 0.3, threshold=0.25)], ForestConfig(n_trees=1))
    policy = derive_contextual_policy(model, "q/T", "q/C", "q")
    X, P = ability_grid(np.linspace(-1, 1, 21))
    decisions = policy.decide(X, P)
    assert decisions.any() and not decisions.all()
    assert np.array_equal(decisions, X[:, ABILITY] > 0.25)
    assert policy.action_for(ContextVector.from_dict({"stud_ability": 0.9})) == "q/T"
    assert policy.action_for(ContextVector.from_dict({"stud_ability": -0.9})) == "q/C"


def test_constant_policy_values_equal_arm_means():
    td = contrast_td(ContrastModel(tau0=0.1), 1000, 0)
    treat = estimate_policy_value(ConstantPolicy(True), td)
    control = estimate_policy_value(ConstantPolicy(False), td)
    assert treat.v_hat == pytest.approx(td.y[td.w == 1].mean(), abs=1e-12)
    assert control.v_hat == pytest.approx(td.y[td.w == 0].mean(), abs=1e-12)
    assert (treat.n_matched, control.n_matched) == (td.n_treated, td.n_control)
    with pytest.raises(NoMatchedSamples):
        estimate_policy_value(ConstantPolicy(True), td.subset(np.nonzero(td.w == 0)[0]))


def test_oracle_policy_value():
    cm = ContrastModel(tau_slope=1.0, outcome="continuous", x_dist="uniform")
    oracle = ContextualPolicy("q", "T", "C", CateModel([split_tree(-1.0, 1.0)], ForestConfig(n_trees=1)))
    gain = cm.oracle_gain()
    assert gain == pytest.approx(0.25)
    for seed in range(5):
        td = contrast_td(cm, 5000, seed)
        best_arm = max(td.y[td.w == 1].mean(), td.y[td.w == 0].mean())
        assert estimate_policy_value(oracle, td).v_hat - best_arm >= 0.5 * gain


def test_identical_policy_values():
    v = PolicyValue(0.4, 0.01, 500)
    res = compare_policy_values(v, v)
    assert res.statistic == 0.0 and res.p_value == pytest.approx(0.5)


# ---------------------------------------------------------------- scan


def test_empty_scan():
    report = scan_treatment_datasets([])
    assert report.results == [] and report.outcomes == ()
    assert report.to_csv("linear").splitlines() == ["test"] + list(FEATURES)


def _scan(models, n, seed0=0, config=ScanConfig(forest=TEST_FOREST)):
    tds = [((f"q{i}", f"q{i}/T", f"q{i}/C"), REWARD, contrast_td(cm, n, seed0 + i)) for i, cm in enumerate(models)]
    return scan_treatment_datasets(tds, config)


def test_homogeneous_world_scan():
    rng = np.random.default_rng(0)
    report = _scan([ContrastModel(tau0=float(t)) for t in rng.uniform(-0.15, 0.0, 200)], 1000)
    for kind in ("linear", "forest", "policy"):
        for row, cells in report.table(kind).items():
            assert cells[REWARD] <= 0.05, (kind, row)


def test_planted_ability_signal_scan():
    models = [ContrastModel(tau_slope=0.4, outcome="continuous") if i % 5 == 0
              else ContrastModel(outcome="continuous") for i in range(50)]
    table = _scan(models, 1000).table("linear")
    assert table["stud_ability"][REWARD] >= 0.15
    others = max(cells[REWARD] for row, cells in table.items() if row != "stud_ability")
    assert others <= 0.05


def test_scan_fdr_under_global_null():
    # per BH family (linear, each forest test, policy): mean false discovery proportion
    cfg = ScanConfig(forest=ForestConfig(n_trees=10))
    fdp = {}
    for seed in range(500):
        report = _scan([ContrastModel()] * 10, 400, seed0=seed * 10, config=cfg)
        hits = {}
        for r in report.results:
            for key, flag in r.detected.items():
                family = "linear" if key.startswith("linear:") else key
                hits[family] = hits.get(family, 0) + flag
        for family, h in hits.items():
            fdp.setdefault(family, []).append(float(h > 0))
    for family, vals in fdp.items():
        assert np.mean(vals) <= 0.23, family


def test_hte_scan_on_simulated_logs(small_world, small_dataset):
    items = small_world.items
    contrasts = mab_contrasts(train_mab_policy(small_dataset, items))[:2]
    bogus = (contrasts[0][0], contrasts[0][1], "nope")
    report = hte_scan(small_dataset, contrasts + [bogus], items, config=ScanConfig(forest=ForestConfig(n_trees=5)))
    assert len(report.results) == 3 * 4
    failed = [r for r in report.results if not r.ok]
    assert len(failed) == 4 and all("UnknownAction" in r.error for r in failed)
    lines = report.to_csv("forest").splitlines()
    assert lines[0] == "test,Reward,Reatt. Cor.,Stud. Abil.,Sess. Succ."
    assert [ln.split(",")[0] for ln in lines[1:]] == ["calibration", "rate"]
    assert len(report.to_csv("linear").splitlines()) == 1 + len(FEATURES)
    assert json.loads(report.to_json())["contrasts"][0]["question_id"] == contrasts[0][0]


def test_mab_contrasts_pair_alternatives_with_chosen_action(small_world, small_dataset):
    policy = train_mab_policy(small_dataset, small_world.items)
    for q, treat, control in mab_contrasts(policy):
        assert treat != control
        assert control == policy.entries[q].action_id
        assert treat in small_dataset.action_sets[q]
