import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from assistopt.ingestion import PreprocessConfig, preprocess
from assistopt.mab import (
    GATED, NO_ASSIST, OBJ_FALLBACK, OBJ_REATTEMPT, OBJ_REWARD, RANDOM, EvalConfig, ExposureTable, UnknownQuestion,
    _gated_slots, _PairStats, anova_screen, argmax_policy, effects_to_csv, estimate_action_effects,
    offline_evaluate, pareto_sweep, report_to_csv, train_mab_policy, train_question_policy, tune_p_threshold,
)
from assistopt.outcomes import REATTEMPT, REWARD, RewardWeights

from conftest import flat_items, rec, session

GOLDEN = Path(__file__).parent / "golden"
OTHERS = 4
ITEMS = flat_items(["qf", "qg"] + [f"o{j}" for j in range(OTHERS)])


def make_dataset(spec, question="qf", min_samples=1):
    """Sessions with one assisted exposure of ``question`` followed by four
    other questions. ``spec`` maps action kind -> list of (reattempt, k):
    k of the other questions are answered correctly, which moves ability."""
    sessions, i = [], 0
    for action, rows in spec.items():
        for r, k in rows:
            sid = f"s{i:04d}"
            i += 1
            recs = [rec(1, question, False, f"{question}/{action}", bool(r), sid=sid)]
            recs += [rec(2 + j, f"o{j}", j < k, sid=sid) for j in range(OTHERS)]
            sessions.append(session(recs, sid=sid))
    return preprocess(sessions, PreprocessConfig(min_questions_per_session=1, min_samples_per_action=min_samples))


def _rewards(ds, action):
    ex = ExposureTable.build(ds, ITEMS)
    v = ex.column(REWARD)
    return v[ex.a == ex.action_ids.index(action)]


def test_effect_means_hand_count():
    ds = make_dataset({"A": [(1, 0), (1, 0), (0, 0), (1, 0)], "B": [(0, 0), (0, 0)]})
    s = estimate_action_effects("qf", ds, ITEMS)
    a = s.estimate("qf/A")
    assert a.n == 4 and a.means[REATTEMPT] == 0.75
    assert s.effect_gap[REATTEMPT] == pytest.approx(0.75)
    assert all(hw is None or hw >= 0 for e in s.estimates for hw in e.halfwidths.values())


def test_zero_exposure_action():
    ds = make_dataset({"A": [(1, 0), (0, 0)]})
    ds.action_sets["qf"] = ("qf/A", "qf/Z")
    s = estimate_action_effects("qf", ds, ITEMS)
    z = s.estimate("qf/Z")
    assert z.n == 0 and z.means[REATTEMPT] is None


def test_unknown_question():
    ds = make_dataset({"A": [(1, 0), (0, 0)]})
    with pytest.raises(UnknownQuestion):
        estimate_action_effects("nope", ds, ITEMS)


def test_anova_identical_groups():
    rows = [(1, 0), (0, 1), (1, 2), (0, 3)]
    ds = make_dataset({"A": rows, "B": rows})
    r = anova_screen("qf", ds, REATTEMPT, ITEMS)
    assert r.statistic == 0 and r.p_value == 1.0


def test_anova_detects_separated_arms():
    rng = np.random.default_rng(3)
    hits = 0
    for _ in range(20):
        spec = {"A": [(int(u < 0.3), 0) for u in rng.random(500)], "B": [(int(u < 0.6), 0) for u in rng.random(500)]}
        hits += anova_screen("qf", make_dataset(spec), REATTEMPT, ITEMS).p_value < 0.05
    assert hits == 20


def test_single_action_question():
    ds = make_dataset({"A": [(1, 0), (0, 2), (1, 1)]})
    assert train_question_policy("qf", ds, ITEMS) == ("qf/A", OBJ_REWARD)


# Reattempt favours A (0.60 vs 0.30), reward favours B by a margin the Welch test cannot confirm.
GATE_A = [(1, 0)] * 12 + [(0, 2)] * 8
GATE_B = [(1, 0)] * 6 + [(0, 2)] * 4 + [(0, 3)] * 6 + [(0, 0)] * 4


def test_gate_keeps_reattempt_argmax_when_not_significant():
    ds = make_dataset({"A": GATE_A, "B": GATE_B})
    rb, ra = _rewards(ds, "qf/B"), _rewards(ds, "qf/A")
    assert rb.mean() > ra.mean()
    p = stats.ttest_ind(rb, ra, equal_var=False, alternative="greater").pvalue
    assert p == pytest.approx(0.4040, abs=1e-3)
    assert train_question_policy("qf", ds, ITEMS, p_threshold=0.05) == ("qf/A", OBJ_REATTEMPT)
    # a looser gate lets the reward argmax through
    assert train_question_policy("qf", ds, ITEMS, p_threshold=0.5) == ("qf/B", OBJ_REWARD)


def test_gate_takes_reward_argmax_when_separated():
    rng = np.random.default_rng(0)
    a = [(1, int(k)) for k in rng.integers(0, 2, 200)]
    b = [(int(u < 0.9), 4) for u in rng.random(200)]
    ds = make_dataset({"A": a, "B": b})
    rb, ra = _rewards(ds, "qf/B"), _rewards(ds, "qf/A")
    pooled_sd = math.sqrt((rb.var(ddof=1) + ra.var(ddof=1)) / 2)
    assert (rb.mean() - ra.mean()) / pooled_sd >= 5
    assert train_question_policy("qf", ds, ITEMS) == ("qf/B", OBJ_REWARD)


def test_argmax_tie_goes_to_smallest_id():
    rows = [(1, 1), (0, 1)]
    ds = make_dataset({"B": rows, "A": rows})
    assert train_question_policy("qf", ds, ITEMS) == ("qf/A", OBJ_REWARD)


def test_empty_dataset_policy():
    ds = preprocess([], PreprocessConfig())
    pol = train_mab_policy(ds, ITEMS)
    assert pol.trained == {}


def test_sample_rule_fallback():
    ds = make_dataset({"A": [(1, 0)] * 120, "B": [(0, 0)] * 80}, min_samples=100)
    pol = train_mab_policy(ds, ITEMS)
    assert pol.entries["qf"].objective == OBJ_FALLBACK and pol.entries["qf"].action_id is None
    assert pol.entries["qf"].action_ids == ("qf/A", "qf/B")


def test_policy_actions_within_action_sets(small_world, small_dataset):
    pol = train_mab_policy(small_dataset, small_world.items)
    assert pol.trained
    for qid, e in pol.entries.items():
        assert e.action_id is None or e.action_id in small_dataset.action_sets[qid]
    again = train_mab_policy(small_dataset, small_world.items)
    assert again.entries == pol.entries


@settings(max_examples=50)
@given(st.integers(0, 10_000), st.floats(0.1, 50))
def test_gate_decision_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    shape = (6, 4)
    n = rng.integers(2, 30, shape).astype(float)
    mean = rng.normal(size=shape)
    var = rng.uniform(0.1, 2, shape)
    s = mean * n
    ss = var * (n - 1) + s * s / n
    reward = _PairStats(n, s, ss)
    reatt = _PairStats(n, rng.normal(size=shape) * n, ss)
    valid = np.ones(shape, dtype=bool)
    base = _gated_slots(reward, reatt, valid, 0.05)[0]
    scaled = _gated_slots(_PairStats(n, s * scale, ss * scale * scale), reatt, valid, 0.05)[0]
    assert np.array_equal(base, scaled)


def test_folds_must_exceed_one():
    with pytest.raises(ValueError):
        EvalConfig(folds=1)


def test_random_policy_equals_exposure_mean(small_world, small_dataset):
    rep = offline_evaluate(small_dataset, small_world.items, repeats=3, folds=5)
    ex = ExposureTable.build(small_dataset, small_world.items)
    elig = ex.eligible[ex.q]
    for m in (REATTEMPT, REWARD):
        v = ex.column(m)[elig]
        assert rep.mean[RANDOM][m] == pytest.approx(np.nanmean(v), abs=1e-12)
    assert {RANDOM, NO_ASSIST, GATED} <= set(rep.policies)
    assert all(h >= 0 for p in rep.policies for h in rep.halfwidth[p].values() if not math.isnan(h))


def test_trained_policy_not_worse_than_random(small_world, small_dataset):
    rep = offline_evaluate(small_dataset, small_world.items, repeats=5, folds=5)
    for m in (REATTEMPT, REWARD):
        v, hw = rep.value(argmax_policy(m), m)
        assert v >= rep.mean[RANDOM][m] - hw


def test_evaluation_deterministic(small_world, small_dataset):
    a = offline_evaluate(small_dataset, small_world.items, repeats=2, folds=3, seed=4)
    b = offline_evaluate(small_dataset, small_world.items, repeats=2, folds=3, seed=4)
    assert report_to_csv(a) == report_to_csv(b)


def test_pareto_consistency(small_world, small_dataset):
    assert pareto_sweep(small_dataset, small_world.items, []) == []
    pols = (RANDOM, NO_ASSIST, argmax_policy(REWARD))
    (w, rep), = pareto_sweep(small_dataset, small_world.items, [0.4], policies=pols, repeats=2)
    direct = offline_evaluate(small_dataset, small_world.items, RewardWeights(0.4), pols, repeats=2)
    assert w == 0.4 and report_to_csv(rep) == report_to_csv(direct)
    with pytest.raises(ValueError):
        pareto_sweep(small_dataset, small_world.items, [1.5])


def test_tune_p_threshold_rules(small_world, small_dataset):
    assert tune_p_threshold(small_dataset, small_world.items, grid=[0.07], repeats=1) == 0.07
    with pytest.raises(ValueError):
        tune_p_threshold(small_dataset, small_world.items, grid=[])
    # reward and reattempt argmax coincide here, so every threshold ties
    ds = make_dataset({"A": [(1, 2)] * 30, "B": [(0, 1)] * 30}, min_samples=10)
    assert tune_p_threshold(ds, ITEMS, repeats=2) == 0.01


def test_effects_csv_golden():
    ds = make_dataset({"A": GATE_A, "B": GATE_B})
    text = effects_to_csv([estimate_action_effects("qf", ds, ITEMS)])
    header = text.splitlines()[0].split(",")
    assert header[:5] == ["question_id", "action_id", "n", "reward_mean", "reward_halfwidth"]
    assert text == (GOLDEN / "effects_fixture.csv").read_text()
