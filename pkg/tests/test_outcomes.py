import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from assistopt.outcomes import (
    ABILITY, FUTURE_RATE, FUTURE_RT, MEASURES, NEXT_CORRECT, SUCCESS, FocalNotAssisted, RewardWeights,
    combined_reward, compute_outcomes, outcome_columns,
)
from assistopt.records import NO_ACTION, RecordTable

from conftest import flat_items, rec, session

# Per-action rows of the worked single-question example: (reward, reattempt, ability).
WORKED_ROWS = {
    "no assist.": (0.025, 0.313, -0.167),
    "hint 1": (0.394, 0.693, 0.195),
    "hint 2": (-0.029, 0.255, -0.219),
    "paragraph": (0.363, 0.774, 0.088),
    "vocabulary": (-0.033, 0.259, -0.228),
}


@pytest.mark.parametrize("label", sorted(WORKED_ROWS))
def test_reward_identity_on_worked_rows(label):
    reward, reatt, abil = WORKED_ROWS[label]
    assert combined_reward(reatt, abil, RewardWeights(0.4)) == pytest.approx(reward, abs=1e-3)


def test_reward_examples():
    assert combined_reward(0.313, -0.167) == pytest.approx(0.025, abs=5e-4)
    assert combined_reward(0.693, 0.195) == pytest.approx(0.394, abs=5e-4)
    for w in (0.0, 0.25, 1.0):
        assert combined_reward(1, 0, RewardWeights(w)) == w


def test_weights_bounds():
    with pytest.raises(ValueError):
        RewardWeights(1.5)


@given(st.lists(st.tuples(st.integers(0, 1), st.floats(-4, 4)), min_size=1, max_size=40), st.floats(0, 1))
def test_reward_linearity(samples, w1):
    r = np.array([s[0] for s in samples], dtype=float)
    a = np.array([s[1] for s in samples])
    wt = RewardWeights(w1)
    assert np.mean(combined_reward(r, a, wt)) == pytest.approx(combined_reward(r.mean(), a.mean(), wt), abs=1e-12)


@given(st.floats(0.01, 0.99), st.floats(0, 1), st.floats(-3, 3), st.floats(0.01, 1))
def test_reward_monotone(w1, r, a, d):
    wt = RewardWeights(w1)
    assert combined_reward(r + d, a, wt) > combined_reward(r, a, wt)
    assert combined_reward(r, a + d, wt) > combined_reward(r, a, wt)


def _twelve():
    # focal at position 3; positions 4..12 hold 6 correct first attempts out of 9
    future = [True, False, True, True, False, True, False, True, True]
    records = [rec(1, "q1", True), rec(2, "q2", True), rec(3, "q3", False, "q3/hint_1", True)]
    records += [rec(4 + i, f"q{4 + i}", ok, rt=90.0 if i == 0 else 30.0) for i, ok in enumerate(future)]
    return session(records, confidence=2)


def test_future_rate_fixture():
    s = _twelve()
    items = flat_items([r.question_id for r in s.records])
    out = compute_outcomes(s, 3, items)
    assert out.future_correct_rate == pytest.approx(6 / 9, abs=1e-12)
    assert out.next_question_correct == 1
    assert out.future_response_time == pytest.approx((60.0 + 8 * 30.0) / 9)
    assert out.reattempt_correct == 1
    assert out.confidence == 2
    assert out.reward == pytest.approx(0.4 + 0.6 * out.student_ability)


def test_focal_last_has_missing_future():
    s = session([rec(1, "q1", True), rec(2, "q2", False, "q2/hint_1", False)])
    out = compute_outcomes(s, 2, flat_items(["q1", "q2"]))
    assert out.future_correct_rate is None and out.next_question_correct is None
    assert out.future_response_time is None


def test_success_counts_reattempt():
    records = [rec(k, f"q{k}", True) for k in range(1, 10)] + [rec(10, "q10", False, "q10/hint_1", True)]
    out = compute_outcomes(session(records), 10, flat_items([f"q{k}" for k in range(1, 11)]))
    assert out.session_success == 1
    out = compute_outcomes(session(records), 10, flat_items([f"q{k}" for k in range(1, 11)]),
                           count_reattempts_toward_success=False)
    assert out.session_success == 0


@given(st.permutations(range(12)))
def test_success_invariant_to_which_are_correct(order):
    correct = set(order[:10])
    records = [rec(k + 1, f"q{k}", k in correct, None if k in correct else f"q{k}/hint_1",
                   None if k in correct else False) for k in range(12)]
    focal = next(r.position for r in records if r.shown_action_id)
    out = compute_outcomes(session(records), focal, flat_items([f"q{k}" for k in range(12)]))
    assert out.session_success == 1


def test_focal_not_assisted():
    s = session([rec(1, "q1", True)])
    with pytest.raises(FocalNotAssisted):
        compute_outcomes(s, 1, flat_items(["q1"]))
    with pytest.raises(FocalNotAssisted):
        compute_outcomes(s, 5, flat_items(["q1"]))


def test_vectorized_matches_scalar(small_world, small_sim):
    sessions = small_sim.sessions()[:300]
    table = RecordTable.from_sessions(sessions)
    items = small_world.items
    rows = np.flatnonzero(table.action != NO_ACTION)
    cols = outcome_columns(table, rows, items)
    for k, row in enumerate(rows):
        s = sessions[table.session[row]]
        ref = compute_outcomes(s, int(table.position[row]), items)
        for m in MEASURES:
            got = cols[m][k]
            want = ref.get(m)
            if want is None:
                assert np.isnan(got), m
            else:
                assert got == pytest.approx(want, abs=1e-9), m
    assert rows.size > 50
    assert np.all(cols[FUTURE_RT][~np.isnan(cols[FUTURE_RT])] <= 60.0)
    assert set(np.unique(cols[SUCCESS])) <= {0.0, 1.0}
    assert np.isnan(cols[NEXT_CORRECT]).sum() == np.isnan(cols[FUTURE_RATE]).sum()
    assert np.all(np.abs(cols[ABILITY]) <= 4)
