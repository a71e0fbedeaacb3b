"""Learning-outcome measures for one assistance exposure and the combined
reward that mixes reattempt correctness with the final ability estimate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from .domain import IrtItem, PracticeSession, QuestionId
from .irt import estimate_ability, estimate_ability_batch
from .records import NO_ACTION, RecordTable, segment_sum, suffix_sum_after

RESPONSE_TIME_CAP_S = 60.0
SUCCESS_TARGET = 10

REATTEMPT = "reattempt_correct"
ABILITY = "student_ability"
SUCCESS = "session_success"
FUTURE_RATE = "future_correct_rate"
NEXT_CORRECT = "next_question_correct"
FUTURE_RT = "future_response_time"
CONFIDENCE = "confidence"
REWARD = "reward"

MEASURES = (REATTEMPT, ABILITY, SUCCESS, FUTURE_RATE, NEXT_CORRECT, FUTURE_RT, CONFIDENCE)
BINARY_MEASURES = frozenset({REATTEMPT, SUCCESS, NEXT_CORRECT})


class FocalNotAssisted(ValueError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    """Weight ``w1`` on reattempt correctness; ``1 - w1`` goes to student ability."""

    w1: float = 0.4

    def __post_init__(self):
        if not 0.0 <= self.w1 <= 1.0:
            raise ValueError(f"w1 must lie in [0, 1], got {self.w1}")


@dataclass(frozen=True)
class OutcomeVector:
    reattempt_correct: int
    student_ability: float
    session_success: int
    future_correct_rate: Optional[float]
    next_question_correct: Optional[int]
    future_response_time: Optional[float]
    confidence: Optional[int]
    reward: float

    def get(self, measure: str) -> Optional[float]:
        return getattr(self, measure)


def combined_reward(reattempt, ability, weights: RewardWeights = RewardWeights()):
    """w1 * reattempt + (1 - w1) * ability; works elementwise on arrays."""
    return weights.w1 * reattempt + (1.0 - weights.w1) * ability


def compute_outcomes(
    session: PracticeSession,
    focal: int,
    items: Mapping[QuestionId, IrtItem],
    weights: RewardWeights = RewardWeights(),
    count_reattempts_toward_success: bool = True,
) -> OutcomeVector:
    """Outcome measures for the exposure at record position ``focal``."""
    try:
        rec = session.record_at(focal)
    except KeyError:
        raise FocalNotAssisted(f"no record at position {focal}") from None
    if rec.shown_action_id is None:
        raise FocalNotAssisted(f"record at position {focal} received no assistance")

    ability = estimate_ability([(items[r.question_id], r.first_correct) for r in session.records]).theta
    if count_reattempts_toward_success:
        n_correct = sum(1 for r in session.records if r.eventually_correct)
    else:
        n_correct = sum(1 for r in session.records if r.first_correct)
    later = [r for r in session.records if r.position > focal]
    if later:
        future_rate = sum(r.first_correct for r in later) / len(later)
        next_correct = int(later[0].first_correct)
        future_rt = sum(min(r.first_response_time_s, RESPONSE_TIME_CAP_S) for r in later) / len(later)
    else:
        future_rate = next_correct = future_rt = None
    reattempt = int(bool(rec.second_correct))
    return OutcomeVector(
        reattempt_correct=reattempt,
        student_ability=ability,
        session_success=int(n_correct >= SUCCESS_TARGET),
        future_correct_rate=future_rate,
        next_question_correct=next_correct,
        future_response_time=future_rt,
        confidence=session.confidence_end,
        reward=combined_reward(reattempt, ability, weights),
    )


def session_abilities(table: RecordTable, items: Mapping[QuestionId, IrtItem]) -> np.ndarray:
    """End-of-session ability estimate (first attempts only) for every session."""
    missing = [q for q in table.question_ids if q not in items]
    if missing:
        raise KeyError(f"no item parameters for question {missing[0]!r}")
    qa = np.array([items[q].a for q in table.question_ids] or [1.0])
    qb = np.array([items[q].b for q in table.question_ids] or [0.0])
    qc = np.array([items[q].c for q in table.question_ids] or [0.0])
    n = table.n_sessions
    lengths = table.session_length
    width = int(lengths.max()) if n else 0
    out = np.zeros(n)
    if n == 0 or width == 0:
        return out
    slot = np.arange(table.n_records) - table.offsets[table.session]
    shape = (n, width)
    a = np.ones(shape)
    b = np.zeros(shape)
    c = np.zeros(shape)
    y = np.zeros(shape)
    mask = np.zeros(shape, dtype=bool)
    a[table.session, slot] = qa[table.question]
    b[table.session, slot] = qb[table.question]
    c[table.session, slot] = qc[table.question]
    y[table.session, slot] = table.first_correct
    mask[table.session, slot] = True
    # chunk to bound memory for large tables
    step = 4096
    for lo in range(0, n, step):
        theta, _ = estimate_ability_batch(a[lo:lo + step], b[lo:lo + step], c[lo:lo + step],
                                          y[lo:lo + step], mask[lo:lo + step])
        out[lo:lo + step] = theta
    return out


def outcome_columns(
    table: RecordTable,
    rows: np.ndarray,
    items: Mapping[QuestionId, IrtItem],
    count_reattempts_toward_success: bool = True,
    abilities: Optional[np.ndarray] = None,
) -> Dict[str, np.ndarray]:
    """Vectorized ``compute_outcomes`` for the records at ``rows`` (NaN = missing)."""
    rows = np.asarray(rows, dtype=np.int64)
    if np.any(table.action[rows] == NO_ACTION):
        raise FocalNotAssisted("outcome rows must be assisted exposures")
    if abilities is None:
        abilities = session_abilities(table, items)
    sess = table.session
    correct_any = table.first_correct | (table.second_correct == 1)
    counted = correct_any if count_reattempts_toward_success else table.first_correct
    success = (segment_sum(counted.astype(float), table.offsets) >= SUCCESS_TARGET).astype(float)
    n_after = suffix_sum_after(np.ones(table.n_records), sess, table.offsets)
    corr_after = suffix_sum_after(table.first_correct.astype(float), sess, table.offsets)
    rt_after = suffix_sum_after(np.minimum(table.first_rt, RESPONSE_TIME_CAP_S), sess, table.offsets)
    nxt = table.next_in_session()

    s = sess[rows]
    na = n_after[rows]
    with np.errstate(invalid="ignore", divide="ignore"):
        future_rate = np.where(na > 0, corr_after[rows] / na, np.nan)
        future_rt = np.where(na > 0, rt_after[rows] / na, np.nan)
    nr = nxt[rows]
    next_correct = np.where(nr >= 0, table.first_correct[np.maximum(nr, 0)].astype(float), np.nan)
    conf = table.confidence_end[s].astype(float)
    return {
        REATTEMPT: (table.second_correct[rows] == 1).astype(float),
        ABILITY: abilities[s],
        SUCCESS: success[s],
        FUTURE_RATE: future_rate,
        NEXT_CORRECT: next_correct,
        FUTURE_RT: future_rt,
        CONFIDENCE: np.where(conf > 0, conf, np.nan),
    }
