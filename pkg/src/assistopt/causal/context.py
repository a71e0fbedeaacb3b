"""Student context features: within-session state at the focal first attempt,
session attributes, and aggregates over the student's earlier sessions."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..domain import IrtItem, PracticeSession, QuestionId
from ..irt import refine_ability_batch, running_ability
from ..outcomes import SUCCESS_TARGET
from ..records import RecordTable, prefix_sum_before

FEATURES: Tuple[str, ...] = (
    "stud_ability", "resp_time", "prev_resp_cor", "quest_num", "cor_rate",
    "assigned", "confidence", "weekend",
    "num_sess_total", "num_quest_total", "num_assist_total",
    "avg_quest_num", "avg_sess_succ",
    "avg_1st_cor", "avg_2nd_cor",
    "avg_1st_assists", "avg_2nd_assists",
    "med_1st_resp_time", "med_2nd_resp_time", "med_assist_time",
)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURES)}
N_FEATURES = len(FEATURES)
HISTORY_FEATURES = FEATURES[8:]


class FeatureMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ContextVector:
    """Feature values with a presence mask; absent features carry value 0."""

    values: Tuple[float, ...]
    present: Tuple[bool, ...]

    def __post_init__(self):
        if len(self.values) != N_FEATURES or len(self.present) != N_FEATURES:
            raise FeatureMismatch(f"expected {N_FEATURES} features")

    def __getitem__(self, name: str) -> float:
        return self.values[FEATURE_INDEX[name]]

    def is_present(self, name: str) -> bool:
        return self.present[FEATURE_INDEX[name]]

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {n: (v if p else None) for n, v, p in zip(FEATURES, self.values, self.present)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Optional[float]]) -> "ContextVector":
        unknown = set(data) - set(FEATURES)
        if unknown:
            raise FeatureMismatch(f"unknown feature {sorted(unknown)[0]!r}")
        vals, pres = [], []
        for name in FEATURES:
            v = data.get(name)
            pres.append(v is not None)
            vals.append(float(v) if v is not None else 0.0)
        return cls(tuple(vals), tuple(pres))

    @classmethod
    def from_arrays(cls, values: np.ndarray, present: np.ndarray) -> "ContextVector":
        present = np.asarray(present, dtype=bool)
        values = np.where(present, values, 0.0)
        return cls(tuple(float(v) for v in values), tuple(bool(p) for p in present))


class StudentHistory:
    """Running aggregates over a student's completed sessions."""

    __slots__ = ("n_sess", "n_quest", "n_assist", "n_success", "n_first_correct",
                 "n_second", "n_second_correct", "n_hint", "first_rts", "second_rts",
                 "assist_times", "last_confidence")

    def __init__(self):
        self.n_sess = 0
        self.n_quest = 0
        self.n_assist = 0
        self.n_success = 0
        self.n_first_correct = 0
        self.n_second = 0
        self.n_second_correct = 0
        self.n_hint = 0
        self.first_rts: List[float] = []
        self.second_rts: List[float] = []
        self.assist_times: List[float] = []
        self.last_confidence = 0

    def add_arrays(self, first_correct, second_correct, hint, assisted, first_rt, second_rt,
                   assist_view, confidence_end: int):
        n = len(first_correct)
        eventually = np.asarray(first_correct, bool) | (np.asarray(second_correct) == 1)
        self.n_sess += 1
        self.n_quest += n
        self.n_assist += int(np.sum(assisted))
        self.n_success += int(eventually.sum() >= SUCCESS_TARGET)
        self.n_first_correct += int(np.sum(first_correct))
        sc = np.asarray(second_correct)
        self.n_second += int(np.sum(sc >= 0))
        self.n_second_correct += int(np.sum(sc == 1))
        self.n_hint += int(np.sum(hint))
        self.first_rts.extend(float(v) for v in first_rt)
        self.second_rts.extend(float(v) for v in second_rt if not np.isnan(v))
        self.assist_times.extend(float(v) for v in assist_view if not np.isnan(v))
        self.last_confidence = int(confidence_end)

    def add_session(self, session: PracticeSession):
        recs = session.records
        self.add_arrays(
            [r.first_correct for r in recs],
            [-1 if r.second_correct is None else int(r.second_correct) for r in recs],
            [r.hint_requested_before_first for r in recs],
            [r.shown_action_id is not None for r in recs],
            [r.first_response_time_s for r in recs],
            [np.nan if r.second_response_time_s is None else r.second_response_time_s for r in recs],
            [np.nan if r.assist_view_time_s is None else r.assist_view_time_s for r in recs],
            session.confidence_end or 0,
        )

    def features(self) -> Tuple[List[float], List[bool]]:
        """Values/presence for confidence and the twelve history features."""
        vals: List[float] = []
        pres: List[bool] = []

        def put(v, ok):
            vals.append(float(v) if ok else 0.0)
            pres.append(bool(ok))

        put(self.last_confidence, self.n_sess > 0 and self.last_confidence > 0)
        has = self.n_sess > 0
        put(self.n_sess, has)
        put(self.n_quest, has)
        put(self.n_assist, has)
        put(self.n_quest / self.n_sess if has else 0.0, has)
        put(self.n_success / self.n_sess if has else 0.0, has)
        hq = self.n_quest > 0
        put(self.n_first_correct / self.n_quest if hq else 0.0, hq)
        put(self.n_second_correct / self.n_second if self.n_second else 0.0, self.n_second > 0)
        put(self.n_hint / self.n_quest if hq else 0.0, hq)
        put(self.n_assist / self.n_quest if hq else 0.0, hq)
        put(np.median(self.first_rts) if self.first_rts else 0.0, bool(self.first_rts))
        put(np.median(self.second_rts) if self.second_rts else 0.0, bool(self.second_rts))
        put(np.median(self.assist_times) if self.assist_times else 0.0, bool(self.assist_times))
        return vals, pres


_CONF = FEATURE_INDEX["confidence"]
_HIST_START = FEATURE_INDEX["num_sess_total"]


def _place_history(values, present, hist_vals, hist_pres):
    values[_CONF] = hist_vals[0]
    present[_CONF] = hist_pres[0]
    values[_HIST_START:] = hist_vals[1:]
    present[_HIST_START:] = hist_pres[1:]


def compute_context(
    history: Iterable[PracticeSession],
    session: PracticeSession,
    focal: int,
    items: Mapping[QuestionId, IrtItem],
) -> ContextVector:
    """Context at the first attempt of the record at position ``focal``.

    Within-session features use only records strictly before the focal one;
    ``history`` may hold any sessions; only the same student's sessions
    that started strictly earlier are used.
    """
    rec = session.record_at(focal)
    prior = [r for r in session.records if r.position < focal]
    values = np.zeros(N_FEATURES)
    present = np.zeros(N_FEATURES, dtype=bool)

    def put(name, v, ok=True):
        values[FEATURE_INDEX[name]] = v if ok else 0.0
        present[FEATURE_INDEX[name]] = ok

    theta = running_ability([(items[r.question_id], r.first_correct) for r in prior])[-1]
    put("stud_ability", theta)
    put("resp_time", rec.first_response_time_s)
    put("prev_resp_cor", float(prior[-1].first_correct) if prior else 0.0, bool(prior))
    put("quest_num", float(focal))
    put("cor_rate", sum(r.first_correct for r in prior) / len(prior) if prior else 0.0, bool(prior))
    put("assigned", float(session.teacher_assigned))
    put("weekend", float(session.started_on_weekend))

    hist = StudentHistory()
    earlier = [
        s for s in history
        if s.student_id == session.student_id and s.session_id != session.session_id
        and s.start_ts < session.start_ts
    ]
    for past in sorted(earlier, key=lambda s: (s.start_ts, s.session_id)):
        hist.add_session(past)
    hv, hp = hist.features()
    _place_history(values, present, hv, hp)
    return ContextVector.from_arrays(values, present)


def _session_start(table: RecordTable) -> np.ndarray:
    if table.n_records == 0:
        return np.zeros(table.n_sessions)
    first = np.minimum(table.offsets[:-1], table.n_records - 1)
    return np.where(table.session_length > 0, table.ts[first], 0.0)


def history_features_for(
    table: RecordTable, sessions: np.ndarray, history: RecordTable
) -> Tuple[np.ndarray, np.ndarray]:
    """Confidence and history features for ``table`` sessions (by index).

    Uses the ``history`` sessions of the same student that started strictly
    before the target session. Returns (values, present), each (n, 13).
    """
    start = _session_start(history)
    by_student: Dict[str, List[int]] = {}
    for k in range(history.n_sessions):
        by_student.setdefault(history.student_ids[history.student[k]], []).append(k)

    needed = {table.student_ids[table.student[s]] for s in sessions}
    # snapshots[stud][i]: features after the student's first i sessions
    snapshots: Dict[str, Tuple[List[float], list]] = {}
    for stud in needed:
        ks = sorted(by_student.get(stud, []), key=lambda k: (start[k], history.session_ids[k]))
        acc = StudentHistory()
        snaps = [acc.features()]
        for k in ks:
            lo, hi = history.offsets[k], history.offsets[k + 1]
            acc.add_arrays(
                history.first_correct[lo:hi], history.second_correct[lo:hi], history.hint[lo:hi],
                history.action[lo:hi] >= 0, history.first_rt[lo:hi], history.second_rt[lo:hi],
                history.assist_view[lo:hi], int(history.confidence_end[k]),
            )
            snaps.append(acc.features())
        snapshots[stud] = ([float(start[k]) for k in ks], snaps)

    t_start = _session_start(table)
    out_v = np.zeros((len(sessions), 13))
    out_p = np.zeros((len(sessions), 13), dtype=bool)
    for j, s in enumerate(sessions):
        starts, snaps = snapshots[table.student_ids[table.student[s]]]
        hv, hp = snaps[bisect.bisect_left(starts, t_start[s])]
        out_v[j], out_p[j] = hv, hp
    return out_v, out_p


def context_matrix(
    table: RecordTable,
    rows: np.ndarray,
    items: Mapping[QuestionId, IrtItem],
    history: Optional[RecordTable] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized ``compute_context`` for the records at ``rows``.

    Returns ``(values, present)`` shaped (len(rows), 20). ``history``
    defaults to ``table`` itself.
    """
    rows = np.asarray(rows, dtype=np.int64)
    n = rows.size
    values = np.zeros((n, N_FEATURES))
    present = np.zeros((n, N_FEATURES), dtype=bool)
    if n == 0:
        return values, present
    history = table if history is None else history
    sess = table.session[rows]
    start = table.offsets[:-1][sess]
    n_prior = rows - start

    uniq, inv = np.unique(sess, return_inverse=True)
    chain = running_abilities(table, uniq, items, upto=n_prior.max())
    theta = chain[inv, n_prior]

    has_prior = n_prior > 0
    fc = table.first_correct.astype(float)
    cor_before = prefix_sum_before(fc, table.session, table.offsets)[rows]
    prev = np.where(has_prior, fc[np.maximum(rows - 1, 0)], 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cor_rate = np.where(has_prior, cor_before / np.maximum(n_prior, 1), 0.0)

    def put(name, v, ok):
        j = FEATURE_INDEX[name]
        values[:, j] = np.where(ok, v, 0.0)
        present[:, j] = ok

    every = np.ones(n, dtype=bool)
    put("stud_ability", theta, every)
    put("resp_time", table.first_rt[rows], every)
    put("prev_resp_cor", prev, has_prior)
    put("quest_num", table.position[rows].astype(float), every)
    put("cor_rate", cor_rate, has_prior)
    put("assigned", table.assigned[sess].astype(float), every)
    put("weekend", table.weekend[sess].astype(float), every)

    hv, hp = history_features_for(table, uniq, history)
    values[:, _CONF] = hv[inv, 0]
    present[:, _CONF] = hp[inv, 0]
    values[:, _HIST_START:] = hv[inv, 1:]
    present[:, _HIST_START:] = hp[inv, 1:]
    return values, present


def running_abilities(
    table: RecordTable, sessions: np.ndarray, items: Mapping[QuestionId, IrtItem], upto: Optional[int] = None
) -> np.ndarray:
    """Sequential ability estimates for the given sessions, in lockstep.

    Row j of the result holds ``running_ability`` of session ``sessions[j]``
    for the first ``upto`` responses (later entries repeat the last value).
    """
    sessions = np.asarray(sessions, dtype=np.int64)
    lengths = table.session_length[sessions]
    upto = int(lengths.max()) if upto is None and sessions.size else int(upto or 0)
    out = np.zeros((sessions.size, upto + 1))
    if sessions.size == 0 or upto == 0:
        return out
    qa = np.array([items[q].a for q in table.question_ids])
    qb = np.array([items[q].b for q in table.question_ids])
    qc = np.array([items[q].c for q in table.question_ids])
    start = table.offsets[:-1][sessions]
    for k in range(1, upto + 1):
        live = np.nonzero(lengths >= k)[0]
        out[:, k] = out[:, k - 1]
        if live.size == 0:
            continue
        idx = start[live, None] + np.arange(k)[None, :]
        q = table.question[idx]
        th, _ = refine_ability_batch(out[live, k - 1], qa[q], qb[q], qc[q],
                                     table.first_correct[idx].astype(float), np.ones(idx.shape, dtype=bool))
        out[live, k] = th
    return out
