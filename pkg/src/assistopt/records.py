"""Columnar view of practice sessions.

Every heavy computation (filters, outcome measures, context features,
cross-validation) runs on these arrays; the object types in ``domain`` are
the interchange format at module boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .domain import InteractionRecord, PracticeSession

NO_ACTION = -1


def _codes(values: Sequence[str], vocab: Dict[str, int], names: List[str]) -> np.ndarray:
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        code = vocab.get(v)
        if code is None:
            code = vocab[v] = len(names)
            names.append(v)
        out[i] = code
    return out


@dataclass
class RecordTable:
    # per record, grouped by session and ordered by position inside a session
    session: np.ndarray
    question: np.ndarray
    position: np.ndarray
    hint: np.ndarray
    first_correct: np.ndarray
    first_rt: np.ndarray
    action: np.ndarray
    second_correct: np.ndarray  # -1 absent, else 0/1
    second_rt: np.ndarray
    assist_view: np.ndarray
    ts: np.ndarray
    # per session
    session_ids: List[str]
    student: np.ndarray
    concept: np.ndarray
    confidence_end: np.ndarray  # 0 when absent
    assigned: np.ndarray
    weekend: np.ndarray
    attempt_index: np.ndarray
    offsets: np.ndarray
    # vocabularies
    question_ids: List[str] = field(default_factory=list)
    action_ids: List[str] = field(default_factory=list)
    student_ids: List[str] = field(default_factory=list)
    concept_ids: List[str] = field(default_factory=list)

    @property
    def n_records(self) -> int:
        return int(self.session.size)

    @property
    def n_sessions(self) -> int:
        return len(self.session_ids)

    @property
    def session_length(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def assisted(self) -> np.ndarray:
        return self.action != NO_ACTION

    @classmethod
    def from_sessions(cls, sessions: Sequence[PracticeSession]) -> "RecordTable":
        qv, av, sv, cv = {}, {}, {}, {}
        qn, an, sn, cn = [], [], [], []
        recs = [r for s in sessions for r in s.records]
        lengths = np.array([len(s.records) for s in sessions], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        action = np.full(len(recs), NO_ACTION, dtype=np.int64)
        shown = [i for i, r in enumerate(recs) if r.shown_action_id is not None]
        if shown:
            action[shown] = _codes([recs[i].shown_action_id for i in shown], av, an)

        def col(getter, dtype):
            return np.fromiter((getter(r) for r in recs), dtype=dtype, count=len(recs))

        return cls(
            session=np.repeat(np.arange(len(sessions), dtype=np.int64), lengths),
            question=_codes([r.question_id for r in recs], qv, qn),
            position=col(lambda r: r.position, np.int64),
            hint=col(lambda r: r.hint_requested_before_first, bool),
            first_correct=col(lambda r: r.first_correct, bool),
            first_rt=col(lambda r: r.first_response_time_s, float),
            action=action,
            second_correct=col(lambda r: -1 if r.second_correct is None else int(r.second_correct), np.int8),
            second_rt=col(lambda r: np.nan if r.second_response_time_s is None else r.second_response_time_s, float),
            assist_view=col(lambda r: np.nan if r.assist_view_time_s is None else r.assist_view_time_s, float),
            ts=col(lambda r: r.timestamp, float),
            session_ids=[s.session_id for s in sessions],
            student=_codes([s.student_id for s in sessions], sv, sn),
            concept=_codes([s.concept_id for s in sessions], cv, cn),
            confidence_end=np.array([s.confidence_end or 0 for s in sessions], dtype=np.int8),
            assigned=np.array([s.teacher_assigned for s in sessions], dtype=bool),
            weekend=np.array([s.started_on_weekend for s in sessions], dtype=bool),
            attempt_index=np.array([s.attempt_index_for_concept for s in sessions], dtype=np.int64),
            offsets=offsets,
            question_ids=qn,
            action_ids=an,
            student_ids=sn,
            concept_ids=cn,
        )

    def session_object(self, k: int) -> PracticeSession:
        lo, hi = int(self.offsets[k]), int(self.offsets[k + 1])
        sid = self.session_ids[k]
        stud = self.student_ids[self.student[k]]
        recs = []
        for i in range(lo, hi):
            sc = int(self.second_correct[i])
            act = int(self.action[i])
            recs.append(
                InteractionRecord(
                    session_id=sid,
                    student_id=stud,
                    question_id=self.question_ids[self.question[i]],
                    position=int(self.position[i]),
                    hint_requested_before_first=bool(self.hint[i]),
                    first_correct=bool(self.first_correct[i]),
                    first_response_time_s=float(self.first_rt[i]),
                    shown_action_id=None if act == NO_ACTION else self.action_ids[act],
                    second_correct=None if sc < 0 else bool(sc),
                    second_response_time_s=None if np.isnan(self.second_rt[i]) else float(self.second_rt[i]),
                    assist_view_time_s=None if np.isnan(self.assist_view[i]) else float(self.assist_view[i]),
                    timestamp=float(self.ts[i]),
                )
            )
        conf = int(self.confidence_end[k])
        return PracticeSession(
            session_id=sid,
            student_id=stud,
            concept_id=self.concept_ids[self.concept[k]],
            records=tuple(recs),
            confidence_end=conf or None,
            teacher_assigned=bool(self.assigned[k]),
            started_on_weekend=bool(self.weekend[k]),
            attempt_index_for_concept=int(self.attempt_index[k]),
        )

    def to_sessions(self) -> List[PracticeSession]:
        return [self.session_object(k) for k in range(self.n_sessions)]

    def select_sessions(self, keep: np.ndarray) -> "RecordTable":
        """Sub-table with the sessions where ``keep`` is true; vocabularies are shared."""
        keep = np.asarray(keep, dtype=bool)
        kept = np.nonzero(keep)[0]
        row_keep = keep[self.session]
        lengths = self.session_length[kept]
        remap = np.full(self.n_sessions, -1, dtype=np.int64)
        remap[kept] = np.arange(kept.size)
        return RecordTable(
            session=remap[self.session[row_keep]],
            question=self.question[row_keep],
            position=self.position[row_keep],
            hint=self.hint[row_keep],
            first_correct=self.first_correct[row_keep],
            first_rt=self.first_rt[row_keep],
            action=self.action[row_keep],
            second_correct=self.second_correct[row_keep],
            second_rt=self.second_rt[row_keep],
            assist_view=self.assist_view[row_keep],
            ts=self.ts[row_keep],
            session_ids=[self.session_ids[k] for k in kept],
            student=self.student[kept],
            concept=self.concept[kept],
            confidence_end=self.confidence_end[kept],
            assigned=self.assigned[kept],
            weekend=self.weekend[kept],
            attempt_index=self.attempt_index[kept],
            offsets=np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64),
            question_ids=self.question_ids,
            action_ids=self.action_ids,
            student_ids=self.student_ids,
            concept_ids=self.concept_ids,
        )

    def next_in_session(self) -> np.ndarray:
        """Row index of the following record in the same session, or -1."""
        nxt = np.arange(1, self.n_records + 1)
        last = self.offsets[1:] - 1
        nxt[last[last >= 0]] = -1
        if self.n_records:
            nxt[self.n_records - 1] = -1
        return nxt

    def rows_by_key(self) -> Dict[tuple, int]:
        return {
            (self.session_ids[int(self.session[i])], int(self.position[i])): i
            for i in range(self.n_records)
        }


def segment_sum(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Sum of ``values`` inside each [offsets[k], offsets[k+1]) segment."""
    c = np.concatenate([[0.0], np.cumsum(values, dtype=float)])
    return c[offsets[1:]] - c[offsets[:-1]]


def suffix_sum_after(values: np.ndarray, session: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """For each row, the sum of ``values`` over later rows of the same session."""
    c = np.concatenate([[0.0], np.cumsum(values, dtype=float)])
    end = offsets[1:][session]
    row = np.arange(values.size)
    return c[end] - c[row + 1]


def prefix_sum_before(values: np.ndarray, session: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """For each row, the sum of ``values`` over earlier rows of the same session."""
    c = np.concatenate([[0.0], np.cumsum(values, dtype=float)])
    start = offsets[:-1][session]
    row = np.arange(values.size)
    return c[row] - c[start]
