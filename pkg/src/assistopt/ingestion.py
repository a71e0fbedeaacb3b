"""Interaction-log parsing and the preprocessing filters that produce
analysis-ready datasets.

Log format: UTF-8 newline-delimited JSON, one interaction record per line.
Session-level fields are repeated on every line and must agree.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .domain import (
    InteractionRecord,
    PracticeSession,
    Question,
    QuestionId,
    SessionMismatch,
    ValidationError,
    validate_session,
)
from .records import RecordTable

LOG_KEYS = (
    "session_id", "student_id", "concept_id", "question_id", "position", "hint_requested",
    "first_correct", "first_rt_s", "shown_action_id", "second_correct", "second_rt_s",
    "assist_view_s", "ts", "attempt_index", "assigned", "weekend", "confidence_end",
)
_NULLABLE = {"shown_action_id", "second_correct", "second_rt_s", "assist_view_s", "confidence_end"}
_SESSION_KEYS = ("student_id", "concept_id", "attempt_index", "assigned", "weekend", "confidence_end")


class ParseError(ValueError):
    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"line {line_number}: {reason}")


def _expect(obj, key, kind, line_no):
    value = obj[key]
    if value is None:
        if key in _NULLABLE:
            return None
        raise ParseError(line_no, f"field {key!r} must not be null")
    if kind is bool:
        if not isinstance(value, bool):
            raise ParseError(line_no, f"field {key!r} must be a boolean")
    elif kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParseError(line_no, f"field {key!r} must be an integer")
    elif kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(line_no, f"field {key!r} must be a number")
        value = float(value)
    elif kind is str:
        if not isinstance(value, str):
            raise ParseError(line_no, f"field {key!r} must be a string")
    return value


_TYPES = {
    "session_id": str, "student_id": str, "concept_id": str, "question_id": str,
    "position": int, "hint_requested": bool, "first_correct": bool, "first_rt_s": float,
    "shown_action_id": str, "second_correct": bool, "second_rt_s": float, "assist_view_s": float,
    "ts": float, "attempt_index": int, "assigned": bool, "weekend": bool, "confidence_end": int,
}


def _lines(stream) -> Iterable[str]:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    for raw in stream:
        if isinstance(raw, (bytes, bytearray)):
            raw = raw.decode("utf-8")
        yield raw


def parse_log_stream(stream: Union[IO, bytes, str, Iterable]) -> List[PracticeSession]:
    """Parse a log stream into validated sessions.

    Sessions appear in order of first occurrence; records inside a session
    are ordered by position. Raises ParseError on malformed lines and
    ValidationError (carrying the session id) on invariant violations.
    """
    grouped: Dict[str, Tuple[dict, List[InteractionRecord], int]] = {}
    for line_no, raw in enumerate(_lines(stream), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(line_no, "record must be a JSON object")
        missing = [k for k in LOG_KEYS if k not in obj]
        if missing:
            raise ParseError(line_no, f"missing field {missing[0]!r}")
        extra = sorted(set(obj) - set(LOG_KEYS))
        if extra:
            raise ParseError(line_no, f"unexpected field {extra[0]!r}")
        vals = {k: _expect(obj, k, _TYPES[k], line_no) for k in LOG_KEYS}
        rec = InteractionRecord(
            session_id=vals["session_id"],
            student_id=vals["student_id"],
            question_id=vals["question_id"],
            position=vals["position"],
            hint_requested_before_first=vals["hint_requested"],
            first_correct=vals["first_correct"],
            first_response_time_s=vals["first_rt_s"],
            shown_action_id=vals["shown_action_id"],
            second_correct=vals["second_correct"],
            second_response_time_s=vals["second_rt_s"],
            assist_view_time_s=vals["assist_view_s"],
            timestamp=vals["ts"],
        )
        header = {k: vals[k] for k in _SESSION_KEYS}
        entry = grouped.get(rec.session_id)
        if entry is None:
            grouped[rec.session_id] = (header, [rec], line_no)
        else:
            if entry[0] != header:
                key = next(k for k in _SESSION_KEYS if entry[0][k] != header[k])
                raise SessionMismatch(f"session field {key!r} disagrees between lines", rec.session_id)
            entry[1].append(rec)

    sessions = []
    for sid, (header, recs, _) in grouped.items():
        recs.sort(key=lambda r: r.position)
        sess = PracticeSession(
            session_id=sid,
            student_id=header["student_id"],
            concept_id=header["concept_id"],
            records=tuple(recs),
            confidence_end=header["confidence_end"],
            teacher_assigned=header["assigned"],
            started_on_weekend=header["weekend"],
            attempt_index_for_concept=header["attempt_index"],
        )
        sessions.append(validate_session(sess))
    return sessions


def record_to_log(session: PracticeSession, rec: InteractionRecord) -> dict:
    return {
        "session_id": rec.session_id,
        "student_id": rec.student_id,
        "concept_id": session.concept_id,
        "question_id": rec.question_id,
        "position": rec.position,
        "hint_requested": rec.hint_requested_before_first,
        "first_correct": rec.first_correct,
        "first_rt_s": rec.first_response_time_s,
        "shown_action_id": rec.shown_action_id,
        "second_correct": rec.second_correct,
        "second_rt_s": rec.second_response_time_s,
        "assist_view_s": rec.assist_view_time_s,
        "ts": rec.timestamp,
        "attempt_index": session.attempt_index_for_concept,
        "assigned": session.teacher_assigned,
        "weekend": session.started_on_weekend,
        "confidence_end": session.confidence_end,
    }


def write_log_stream(sessions: Iterable[PracticeSession], out: Optional[IO[str]] = None) -> str:
    """Serialize sessions to the log format; returns the text (also written to ``out``)."""
    buf = io.StringIO()
    for sess in sessions:
        for rec in sess.records:
            buf.write(json.dumps(record_to_log(sess, rec), separators=(",", ":")))
            buf.write("\n")
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


@dataclass(frozen=True)
class PreprocessConfig:
    min_questions_per_session: int = 5
    min_samples_per_action: int = 100
    first_attempt_only: bool = True

    def __post_init__(self):
        if self.min_questions_per_session < 1 or self.min_samples_per_action < 1:
            raise ValueError("preprocessing minimums must be >= 1")


@dataclass
class FilteredDataset:
    """Sessions surviving filters (i)-(ii), exposures surviving (iii) and the
    questions passing (iv).

    ``history`` holds every validated input session and is what student
    history features are computed from.
    """

    table: RecordTable
    history: RecordTable
    exposure_rows: np.ndarray
    eligible_questions: FrozenSet[QuestionId]
    action_sets: Dict[QuestionId, Tuple[str, ...]]
    filter_report: Dict[str, object]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @cached_property
    def sessions(self) -> List[PracticeSession]:
        return self.table.to_sessions()

    @cached_property
    def exposure_index(self) -> Dict[QuestionId, List[Tuple[str, int]]]:
        t = self.table
        index: Dict[QuestionId, List[Tuple[str, int]]] = {}
        for i in self.exposure_rows:
            qid = t.question_ids[t.question[i]]
            index.setdefault(qid, []).append((t.session_ids[t.session[i]], int(t.position[i])))
        return index

    def exposure_count(self, question_id: QuestionId, action_id: str) -> int:
        t = self.table
        return sum(
            1 for i in self.exposure_rows
            if t.question_ids[t.question[i]] == question_id and t.action_ids[t.action[i]] == action_id
        )


def preprocess(
    sessions: Sequence[PracticeSession],
    cfg: PreprocessConfig = PreprocessConfig(),
    questions: Optional[Mapping[QuestionId, Question]] = None,
) -> FilteredDataset:
    """Apply the session, first-attempt, hint and sample-size filters.

    ``questions`` supplies each question's action set; without it the set is
    taken to be the actions observed in the logs.
    """
    action_sets = None
    if questions is not None:
        action_sets = {qid: tuple(q.action_ids) for qid, q in questions.items()}
    return preprocess_table(RecordTable.from_sessions(sessions), cfg, action_sets)


def preprocess_table(
    table: RecordTable,
    cfg: PreprocessConfig = PreprocessConfig(),
    action_sets: Optional[Mapping[QuestionId, Sequence[str]]] = None,
) -> FilteredDataset:
    n_in = table.n_sessions
    # (i) distinct answered questions; true-false questions count.
    long_enough = table.session_length >= cfg.min_questions_per_session
    keep = long_enough.copy()
    # (ii) first practice attempt per concept
    repeat = table.attempt_index > 1
    dropped_repeat = 0
    if cfg.first_attempt_only:
        dropped_repeat = int((keep & repeat).sum())
        keep &= ~repeat
    filtered = table.select_sessions(keep)

    # (iii) exposures with a hint request stay out of effect estimation
    assisted = filtered.assisted
    hinted = assisted & filtered.hint
    exposure_rows = np.nonzero(assisted & ~filtered.hint)[0]

    # (iv) every action of the question needs enough exposures
    q_codes = filtered.question[exposure_rows]
    a_codes = filtered.action[exposure_rows]
    n_act = max(len(filtered.action_ids), 1)
    keys, n_pairs = np.unique(q_codes * n_act + a_codes, return_counts=True)
    counts: Dict[Tuple[int, int], int] = {
        (int(k // n_act), int(k % n_act)): int(n) for k, n in zip(keys, n_pairs)
    }
    observed: Dict[QuestionId, set] = {}
    for (qc, ac) in counts:
        observed.setdefault(filtered.question_ids[qc], set()).add(filtered.action_ids[ac])

    if action_sets is None:
        sets = {qid: tuple(sorted(acts)) for qid, acts in observed.items()}
    else:
        sets = {qid: tuple(acts) for qid, acts in action_sets.items() if acts}
    qcode = {q: i for i, q in enumerate(filtered.question_ids)}
    acode = {a: i for i, a in enumerate(filtered.action_ids)}
    eligible = set()
    for qid, acts in sets.items():
        if qid not in qcode:
            continue
        if all(counts.get((qcode[qid], acode.get(a, -1)), 0) >= cfg.min_samples_per_action for a in acts):
            eligible.add(qid)
    exposed_questions = set(observed)
    if action_sets is not None:
        exposed_questions |= {q for q in sets if q in qcode}

    report = {
        "sessions_in": n_in,
        "too_short": int((~long_enough).sum()),
        "repeat_attempt": dropped_repeat,
        "sessions_kept": filtered.n_sessions,
        "hint_exposures_excluded": int(hinted.sum()),
        "exposures_kept": int(exposure_rows.size),
        "ineligible_questions": len(exposed_questions - eligible),
        "eligible_questions": len(eligible),
        "true_false_counted_in_length": True,
        "action_sets_from": "observed" if action_sets is None else "catalog",
    }
    return FilteredDataset(
        table=filtered,
        history=table,
        exposure_rows=exposure_rows,
        eligible_questions=frozenset(eligible),
        action_sets=sets,
        filter_report=report,
    )
