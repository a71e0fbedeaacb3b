"""Core vocabulary shared by every module: questions, assistance actions,
interaction records and practice sessions, plus session validation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Tuple

QuestionId = str
ActionId = str
SessionId = str
StudentId = str
ConceptId = str


class QType(str, enum.Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    SELECT_ALL = "select_all"
    FILL_BLANK = "fill_blank"
    SHORT_ANSWER = "short_answer"
    TRUE_FALSE = "true_false"

    @property
    def is_choice(self) -> bool:
        return self in (QType.MULTIPLE_CHOICE, QType.SELECT_ALL, QType.TRUE_FALSE)


class ActionKind(str, enum.Enum):
    HINT = "hint"
    PARAGRAPH = "paragraph"
    VOCABULARY = "vocabulary"
    REMOVE_DISTRACTOR = "remove_distractor"
    FIRST_LETTER = "first_letter"
    NO_ASSISTANCE = "no_assistance"


@dataclass(frozen=True)
class IrtItem:
    """3PL item parameters: discrimination ``a``, difficulty ``b``, guessing floor ``c``."""

    a: float
    b: float
    c: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"discrimination must be positive, got {self.a}")
        if not 0.0 <= self.c < 1.0:
            raise ValueError(f"guessing floor must be in [0, 1), got {self.c}")


@dataclass(frozen=True)
class Question:
    id: QuestionId
    concept_id: ConceptId
    qtype: QType
    item: IrtItem
    action_ids: Tuple[ActionId, ...] = ()

    def __post_init__(self):
        if not self.id or not self.concept_id:
            raise ValueError("question and concept ids must be non-empty")
        object.__setattr__(self, "qtype", QType(self.qtype))
        object.__setattr__(self, "action_ids", tuple(self.action_ids))
        if self.qtype is QType.TRUE_FALSE:
            if self.action_ids:
                raise ValueError(f"true_false question {self.id} cannot carry assistance actions")
        elif not self.action_ids:
            raise ValueError(f"question {self.id} needs at least one assistance action")
        if len(set(self.action_ids)) != len(self.action_ids):
            raise ValueError(f"duplicate action ids on question {self.id}")

    @property
    def reattemptable(self) -> bool:
        return self.qtype is not QType.TRUE_FALSE


@dataclass(frozen=True)
class AssistanceAction:
    id: ActionId
    question_id: QuestionId
    kind: ActionKind
    content: str = ""

    def __post_init__(self):
        if not self.id or not self.question_id:
            raise ValueError("action and question ids must be non-empty")
        object.__setattr__(self, "kind", ActionKind(self.kind))


_KIND_QTYPES = {
    ActionKind.REMOVE_DISTRACTOR: {QType.MULTIPLE_CHOICE, QType.SELECT_ALL},
    ActionKind.FIRST_LETTER: {QType.FILL_BLANK, QType.SHORT_ANSWER},
}


def check_action_fits(action: AssistanceAction, question: Question) -> None:
    """Raise ValueError if ``action`` cannot be shown on ``question``."""
    if action.question_id != question.id:
        raise ValueError(f"action {action.id} belongs to {action.question_id}, not {question.id}")
    allowed = _KIND_QTYPES.get(action.kind)
    if allowed is not None and question.qtype not in allowed:
        raise ValueError(f"{action.kind.value} is not available on {question.qtype.value} questions")


@dataclass(frozen=True)
class InteractionRecord:
    session_id: SessionId
    student_id: StudentId
    question_id: QuestionId
    position: int
    hint_requested_before_first: bool
    first_correct: bool
    first_response_time_s: float
    shown_action_id: Optional[ActionId] = None
    second_correct: Optional[bool] = None
    second_response_time_s: Optional[float] = None
    assist_view_time_s: Optional[float] = None
    timestamp: float = 0.0

    @property
    def assisted(self) -> bool:
        return self.shown_action_id is not None

    @property
    def eventually_correct(self) -> bool:
        return self.first_correct or bool(self.second_correct)


@dataclass(frozen=True)
class PracticeSession:
    session_id: SessionId
    student_id: StudentId
    concept_id: ConceptId
    records: Tuple[InteractionRecord, ...] = field(default_factory=tuple)
    confidence_end: Optional[int] = None
    teacher_assigned: bool = False
    started_on_weekend: bool = False
    attempt_index_for_concept: int = 1

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def record_at(self, position: int) -> InteractionRecord:
        for rec in self.records:
            if rec.position == position:
                return rec
        raise KeyError(f"session {self.session_id} has no record at position {position}")

    @property
    def start_ts(self) -> float:
        return self.records[0].timestamp if self.records else 0.0


class ValidationError(ValueError):
    """A session violates a type invariant. ``position`` is 1-based, or None
    for session-level violations."""

    def __init__(self, reason: str, session_id: str = "", position: Optional[int] = None):
        self.reason = reason
        self.session_id = session_id
        self.position = position
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"{type(self).__name__}: {reason} (session {session_id!r}{where})")


class DuplicateQuestion(ValidationError):
    pass


class OrderViolation(ValidationError):
    pass


class OrphanSecondAttempt(ValidationError):
    pass


class MissingReattempt(ValidationError):
    pass


class AssistanceOnCorrect(ValidationError):
    pass


class SessionMismatch(ValidationError):
    pass


class InvalidField(ValidationError):
    pass


def _check_time(value, name, sid, pos, optional=False):
    if value is None:
        if optional:
            return
        raise InvalidField(f"{name} is required", sid, pos)
    if not value >= 0:  # also rejects NaN
        raise InvalidField(f"{name} must be non-negative, got {value}", sid, pos)


def validate_session(raw: PracticeSession) -> PracticeSession:
    """Return ``raw`` unchanged if every invariant holds, else raise the
    ValidationError subclass for the first violation found (in record order)."""
    sid = raw.session_id
    if not sid or not raw.student_id or not raw.concept_id:
        raise InvalidField("session, student and concept ids must be non-empty", sid)
    if raw.confidence_end is not None and raw.confidence_end not in (1, 2, 3):
        raise InvalidField(f"confidence_end must be 1, 2 or 3, got {raw.confidence_end}", sid)
    if raw.attempt_index_for_concept < 1:
        raise InvalidField("attempt_index_for_concept must be >= 1", sid)

    seen = set()
    last_pos = 0
    for rec in raw.records:
        pos = rec.position
        if rec.session_id != sid or rec.student_id != raw.student_id:
            raise SessionMismatch("record does not belong to this session/student", sid, pos)
        if not rec.question_id:
            raise InvalidField("question_id must be non-empty", sid, pos)
        if pos < 1 or pos <= last_pos:
            raise OrderViolation(f"position {pos} does not follow {last_pos}", sid, pos)
        last_pos = pos
        if rec.question_id in seen:
            raise DuplicateQuestion(rec.question_id, sid, pos)
        seen.add(rec.question_id)
        _check_time(rec.first_response_time_s, "first_response_time_s", sid, pos)
        _check_time(rec.second_response_time_s, "second_response_time_s", sid, pos, optional=True)
        _check_time(rec.assist_view_time_s, "assist_view_time_s", sid, pos, optional=True)
        if rec.shown_action_id is None:
            if rec.second_correct is not None:
                raise OrphanSecondAttempt("second attempt without a shown action", sid, pos)
        else:
            if not rec.shown_action_id:
                raise InvalidField("shown_action_id must be non-empty when present", sid, pos)
            if rec.first_correct:
                raise AssistanceOnCorrect("assistance shown after a correct first attempt", sid, pos)
            if rec.second_correct is None:
                raise MissingReattempt("shown action without a second attempt", sid, pos)
    return raw
