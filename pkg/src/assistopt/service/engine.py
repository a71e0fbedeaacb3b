"""Request dispatch over an immutable serving snapshot, plus the decision log."""

from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, IO, List, Mapping, Optional, Sequence, Tuple, Union

from ..causal.context import ContextVector
from ..causal.forest import predict_cate
from .assignment import AssignmentConfig, assign_policy, fnv1a_64
from .spec import CONTEXTUAL, FIXED, PolicySpecFile, load_policy_spec


class SpecNotLoaded(RuntimeError):
    pass


class NoActionAvailable(LookupError):
    pass


@dataclass(frozen=True)
class ServingState:
    specs: Mapping[str, PolicySpecFile]
    assignment: AssignmentConfig

    def __post_init__(self):
        missing = [p for p, _ in self.assignment.policies if p not in self.specs]
        if missing:
            raise SpecNotLoaded(f"no spec loaded for policies {missing}")


@dataclass(frozen=True)
class Query:
    session_id: str
    concept_id: str
    question_id: str
    context: Optional[ContextVector] = None
    action_ids: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Decision:
    action_id: str
    policy_id: str
    fallback: bool


@dataclass(frozen=True)
class DecisionRecord:
    session_id: str
    question_id: str
    policy_id: str
    action_id: str
    fallback: bool
    timestamp: float


class DecisionLog:
    """Append-only decision sink with a single serialized writer.

    Timestamps are clamped so they never decrease within a session.
    """

    def __init__(self, sink: Optional[IO[str]] = None, clock: Callable[[], float] = time.time):
        self._records: List[DecisionRecord] = []
        self._last: Dict[str, float] = {}
        self._lock = threading.Lock()
        self._sink = sink
        self._clock = clock

    def append(self, session_id: str, question_id: str, decision: Decision) -> DecisionRecord:
        with self._lock:
            ts = max(self._clock(), self._last.get(session_id, float("-inf")))
            self._last[session_id] = ts
            rec = DecisionRecord(session_id, question_id, decision.policy_id, decision.action_id,
                                 decision.fallback, ts)
            self._records.append(rec)
            if self._sink is not None:
                self._sink.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
                self._sink.flush()
            return rec

    @property
    def records(self) -> Tuple[DecisionRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


def _hashed_choice(session_id: str, question_id: str, actions: Sequence[str]) -> str:
    acts = sorted(actions)
    return acts[fnv1a_64(f"{session_id}\x1f{question_id}") % len(acts)]


def decide(state: ServingState, q: Query) -> Decision:
    """Pure dispatch: assignment, spec entry, then the entry's rule."""
    policy_id = assign_policy(q.session_id, state.assignment)
    entry = state.specs[policy_id].lookup(q.concept_id, q.question_id)
    if entry is None:
        if not q.action_ids:
            raise NoActionAvailable(f"{q.question_id} is not in spec {policy_id} and no action set was given")
        return Decision(_hashed_choice(q.session_id, q.question_id, q.action_ids), policy_id, True)
    if entry.kind == FIXED:
        return Decision(entry.action_id, policy_id, False)
    if entry.kind == CONTEXTUAL:
        if q.context is None:
            return Decision(entry.control, policy_id, True)
        treat = predict_cate(entry.model, q.context) > 0
        return Decision(entry.treat if treat else entry.control, policy_id, False)
    return Decision(_hashed_choice(q.session_id, q.question_id, entry.action_ids), policy_id, False)


class AssistanceService:
    """Holds the current snapshot; reload swaps it in one reference assignment."""

    def __init__(self, log: Optional[DecisionLog] = None):
        self.log = log if log is not None else DecisionLog()
        self._state: Optional[ServingState] = None
        self._reload_lock = threading.Lock()
        self.spec_paths: Tuple[Path, ...] = ()
        self.assignment_path: Optional[Path] = None

    @property
    def state(self) -> Optional[ServingState]:
        return self._state

    def install(self, state: ServingState) -> None:
        self._state = state

    def load(self, spec_paths: Sequence[Union[str, Path]], assignment: Union[str, Path, AssignmentConfig]) -> ServingState:
        """Parse everything first; the live snapshot changes only if all of it loads."""
        with self._reload_lock:
            specs = {}
            for p in spec_paths:
                spec = load_policy_spec(p)
                specs[spec.policy_id] = spec
            if isinstance(assignment, AssignmentConfig):
                cfg = assignment
            else:
                cfg = AssignmentConfig.from_json(json.loads(Path(assignment).read_text(encoding="utf-8")))
                self.assignment_path = Path(assignment)
            state = ServingState(specs, cfg)
            self.spec_paths = tuple(Path(p) for p in spec_paths)
            self._state = state
            return state

    def reload(self) -> ServingState:
        if not self.spec_paths:
            raise SpecNotLoaded("nothing to reload")
        source = self.assignment_path if self.assignment_path is not None else self._state.assignment
        return self.load(self.spec_paths, source)

    def get_action(self, q: Query) -> Decision:
        state = self._state
        if state is None:
            raise SpecNotLoaded("no policy spec loaded")
        decision = decide(state, q)
        self.log.append(q.session_id, q.question_id, decision)
        return decision
