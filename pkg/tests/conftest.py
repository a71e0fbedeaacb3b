from __future__ import annotations

from typing import Optional, Sequence

import pytest

from assistopt.domain import InteractionRecord, IrtItem, PracticeSession
from assistopt.ingestion import PreprocessConfig, preprocess_table
from assistopt.simulator import WorldConfig, generate_world, simulate_table


def rec(pos: int, qid: str, first: bool, action: Optional[str] = None, second: Optional[bool] = None,
        hint: bool = False, rt: float = 10.0, sid: str = "s1", student: str = "u1",
        ts: Optional[float] = None) -> InteractionRecord:
    return InteractionRecord(
        session_id=sid, student_id=student, question_id=qid, position=pos,
        hint_requested_before_first=hint, first_correct=first, first_response_time_s=rt,
        shown_action_id=action, second_correct=second,
        second_response_time_s=None if second is None else 8.0,
        assist_view_time_s=None if action is None else 5.0,
        timestamp=float(pos if ts is None else ts),
    )


def session(records: Sequence[InteractionRecord], sid: str = "s1", student: str = "u1", concept: str = "c1",
            confidence: Optional[int] = None, attempt: int = 1, assigned: bool = False,
            weekend: bool = False) -> PracticeSession:
    return PracticeSession(sid, student, concept, tuple(records), confidence, assigned, weekend, attempt)


def flat_items(qids, a=1.0, b=0.0, c=0.0):
    return {q: IrtItem(a, b, c) for q in qids}


SMALL_WORLD = WorldConfig(n_concepts=2, questions_per_concept=10, n_students=600)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(SMALL_WORLD, 11)


@pytest.fixture(scope="session")
def small_sim(small_world):
    return simulate_table(small_world, None, 3000, 11)


@pytest.fixture(scope="session")
def small_dataset(small_world, small_sim):
    acts = {q.id: q.action_ids for q in small_world.questions}
    return preprocess_table(small_sim.table, PreprocessConfig(min_samples_per_action=20), acts)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance(request, capsys):
    """Record and print one pass/fail line for an acceptance criterion."""
    lines = request.config.acceptance_lines

    def report(number: int, title: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
        lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
