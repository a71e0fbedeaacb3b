"""Synthetic tutoring world with known ground truth.

Students practice concepts question by question. An incorrect first attempt
on a reattemptable question triggers an assistance action chosen by a
policy, then a second attempt whose success probability is the student's
base rate plus the action's (possibly covariate-dependent) uplift. Some
actions also raise the first-attempt success of later questions.

Sessions are simulated in lockstep batches. Each session reads its random
numbers from its own block of a counter-based stream, so a session's
outcome does not depend on which other sessions share its batch.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .causal.context import FEATURE_INDEX, FEATURES, N_FEATURES, ContextVector, StudentHistory
from .domain import (
    ActionKind,
    AssistanceAction,
    IrtItem,
    PracticeSession,
    QType,
    Question,
    QuestionId,
    check_action_fits,
)
from .ingestion import write_log_stream
from .irt import refine_ability_batch
from .outcomes import SUCCESS_TARGET
from .records import NO_ACTION, RecordTable
from .service.assignment import AssignmentConfig, assign_policy

SCENARIOS = ("null", "homogeneous", "heterogeneous_linear", "sign_changing")
P_MIN, P_MAX = 0.01, 0.99
TRANSFER_HALF_LIFE = 3.0
_DECAY = 0.5 ** (1.0 / TRANSFER_HALF_LIFE)
_T0 = 1_700_000_000.0
_DAY = 86_400.0

# uniforms per question step: hint, first, policy, second, 4 for Box-Muller
_STEP_COLS = 8
# per-session extras: concept, assigned, weekend, confidence missing, confidence level
_EXTRA_COLS = 8


class ConfigError(ValueError):
    pass


class EmptyConcept(ValueError):
    pass


class UnknownAction(KeyError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    n_concepts: int = 8
    questions_per_concept: int = 20
    n_students: int = 2000
    actions_per_question: int = 4
    include_no_assistance: bool = True
    qtype_weights: Tuple[Tuple[str, float], ...] = (
        ("multiple_choice", 0.35), ("select_all", 0.10), ("fill_blank", 0.20),
        ("short_answer", 0.15), ("true_false", 0.20),
    )
    theta_mean: float = 0.7
    theta_sd: float = 1.0
    base_second_rate: float = 0.3
    hint_propensity: float = 0.1
    scenario: str = "homogeneous"
    uplift_low: float = 0.0
    uplift_high: float = 0.3
    min_best_gap: float = 0.0
    effect_feature: str = "stud_ability"
    effect_slope: float = 0.2
    transfer_fraction: float = 0.0
    transfer_bump: float = 0.25
    transfer_cost: float = 0.05
    rt_first_median: float = 25.0
    rt_second_median: float = 15.0
    assist_median: float = 12.0
    rt_shape: float = 0.5
    confidence_missing: float = 0.3
    assigned_rate: float = 0.3

    def __post_init__(self):
        for name in ("n_concepts", "questions_per_concept", "n_students", "actions_per_question"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.effect_feature not in FEATURE_INDEX:
            raise ConfigError(f"unknown effect feature {self.effect_feature!r}")
        if self.actions_per_question > 6:
            raise ConfigError("at most 6 actions per question")
        for name in ("base_second_rate", "hint_propensity", "transfer_fraction",
                     "confidence_missing", "assigned_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        kinds = {k for k, _ in self.qtype_weights}
        if not kinds <= {q.value for q in QType} or any(w < 0 for _, w in self.qtype_weights):
            raise ConfigError("bad question-type weights")
        if sum(w for _, w in self.qtype_weights) <= 0:
            raise ConfigError("question-type weights sum to zero")

    def to_json(self) -> str:
        d = asdict(self)
        # pairs, not an object: the order feeds the question-type draw
        d["qtype_weights"] = [list(p) for p in self.qtype_weights]
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: Union[str, dict]) -> "WorldConfig":
        try:
            d = json.loads(text) if isinstance(text, str) else dict(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"world config is not JSON: {exc.msg}") from None
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown world config key {sorted(unknown)[0]!r}")
        if "qtype_weights" in d:
            qw = d["qtype_weights"]
            try:
                pairs = qw.items() if isinstance(qw, dict) else qw
                d["qtype_weights"] = tuple((str(k), float(v)) for k, v in pairs)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad qtype_weights: {exc}") from None
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class ActionEffectSpec:
    """Uplift on second-attempt success: base_uplift + sum(coef * feature)."""

    action_id: str
    base_uplift: float = 0.0
    coefs: Tuple[Tuple[str, float], ...] = ()
    transfer: float = 0.0

    def uplift(self, x: ContextVector) -> float:
        return self.base_uplift + sum(g * x[f] for f, g in self.coefs)


@dataclass(frozen=True)
class StudentProfile:
    student_id: str
    true_theta: float
    base_second_attempt_rate: float
    rt_first_median: float
    rt_second_median: float
    assist_median: float
    rt_shape: float
    hint_propensity: float

    def __post_init__(self):
        if not (0.0 <= self.base_second_attempt_rate <= 1.0 and 0.0 <= self.hint_propensity <= 1.0):
            raise ValueError("student probabilities must lie in [0, 1]")


@dataclass
class World:
    config: WorldConfig
    seed: int
    concepts: Tuple[str, ...]
    questions: Tuple[Question, ...]
    actions: Tuple[AssistanceAction, ...]
    effects: Dict[str, ActionEffectSpec]
    students: Tuple[StudentProfile, ...]
    _arrays: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        ids = {a.id for a in self.actions}
        for aid in self.effects:
            if aid not in ids:
                raise ConfigError(f"effect spec for unknown action {aid!r}")

    @property
    def items(self) -> Dict[QuestionId, IrtItem]:
        return {q.id: q.item for q in self.questions}

    @property
    def question_map(self) -> Dict[QuestionId, Question]:
        return {q.id: q for q in self.questions}

    def action_index(self) -> Dict[str, int]:
        return {a.id: i for i, a in enumerate(self.actions)}

    def to_json(self) -> str:
        doc = {
            "config": json.loads(self.config.to_json()),
            "seed": self.seed,
            "concepts": list(self.concepts),
            "questions": [
                {"id": q.id, "concept_id": q.concept_id, "qtype": q.qtype.value,
                 "a": q.item.a, "b": q.item.b, "c": q.item.c, "action_ids": list(q.action_ids)}
                for q in self.questions
            ],
            "actions": [{"id": a.id, "question_id": a.question_id, "kind": a.kind.value} for a in self.actions],
            "effects": [
                {"action_id": e.action_id, "base_uplift": e.base_uplift,
                 "coefs": [[f, g] for f, g in e.coefs], "transfer": e.transfer}
                for e in self.effects.values()
            ],
            "students": [asdict(s) for s in self.students],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    # dense views used by the engine
    def arrays(self) -> dict:
        if self._arrays:
            return self._arrays
        qidx = {q.id: i for i, q in enumerate(self.questions)}
        aidx = self.action_index()
        n_q = len(self.questions)
        a_max = max([len(q.action_ids) for q in self.questions] + [1])
        q_actions = np.full((n_q, a_max), -1, dtype=np.int64)
        for i, q in enumerate(self.questions):
            q_actions[i, :len(q.action_ids)] = [aidx[a] for a in q.action_ids]
        coef = np.zeros((len(self.actions), N_FEATURES))
        uplift = np.zeros(len(self.actions))
        transfer = np.zeros(len(self.actions))
        for aid, spec in self.effects.items():
            k = aidx[aid]
            uplift[k] = spec.base_uplift
            transfer[k] = spec.transfer
            for f, g in spec.coefs:
                coef[k, FEATURE_INDEX[f]] = g
        pools = []
        for c in self.concepts:
            pools.append(sorted(i for i, q in enumerate(self.questions) if q.concept_id == c))
        width = max([len(p) for p in pools] + [1])
        pool = np.full((len(self.concepts), width), -1, dtype=np.int64)
        for k, p in enumerate(pools):
            pool[k, :len(p)] = p
        self._arrays = dict(
            qidx=qidx,
            qa=np.array([q.item.a for q in self.questions]),
            qb=np.array([q.item.b for q in self.questions]),
            qc=np.array([q.item.c for q in self.questions]),
            tf=np.array([q.qtype is QType.TRUE_FALSE for q in self.questions]),
            reattempt=np.array([q.reattemptable for q in self.questions]),
            q_actions=q_actions,
            n_actions=np.array([len(q.action_ids) for q in self.questions], dtype=np.int64),
            coef=coef, uplift=uplift, transfer=transfer,
            pool=pool,
            theta=np.array([s.true_theta for s in self.students]),
            base=np.array([s.base_second_attempt_rate for s in self.students]),
            rt1=np.array([s.rt_first_median for s in self.students]),
            rt2=np.array([s.rt_second_median for s in self.students]),
            view=np.array([s.assist_median for s in self.students]),
            shape=np.array([s.rt_shape for s in self.students]),
            hint=np.array([s.hint_propensity for s in self.students]),
        )
        return self._arrays


_CHOICE_KINDS = ("hint_1", "hint_2", "paragraph", "vocabulary", "remove_distractor")
_TEXT_KINDS = ("hint_1", "hint_2", "paragraph", "vocabulary", "first_letter")
_KIND_OF = {
    "hint_1": ActionKind.HINT, "hint_2": ActionKind.HINT, "paragraph": ActionKind.PARAGRAPH,
    "vocabulary": ActionKind.VOCABULARY, "remove_distractor": ActionKind.REMOVE_DISTRACTOR,
    "first_letter": ActionKind.FIRST_LETTER, "no_assistance": ActionKind.NO_ASSISTANCE,
}


def is_no_assistance(action_id: str) -> bool:
    return action_id == "no_assistance" or action_id.endswith("/no_assistance")


def generate_world(config: WorldConfig = WorldConfig(), seed: int = 0) -> World:
    rng = np.random.Generator(np.random.Philox(key=[seed, 0x5EED_0001]))
    cfg = config
    qtypes = [QType(k) for k, _ in cfg.qtype_weights]
    qprobs = np.array([w for _, w in cfg.qtype_weights], dtype=float)
    qprobs /= qprobs.sum()

    concepts = tuple(f"c{k:02d}" for k in range(cfg.n_concepts))
    questions: List[Question] = []
    actions: List[AssistanceAction] = []
    effects: Dict[str, ActionEffectSpec] = {}
    trade_off_candidates = []
    for cid in concepts:
        for j in range(cfg.questions_per_concept):
            qid = f"{cid}-q{j:02d}"
            qtype = qtypes[int(rng.choice(len(qtypes), p=qprobs))]
            a = float(np.exp(rng.normal(0.0, 0.25)))
            b = float(rng.normal(0.0, 1.0))
            item = IrtItem(a, b, 0.2 if qtype.is_choice else 0.0)
            if qtype is QType.TRUE_FALSE:
                questions.append(Question(qid, cid, qtype, item, ()))
                continue
            pool = _CHOICE_KINDS if qtype in (QType.MULTIPLE_CHOICE, QType.SELECT_ALL) else _TEXT_KINDS
            n_other = cfg.actions_per_question - (1 if cfg.include_no_assistance else 0)
            n_other = max(0, min(n_other, len(pool)))
            kinds = [pool[i] for i in sorted(rng.choice(len(pool), size=n_other, replace=False))]
            if cfg.include_no_assistance:
                kinds.append("no_assistance")
            if not kinds:
                kinds = ["no_assistance"]
            q_actions = [AssistanceAction(f"{qid}/{k}", qid, _KIND_OF[k]) for k in kinds]
            question = Question(qid, cid, qtype, item, tuple(a.id for a in q_actions))
            for act in q_actions:
                check_action_fits(act, question)
            questions.append(question)
            actions.extend(q_actions)
            specs = _draw_effects(cfg, rng, q_actions)
            effects.update({s.action_id: s for s in specs})
            if sum(1 for s in specs if not is_no_assistance(s.action_id)) >= 2:
                trade_off_candidates.append(qid)

    if cfg.transfer_fraction > 0 and trade_off_candidates:
        n_trade = int(round(cfg.transfer_fraction * len(trade_off_candidates)))
        chosen = sorted(rng.choice(len(trade_off_candidates), size=n_trade, replace=False))
        qmap = {q.id: q for q in questions}
        for i in chosen:
            q = qmap[trade_off_candidates[i]]
            specs = [effects[a] for a in q.action_ids if not is_no_assistance(a)]
            best = max(specs, key=lambda s: (s.base_uplift, s.action_id))
            others = [s for s in specs if s.action_id != best.action_id]
            pick = others[int(rng.integers(len(others)))]
            effects[pick.action_id] = ActionEffectSpec(
                pick.action_id, best.base_uplift - cfg.transfer_cost, pick.coefs, cfg.transfer_bump
            )
            # keep the reattempt ranking clean: every other action sits below the trade-off action
            for s in others:
                if s.action_id != pick.action_id and s.base_uplift >= best.base_uplift - cfg.transfer_cost:
                    effects[s.action_id] = ActionEffectSpec(
                        s.action_id, best.base_uplift - 2 * cfg.transfer_cost, s.coefs, s.transfer
                    )

    students = []
    for i in range(cfg.n_students):
        z = rng.normal(size=4)
        students.append(StudentProfile(
            student_id=f"u{i:05d}",
            true_theta=float(cfg.theta_mean + cfg.theta_sd * z[0]),
            base_second_attempt_rate=cfg.base_second_rate,
            rt_first_median=float(cfg.rt_first_median * np.exp(0.3 * z[1])),
            rt_second_median=float(cfg.rt_second_median * np.exp(0.3 * z[2])),
            assist_median=float(cfg.assist_median * np.exp(0.3 * z[3])),
            rt_shape=cfg.rt_shape,
            hint_propensity=cfg.hint_propensity,
        ))
    return World(cfg, seed, concepts, tuple(questions), tuple(actions), effects, tuple(students))


def _draw_effects(cfg: WorldConfig, rng, q_actions: Sequence[AssistanceAction]) -> List[ActionEffectSpec]:
    real = [a for a in q_actions if a.kind is not ActionKind.NO_ASSISTANCE]
    uplift = {a.id: 0.0 for a in q_actions}
    coefs: Dict[str, Tuple[Tuple[str, float], ...]] = {a.id: () for a in q_actions}
    if cfg.scenario in ("homogeneous", "heterogeneous_linear"):
        for a in real:
            uplift[a.id] = float(rng.uniform(cfg.uplift_low, cfg.uplift_high))
        if cfg.min_best_gap > 0 and len(q_actions) > 1:
            ranked = sorted(q_actions, key=lambda a: (-uplift[a.id], a.id))
            top, second = ranked[0], ranked[1]
            if uplift[top.id] - uplift[second.id] < cfg.min_best_gap:
                uplift[top.id] = uplift[second.id] + cfg.min_best_gap
        if cfg.scenario == "heterogeneous_linear":
            for a in real:
                coefs[a.id] = ((cfg.effect_feature, cfg.effect_slope),)
    elif cfg.scenario == "sign_changing":
        for a in real:
            sign = 1.0 if rng.random() < 0.5 else -1.0
            coefs[a.id] = ((cfg.effect_feature, sign * cfg.effect_slope),)
    return [ActionEffectSpec(a.id, uplift[a.id], coefs[a.id], 0.0) for a in q_actions]


def second_attempt_probability(world: World, action_id: str, x: ContextVector,
                               base: Optional[float] = None) -> float:
    spec = world.effects.get(action_id)
    if spec is None:
        raise UnknownAction(action_id)
    base = world.config.base_second_rate if base is None else base
    return float(np.clip(base + spec.uplift(x), P_MIN, P_MAX))


def true_cate(world: World, action_id: str, x: ContextVector, outcome: str = "reattempt_correct") -> float:
    """Uplift on reattempt success over receiving no assistance, after clamping."""
    if outcome != "reattempt_correct":
        raise ValueError("the analytic effect is defined for reattempt correctness only")
    base = world.config.base_second_rate
    return second_attempt_probability(world, action_id, x) - float(np.clip(base, P_MIN, P_MAX))


# ---------------------------------------------------------------- policies


class SimPolicy(Protocol):
    def choose(self, world: World, session_ids: Sequence[str], questions: np.ndarray,
               X: np.ndarray, present: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Global action indices for the given exposures."""


class UniformPolicy:
    """Uniform logging policy: each action of the question with equal chance."""

    def choose(self, world, session_ids, questions, X, present, u):
        arr = world.arrays()
        n = arr["n_actions"][questions]
        pick = np.minimum((u * n).astype(np.int64), n - 1)
        return arr["q_actions"][questions, pick]


class FixedPolicy:
    """Fixed action per question; questions not listed fall back to uniform."""

    def __init__(self, choice: Mapping[QuestionId, str]):
        self.choice = dict(choice)

    def choose(self, world, session_ids, questions, X, present, u):
        arr = world.arrays()
        out = UniformPolicy().choose(world, session_ids, questions, X, present, u)
        aidx = world.action_index()
        table = np.full(len(world.questions), -1, dtype=np.int64)
        for qid, aid in self.choice.items():
            if qid in arr["qidx"] and aid in aidx:
                table[arr["qidx"][qid]] = aidx[aid]
        fixed = table[questions]
        return np.where(fixed >= 0, fixed, out)


class CallbackPolicy:
    """Per-exposure callback ``f(session_id, question_id, ContextVector) -> action_id``."""

    def __init__(self, fn: Callable[[str, str, ContextVector], str]):
        self.fn = fn

    def choose(self, world, session_ids, questions, X, present, u):
        aidx = world.action_index()
        out = np.empty(len(questions), dtype=np.int64)
        for i, q in enumerate(questions):
            ctx = ContextVector.from_arrays(X[i], present[i])
            out[i] = aidx[self.fn(session_ids[i], world.questions[q].id, ctx)]
        return out


PolicyMix = Mapping[str, Tuple[float, SimPolicy]]


def uniform_mix() -> Dict[str, Tuple[float, SimPolicy]]:
    return {"random": (1.0, UniformPolicy())}


# ---------------------------------------------------------------- engine


@dataclass
class SimResult:
    """Simulated sessions in columnar form plus the per-record ground truth.

    ``p2_*`` and the context arrays are NaN/False on records without an
    assistance exposure.
    """

    table: RecordTable
    policy: List[str]
    p_first: np.ndarray
    p2_logged: np.ndarray
    p2_mean: np.ndarray
    p2_baseline: np.ndarray
    context: np.ndarray
    present: np.ndarray

    def sessions(self) -> List[PracticeSession]:
        return self.table.to_sessions()

    def log_text(self) -> str:
        return write_log_stream(self.sessions())


def _table_width(world: World) -> int:
    steps = world.arrays()["pool"].shape[1]
    k = steps * _STEP_COLS + _EXTRA_COLS
    return k + (-k) % 4


def _session_uniforms(seed: int, first: int, n: int, width: int) -> np.ndarray:
    bitgen = np.random.Philox(key=[seed, 0x5E55_10E5])
    bitgen.advance(first * width // 4)
    u = np.random.Generator(bitgen).random((n, width))
    return u


def _box_muller(u1, u2):
    r = np.sqrt(-2.0 * np.log1p(-u1))
    return r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)


@dataclass
class _Plan:
    index: np.ndarray
    session_ids: List[str]
    student: np.ndarray
    concept: np.ndarray
    attempt_index: np.ndarray
    assigned: np.ndarray
    weekend: np.ndarray
    start_ts: np.ndarray
    policy: List[str]


def _plan(world: World, n_sessions: int, seed: int, assignment: Optional[AssignmentConfig],
          uniforms: np.ndarray, default_policy: str = "random") -> _Plan:
    cfg = world.config
    idx = np.arange(n_sessions, dtype=np.int64)
    extra = uniforms[:, -_EXTRA_COLS:]
    student = idx % cfg.n_students
    round_ = idx // cfg.n_students
    concept = np.minimum((extra[:, 0] * cfg.n_concepts).astype(np.int64), cfg.n_concepts - 1)
    attempt = np.ones(n_sessions, dtype=np.int64)
    seen = np.zeros((cfg.n_students, cfg.n_concepts), dtype=np.int64)
    for r in range(int(round_.max()) + 1 if n_sessions else 0):
        rows = np.nonzero(round_ == r)[0]
        attempt[rows] = seen[student[rows], concept[rows]] + 1
        seen[student[rows], concept[rows]] += 1
    sids = [f"s{seed}-{i:07d}" for i in idx]
    if assignment is None:
        policy = [default_policy] * n_sessions
    else:
        policy = [assign_policy(s, assignment) for s in sids]
    return _Plan(
        index=idx, session_ids=sids, student=student, concept=concept, attempt_index=attempt,
        assigned=extra[:, 1] < cfg.assigned_rate, weekend=extra[:, 2] < 2.0 / 7.0,
        start_ts=_T0 + round_ * _DAY + student * 7.0, policy=policy,
    )


def _run_batch(world: World, plan: _Plan, rows: np.ndarray, uniforms: np.ndarray,
               policies: Mapping[str, SimPolicy], hist_v: np.ndarray, hist_p: np.ndarray):
    """Simulate the sessions ``rows`` of ``plan`` together; one step = one question."""
    arr = world.arrays()
    n = rows.size
    pool = arr["pool"][plan.concept[rows]]
    width = pool.shape[1]
    valid = pool >= 0
    pool_b = np.where(valid, arr["qb"][np.maximum(pool, 0)], np.inf)
    pool_tf = np.where(valid, arr["tf"][np.maximum(pool, 0)], False)
    stud = plan.student[rows]
    theta_true = arr["theta"][stud]
    base = arr["base"][stud]
    shape = arr["shape"][stud]
    u_all = uniforms[rows]

    answered = ~valid
    theta_hat = np.zeros(n)
    ra = np.ones((n, width))
    rb = np.zeros((n, width))
    rc = np.zeros((n, width))
    ry = np.zeros((n, width))
    n_correct = np.zeros(n, dtype=np.int64)
    n_first_correct = np.zeros(n)
    bump = np.zeros(n)
    clock = plan.start_ts[rows].astype(float).copy()
    done = np.zeros(n, dtype=bool)
    out: List[dict] = []
    sids = [plan.session_ids[r] for r in rows]
    pol_names = [plan.policy[r] for r in rows]

    for step in range(width):
        cand = ~answered
        done |= ~cand.any(axis=1)
        live = np.nonzero(~done)[0]
        if live.size == 0:
            break
        c = cand[live]
        pref = c & ~pool_tf[live]
        use = np.where(pref.any(axis=1)[:, None], pref, c)
        dist = np.where(use, np.abs(pool_b[live] - theta_hat[live, None]), np.inf)
        col = np.argmin(dist, axis=1)
        q = pool[live, col]
        answered[live, col] = True
        u = u_all[live, step * _STEP_COLS:(step + 1) * _STEP_COLS]
        z1, z2 = _box_muller(u[:, 4], u[:, 5])
        z3, _ = _box_muller(u[:, 6], u[:, 7])
        s = stud[live]

        hint = u[:, 0] < arr["hint"][s]
        qa, qb, qc = arr["qa"][q], arr["qb"][q], arr["qc"][q]
        p1 = qc + (1.0 - qc) * 0.5 * (1.0 + np.tanh(0.5 * qa * (theta_true[live] - qb)))
        p1 = np.where(bump[live] > 0, np.minimum(p1 + bump[live], P_MAX), p1)
        fc = u[:, 1] < p1
        rt1 = arr["rt1"][s] * np.exp(shape[live] * z1)
        exposed = ~fc & arr["reattempt"][q]

        action = np.full(live.size, NO_ACTION, dtype=np.int64)
        sc = np.full(live.size, -1, dtype=np.int8)
        rt2 = np.full(live.size, np.nan)
        view = np.full(live.size, np.nan)
        p2_log = np.full(live.size, np.nan)
        p2_mean = np.full(live.size, np.nan)
        X = np.zeros((live.size, N_FEATURES))
        P = np.zeros((live.size, N_FEATURES), dtype=bool)
        ex = np.nonzero(exposed)[0]
        if ex.size:
            lr = live[ex]
            Xe = np.zeros((ex.size, N_FEATURES))
            Pe = np.zeros((ex.size, N_FEATURES), dtype=bool)
            Xe[:, FEATURE_INDEX["stud_ability"]] = theta_hat[lr]
            Xe[:, FEATURE_INDEX["resp_time"]] = rt1[ex]
            if step > 0:
                Xe[:, FEATURE_INDEX["prev_resp_cor"]] = ry[lr, step - 1]
                Xe[:, FEATURE_INDEX["cor_rate"]] = n_first_correct[lr] / step
                Pe[:, FEATURE_INDEX["prev_resp_cor"]] = True
                Pe[:, FEATURE_INDEX["cor_rate"]] = True
            Xe[:, FEATURE_INDEX["quest_num"]] = step + 1
            Xe[:, FEATURE_INDEX["assigned"]] = plan.assigned[rows[lr]]
            Xe[:, FEATURE_INDEX["weekend"]] = plan.weekend[rows[lr]]
            for name in ("stud_ability", "resp_time", "quest_num", "assigned", "weekend"):
                Pe[:, FEATURE_INDEX[name]] = True
            Xe[:, 6] = hist_v[lr, 0]
            Pe[:, 6] = hist_p[lr, 0]
            Xe[:, 8:] = hist_v[lr, 1:]
            Pe[:, 8:] = hist_p[lr, 1:]

            chosen = np.empty(ex.size, dtype=np.int64)
            names = [pol_names[i] for i in lr]
            for name in sorted(set(names)):
                sel = np.array([k for k, nm in enumerate(names) if nm == name], dtype=np.int64)
                chosen[sel] = policies[name].choose(
                    world, [sids[i] for i in lr[sel]], q[ex[sel]], Xe[sel], Pe[sel], u[ex[sel], 2]
                )
            qacts = arr["q_actions"][q[ex]]
            if np.any((qacts != chosen[:, None]).all(axis=1)):
                raise ValueError("policy chose an action outside the question's action set")
            lin = Xe @ arr["coef"].T  # (k, n_actions_total)
            allp = np.clip(base[lr, None] + arr["uplift"][None, :] + lin, P_MIN, P_MAX)
            p2 = allp[np.arange(ex.size), chosen]
            okq = qacts >= 0
            qp = np.where(okq, np.take_along_axis(allp, np.maximum(qacts, 0), axis=1), 0.0)
            p2_mean[ex] = qp.sum(axis=1) / okq.sum(axis=1)
            p2_log[ex] = p2
            action[ex] = chosen
            sc[ex] = (u[ex, 3] < p2).astype(np.int8)
            rt2[ex] = arr["rt2"][s[ex]] * np.exp(shape[lr] * z2[ex])
            view[ex] = arr["view"][s[ex]] * np.exp(shape[lr] * z3[ex])
            X[ex], P[ex] = Xe, Pe

        out.append(dict(
            row=live.copy(), step=step, q=q, hint=hint, fc=fc, rt1=rt1, action=action, sc=sc,
            rt2=rt2, view=view, ts=clock[live].copy(), p1=p1, p2_log=p2_log, p2_mean=p2_mean,
            X=X, P=P, base=base[live],
        ))
        clock[live] += rt1 + np.nan_to_num(rt2) + np.nan_to_num(view)
        gain = np.zeros(live.size)
        if ex.size:
            gain[ex] = arr["transfer"][action[ex]]
        bump[live] = bump[live] * _DECAY + gain

        ra[live, step], rb[live, step], rc[live, step] = qa, qb, qc
        ry[live, step] = fc
        n_first_correct[live] += fc
        k = step + 1
        th, _ = refine_ability_batch(theta_hat[live], ra[live, :k], rb[live, :k], rc[live, :k],
                                     ry[live, :k], np.ones((live.size, k), dtype=bool))
        theta_hat[live] = th
        n_correct[live] += fc | (sc == 1)
        done[live] |= n_correct[live] >= SUCCESS_TARGET
    return out, theta_hat


def _assemble(world: World, plan: _Plan, batches, conf: np.ndarray) -> SimResult:
    arr = world.arrays()
    cols = {k: [] for k in ("sess", "step", "q", "hint", "fc", "rt1", "action", "sc", "rt2",
                            "view", "ts", "p1", "p2_log", "p2_mean", "X", "P", "base")}
    for rows, steps in batches:
        for st in steps:
            cols["sess"].append(rows[st["row"]])
            cols["step"].append(np.full(st["row"].size, st["step"]))
            for k in ("q", "hint", "fc", "rt1", "action", "sc", "rt2", "view", "ts", "p1",
                      "p2_log", "p2_mean", "X", "P", "base"):
                cols[k].append(st[k])
    n_sess = plan.index.size
    if cols["sess"]:
        cat = {k: np.concatenate(v) for k, v in cols.items()}
    else:
        cat = {k: np.zeros((0, N_FEATURES) if k in ("X", "P") else 0) for k in cols}
        cat["sess"] = cat["sess"].astype(np.int64)
        cat["step"] = cat["step"].astype(np.int64)
        cat["q"] = cat["q"].astype(np.int64)
        cat["action"] = cat["action"].astype(np.int64)
    order = np.lexsort((cat["step"], cat["sess"]))
    c = {k: v[order] for k, v in cat.items()}
    lengths = np.bincount(c["sess"], minlength=n_sess) if n_sess else np.zeros(0, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)

    # vocabularies in first-appearance order, as RecordTable.from_sessions builds them
    qcodes, qnames = _recode(c["q"], [q.id for q in world.questions])
    acts = c["action"]
    shown = acts != NO_ACTION
    acodes = np.full(acts.size, NO_ACTION, dtype=np.int64)
    sub, anames = _recode(acts[shown], [a.id for a in world.actions])
    acodes[shown] = sub
    scodes, snames = _recode(plan.student, [s.student_id for s in world.students])
    ccodes, cnames = _recode(plan.concept, list(world.concepts))

    table = RecordTable(
        session=c["sess"].astype(np.int64),
        question=qcodes,
        position=(c["step"] + 1).astype(np.int64),
        hint=c["hint"].astype(bool),
        first_correct=c["fc"].astype(bool),
        first_rt=c["rt1"].astype(float),
        action=acodes,
        second_correct=c["sc"].astype(np.int8),
        second_rt=c["rt2"].astype(float),
        assist_view=c["view"].astype(float),
        ts=c["ts"].astype(float),
        session_ids=list(plan.session_ids),
        student=scodes,
        concept=ccodes,
        confidence_end=conf.astype(np.int8),
        assigned=plan.assigned.astype(bool),
        weekend=plan.weekend.astype(bool),
        attempt_index=plan.attempt_index.astype(np.int64),
        offsets=offsets,
        question_ids=qnames,
        action_ids=anames,
        student_ids=snames,
        concept_ids=cnames,
    )
    p2_base = np.where(shown, np.clip(c["base"], P_MIN, P_MAX), np.nan)
    return SimResult(
        table=table, policy=list(plan.policy), p_first=c["p1"], p2_logged=c["p2_log"],
        p2_mean=c["p2_mean"], p2_baseline=p2_base, context=c["X"], present=c["P"].astype(bool),
    )


def _recode(codes: np.ndarray, names: Sequence[str]) -> Tuple[np.ndarray, List[str]]:
    if codes.size == 0:
        return codes.astype(np.int64), []
    uniq, first, inv = np.unique(codes, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rank[inv].astype(np.int64), [names[int(uniq[i])] for i in order]


def _simulate(world: World, plan: _Plan, uniforms: np.ndarray, policies: Mapping[str, SimPolicy]) -> SimResult:
    cfg = world.config
    n = plan.index.size
    rounds = plan.index // cfg.n_students if n else plan.index
    histories: Dict[int, StudentHistory] = {}
    batches = []
    conf = np.zeros(n, dtype=np.int64)
    for r in range(int(rounds.max()) + 1 if n else 0):
        rows = np.nonzero(rounds == r)[0]
        hv = np.zeros((rows.size, 13))
        hp = np.zeros((rows.size, 13), dtype=bool)
        if r > 0:
            for j, row in enumerate(rows):
                h = histories.get(int(plan.student[row]))
                if h is not None:
                    hv[j], hp[j] = h.features()
        steps, theta_hat = _run_batch(world, plan, rows, uniforms, policies, hv, hp)
        extra = uniforms[rows, -_EXTRA_COLS:]
        noise = np.log(extra[:, 4]) - np.log1p(-extra[:, 4])
        level = 1 + (theta_hat + noise > -0.5).astype(np.int64) + (theta_hat + noise > 1.0)
        conf[rows] = np.where(extra[:, 3] < cfg.confidence_missing, 0, level)
        batches.append((rows, steps))
        if n > cfg.n_students:
            _update_histories(histories, plan, rows, steps, conf)
    return _assemble(world, plan, batches, conf)


def _update_histories(histories, plan, rows, steps, conf):
    per: Dict[int, List[tuple]] = {}
    for st in steps:
        for k, r in enumerate(st["row"]):
            per.setdefault(int(r), []).append(
                (st["fc"][k], st["sc"][k], st["hint"][k], st["action"][k] != NO_ACTION,
                 st["rt1"][k], st["rt2"][k], st["view"][k])
            )
    for local, recs in per.items():
        row = rows[local]
        cols = list(zip(*recs))
        h = histories.setdefault(int(plan.student[row]), StudentHistory())
        h.add_arrays(np.array(cols[0]), np.array(cols[1]), np.array(cols[2]), np.array(cols[3]),
                     np.array(cols[4]), np.array(cols[5]), np.array(cols[6]), int(conf[row]))


def _resolve_mix(policy_mix) -> Tuple[Optional[AssignmentConfig], Dict[str, SimPolicy]]:
    if policy_mix is None:
        policy_mix = uniform_mix()
    if not isinstance(policy_mix, Mapping) or not policy_mix:
        raise ConfigError("policy mix must map policy ids to (weight, policy)")
    policies = {}
    weights = []
    for name, (w, pol) in policy_mix.items():
        if isinstance(pol, str):
            if pol != "random":
                raise ConfigError(f"unknown built-in policy {pol!r}")
            pol = UniformPolicy()
        policies[name] = pol
        weights.append((name, float(w)))
    total = sum(w for _, w in weights)
    if abs(total - 1.0) > 1e-9 or any(w <= 0 for _, w in weights):
        raise ConfigError("policy mix weights must be positive and sum to 1")
    if len(weights) == 1:
        return None, policies
    return AssignmentConfig.of(weights), policies


def simulate_table(world: World, policy_mix: Optional[PolicyMix] = None, n_sessions: int = 1000,
                   seed: int = 0) -> SimResult:
    """Simulate ``n_sessions`` sessions; session i belongs to student i mod n_students."""
    if n_sessions < 0:
        raise ConfigError("n_sessions must be non-negative")
    assignment, policies = _resolve_mix(policy_mix)
    width = _table_width(world)
    uniforms = _session_uniforms(seed, 0, n_sessions, width)
    plan = _plan(world, n_sessions, seed, assignment, uniforms, next(iter(policies)))
    return _simulate(world, plan, uniforms, policies)


def run_experiment(world: World, policy_mix: Optional[PolicyMix] = None, n_sessions: int = 1000,
                   seed: int = 0, out=None) -> str:
    """Simulate sessions and return them as an interaction-log stream."""
    result = simulate_table(world, policy_mix, n_sessions, seed)
    return write_log_stream(result.sessions(), out)


def simulate_session(world: World, student: Union[int, str], concept: Union[int, str],
                     policy: Optional[SimPolicy] = None, seed: int = 0,
                     session_index: int = 0) -> PracticeSession:
    """One session of ``student`` on ``concept`` from block ``session_index`` of the seed's stream."""
    arr = world.arrays()
    s_idx = student if isinstance(student, (int, np.integer)) else \
        [p.student_id for p in world.students].index(student)
    c_idx = concept if isinstance(concept, (int, np.integer)) else list(world.concepts).index(concept)
    if not (arr["pool"][c_idx] >= 0).any():
        raise EmptyConcept(world.concepts[c_idx])
    width = _table_width(world)
    uniforms = _session_uniforms(seed, session_index, 1, width)
    extra = uniforms[:, -_EXTRA_COLS:]
    plan = _Plan(
        index=np.array([0]), session_ids=[f"s{seed}-{session_index:07d}"],
        student=np.array([s_idx]), concept=np.array([c_idx]), attempt_index=np.array([1]),
        assigned=extra[:, 1] < world.config.assigned_rate, weekend=extra[:, 2] < 2.0 / 7.0,
        start_ts=np.array([_T0 + s_idx * 7.0]), policy=["p"],
    )
    steps, theta_hat = _run_batch(world, plan, np.array([0]), uniforms, {"p": policy or UniformPolicy()},
                                  np.zeros((1, 13)), np.zeros((1, 13), dtype=bool))
    noise = np.log(extra[:, 4]) - np.log1p(-extra[:, 4])
    level = 1 + int(theta_hat[0] + noise[0] > -0.5) + int(theta_hat[0] + noise[0] > 1.0)
    conf = np.array([0 if extra[0, 3] < world.config.confidence_missing else level])
    return _assemble(world, plan, [(np.array([0]), steps)], conf).table.session_object(0)


# ---------------------------------------------------------------- contrast sampler


@dataclass(frozen=True)
class ContrastModel:
    """Direct sampler of one treatment/control contrast at the exposure level.

    Covariates follow a synthetic population shaped like the context
    features; treatment is assigned with probability 1/2 (uniform logging).
    The effect is tau(x) = tau0 + tau_slope * x[feature]. Binary outcomes
    are Bernoulli(clip(base + prognostic * x + w * tau(x))); continuous
    outcomes add N(0, noise_sd^2) noise instead.
    """

    tau0: float = 0.0
    tau_slope: float = 0.0
    feature: str = "stud_ability"
    outcome: str = "binary"
    base: float = 0.3
    prognostic: float = 0.0
    noise_sd: float = 1.0
    x_dist: str = "normal"

    def tau(self, X: np.ndarray) -> np.ndarray:
        return self.tau0 + self.tau_slope * X[:, FEATURE_INDEX[self.feature]]

    def features(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        X = np.zeros((n, N_FEATURES))
        P = np.ones((n, N_FEATURES), dtype=bool)
        f = FEATURE_INDEX
        if self.x_dist == "uniform":
            X[:, f["stud_ability"]] = rng.uniform(-1.0, 1.0, n)
        else:
            X[:, f["stud_ability"]] = rng.normal(0.0, 1.0, n)
        X[:, f["resp_time"]] = 25.0 * np.exp(0.5 * rng.normal(size=n))
        pos = rng.integers(1, 16, n)
        X[:, f["quest_num"]] = pos
        first = pos == 1
        X[:, f["prev_resp_cor"]] = np.where(first, 0.0, rng.random(n) < 0.63)
        X[:, f["cor_rate"]] = np.where(first, 0.0, rng.binomial(np.maximum(pos - 1, 1), 0.63) / np.maximum(pos - 1, 1))
        P[:, f["prev_resp_cor"]] = ~first
        P[:, f["cor_rate"]] = ~first
        X[:, f["assigned"]] = rng.random(n) < 0.3
        X[:, f["weekend"]] = rng.random(n) < 2 / 7
        has_hist = rng.random(n) < 0.7
        n_sess = np.where(has_hist, rng.integers(1, 12, n), 0)
        quest = n_sess * rng.uniform(8, 16, n)
        X[:, f["confidence"]] = rng.integers(1, 4, n)
        P[:, f["confidence"]] = has_hist & (rng.random(n) < 0.7)
        X[:, f["num_sess_total"]] = n_sess
        X[:, f["num_quest_total"]] = np.round(quest)
        X[:, f["num_assist_total"]] = np.round(quest * rng.uniform(0.2, 0.4, n))
        X[:, f["avg_quest_num"]] = np.where(has_hist, quest / np.maximum(n_sess, 1), 0)
        X[:, f["avg_sess_succ"]] = rng.uniform(0, 1, n)
        X[:, f["avg_1st_cor"]] = rng.beta(6, 4, n)
        X[:, f["avg_2nd_cor"]] = rng.beta(4, 6, n)
        X[:, f["avg_1st_assists"]] = rng.beta(1, 9, n)
        X[:, f["avg_2nd_assists"]] = rng.beta(3, 7, n)
        X[:, f["med_1st_resp_time"]] = 25.0 * np.exp(0.3 * rng.normal(size=n))
        X[:, f["med_2nd_resp_time"]] = 15.0 * np.exp(0.3 * rng.normal(size=n))
        X[:, f["med_assist_time"]] = 12.0 * np.exp(0.3 * rng.normal(size=n))
        for name in FEATURES[8:]:
            P[:, f[name]] = has_hist
        X = np.where(P, X, 0.0)
        return X, P

    def mean_outcome(self, X: np.ndarray, w: np.ndarray) -> np.ndarray:
        lin = self.base + self.prognostic * X[:, FEATURE_INDEX[self.feature]] + w * self.tau(X)
        return np.clip(lin, P_MIN, P_MAX) if self.outcome == "binary" else lin

    def sample(self, n: int, seed: int):
        """Return (X, present, w, y) for ``n`` exposures."""
        rng = np.random.Generator(np.random.Philox(key=[seed, 0xC0_47_7A]))
        X, P = self.features(n, rng)
        w = (rng.random(n) < 0.5).astype(float)
        mu = self.mean_outcome(X, w)
        if self.outcome == "binary":
            y = (rng.random(n) < mu).astype(float)
        else:
            y = mu + self.noise_sd * rng.normal(size=n)
        return X, P, w, y

    def oracle_gain(self) -> float:
        """E[max(tau, 0)] - max(E[tau], 0) for the linear effect, unclamped."""
        a, s = self.tau0, self.tau_slope
        if self.x_dist == "uniform":
            # tau ~ U(a - |s|, a + |s|)
            lo, hi = a - abs(s), a + abs(s)
            if hi <= 0:
                pos = 0.0
            elif lo >= 0:
                pos = a
            else:
                pos = hi * hi / (2 * (hi - lo))
            return pos - max(a, 0.0)
        sd = abs(s)
        if sd == 0:
            return max(a, 0.0) - max(a, 0.0)
        z = a / sd
        phi = math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        cdf = 0.5 * math.erfc(-z / math.sqrt(2))
        return a * cdf + sd * phi - max(a, 0.0)
