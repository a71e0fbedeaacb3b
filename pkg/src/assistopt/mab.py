"""Per-question assistance policies: effect estimates, the Welch-gated
objective-selection rule, and repeated k-fold offline evaluation.

Training and evaluation run on per-(question, action) summary statistics
(count, sum, sum of squares) so that one cross-validation fold costs a few
``bincount`` calls instead of a pass over Python objects.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .domain import IrtItem, QuestionId
from .ingestion import FilteredDataset
from .outcomes import (
    ABILITY,
    MEASURES,
    REATTEMPT,
    REWARD,
    RewardWeights,
    combined_reward,
    outcome_columns,
    session_abilities,
)
from .statkit import DegenerateSample, TestResult, anova_f, mean_ci, norm_ppf, t_sf, welch_from_stats

ALL_MEASURES: Tuple[str, ...] = (REWARD,) + MEASURES
OBJ_REWARD = "combined_reward"
OBJ_REATTEMPT = "reattempt_correct"
OBJ_FALLBACK = "fallback_random"
RANDOM = "random"
NO_ASSIST = "no_assistance"
GATED = "objective_selection"
DEFAULT_P_THRESHOLD = 0.05
P_GRID = tuple(round(0.01 * k, 2) for k in range(1, 11))
W1_GRID = tuple(round(0.1 * k, 1) for k in range(11))
_Z95 = norm_ppf(0.975)


class UnknownQuestion(KeyError):
    pass


def argmax_policy(measure: str) -> str:
    return f"argmax:{measure}"


DEFAULT_POLICIES: Tuple[str, ...] = (RANDOM, NO_ASSIST) + tuple(argmax_policy(m) for m in ALL_MEASURES) + (GATED,)


def _is_no_assistance(action_id: str) -> bool:
    return action_id == NO_ASSIST or action_id.endswith("/" + NO_ASSIST)


# ---------------------------------------------------------------- exposures


@dataclass
class ExposureTable:
    """One row per usable exposure of a question with an action set.

    ``values`` holds every base measure (NaN = missing); reward columns are
    derived on demand for any weighting.
    """

    question_ids: List[QuestionId]
    action_ids: List[str]
    q: np.ndarray
    a: np.ndarray
    session: np.ndarray
    n_sessions: int
    values: Dict[str, np.ndarray]
    action_sets: Dict[int, Tuple[int, ...]]
    eligible: np.ndarray  # per question code
    _ability: Optional[object] = field(default=None, repr=False)

    @classmethod
    def build(cls, dataset: FilteredDataset, items: Mapping[QuestionId, IrtItem],
              count_reattempts_toward_success: bool = True) -> "ExposureTable":
        key = ("exposures", count_reattempts_toward_success)
        hit = dataset._cache.get(key)
        if hit is not None and hit[0] is items:
            return hit[1]
        t = dataset.table
        rows = dataset.exposure_rows
        # ability needs one MAP fit per session; defer it until a measure asks
        values = outcome_columns(t, rows, items, count_reattempts_toward_success, np.zeros(t.n_sessions))
        del values[ABILITY]
        q_index = {qid: i for i, qid in enumerate(t.question_ids)}
        a_names = list(t.action_ids)
        a_index = {aid: i for i, aid in enumerate(a_names)}
        sets: Dict[int, Tuple[int, ...]] = {}
        for qid, acts in dataset.action_sets.items():
            if qid not in q_index:
                continue
            codes = []
            for aid in sorted(acts):
                if aid not in a_index:
                    a_index[aid] = len(a_names)
                    a_names.append(aid)
                codes.append(a_index[aid])
            sets[q_index[qid]] = tuple(codes)
        eligible = np.zeros(len(t.question_ids), dtype=bool)
        for qid in dataset.eligible_questions:
            eligible[q_index[qid]] = True
        table = cls(
            question_ids=list(t.question_ids), action_ids=a_names, q=t.question[rows], a=t.action[rows],
            session=t.session[rows], n_sessions=t.n_sessions, values=values, action_sets=sets,
            eligible=eligible,
            _ability=lambda: (session_abilities(t, items) if t.n_records else np.zeros(t.n_sessions))[t.session[rows]],
        )
        dataset._cache[key] = (items, table)
        return table

    def column(self, measure: str, weights: RewardWeights = RewardWeights()) -> np.ndarray:
        if ABILITY not in self.values and measure in (ABILITY, REWARD):
            self.values[ABILITY] = self._ability()
        if measure == REWARD:
            return combined_reward(self.values[REATTEMPT], self.values[ABILITY], weights)
        return self.values[measure]

    def question_code(self, question_id: QuestionId) -> int:
        try:
            code = self.question_ids.index(question_id)
        except ValueError:
            raise UnknownQuestion(question_id) from None
        if code not in self.action_sets:
            raise UnknownQuestion(question_id)
        return code


# ---------------------------------------------------------------- effects


@dataclass(frozen=True)
class EffectEstimate:
    action_id: str
    n: int
    means: Dict[str, Optional[float]]
    halfwidths: Dict[str, Optional[float]]
    n_eff: Dict[str, int]


@dataclass(frozen=True)
class QuestionEffectSummary:
    question_id: QuestionId
    estimates: Tuple[EffectEstimate, ...]
    effect_gap: Dict[str, Optional[float]]
    pooled_variance: Dict[str, Optional[float]]

    def estimate(self, action_id: str) -> EffectEstimate:
        for e in self.estimates:
            if e.action_id == action_id:
                return e
        raise KeyError(action_id)


def _samples(ex: ExposureTable, qcode: int, acode: int, measure: str, weights: RewardWeights,
             rows: Optional[np.ndarray] = None) -> np.ndarray:
    sel = (ex.q == qcode) & (ex.a == acode)
    if rows is not None:
        sel &= rows
    v = ex.column(measure, weights)[sel]
    return v[~np.isnan(v)]


def estimate_action_effects(question_id: QuestionId, dataset: FilteredDataset,
                            items: Mapping[QuestionId, IrtItem],
                            weights: RewardWeights = RewardWeights(),
                            measures: Sequence[str] = ALL_MEASURES) -> QuestionEffectSummary:
    ex = ExposureTable.build(dataset, items)
    qcode = ex.question_code(question_id)
    estimates = []
    groups: Dict[str, List[np.ndarray]] = {m: [] for m in measures}
    for acode in ex.action_sets[qcode]:
        means, hws, n_eff = {}, {}, {}
        n = int(((ex.q == qcode) & (ex.a == acode)).sum())
        for m in measures:
            v = _samples(ex, qcode, acode, m, weights)
            n_eff[m] = int(v.size)
            if v.size:
                means[m], hws[m] = mean_ci(v)
                groups[m].append(v)
            else:
                means[m] = hws[m] = None
        estimates.append(EffectEstimate(ex.action_ids[acode], n, means, hws, n_eff))
    gap, pooled = {}, {}
    for m in measures:
        present = [e.means[m] for e in estimates if e.means[m] is not None]
        gap[m] = (max(present) - min(present)) if present else None
        g = groups[m]
        dof = sum(v.size for v in g) - len(g)
        pooled[m] = float(sum(((v - v.mean()) ** 2).sum() for v in g) / dof) if dof > 0 else None
    return QuestionEffectSummary(question_id, tuple(estimates), gap, pooled)


def anova_screen(question_id: QuestionId, dataset: FilteredDataset, measure: str = REATTEMPT,
                 items: Optional[Mapping[QuestionId, IrtItem]] = None,
                 weights: RewardWeights = RewardWeights()) -> TestResult:
    """One-way ANOVA of ``measure`` across the question's actions."""
    ex = ExposureTable.build(dataset, items or {})
    qcode = ex.question_code(question_id)
    groups = [_samples(ex, qcode, a, measure, weights) for a in ex.action_sets[qcode]]
    return anova_f(groups)


# ---------------------------------------------------------------- training core


@dataclass
class _PairStats:
    """count/sum/sumsq per (question, action slot), shape (n_questions, max_actions)."""

    n: np.ndarray
    s: np.ndarray
    ss: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.n > 0, self.s / np.maximum(self.n, 1), np.nan)

    @property
    def var(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            v = (self.ss - self.s * self.s / np.maximum(self.n, 1)) / (self.n - 1)
        return np.where(self.n > 1, np.maximum(v, 0.0), np.nan)


class _Layout:
    """Question codes with an action set, and each exposure's action slot."""

    def __init__(self, ex: ExposureTable, eligible_only: bool = True):
        qs = sorted(q for q in ex.action_sets if ex.eligible[q] or not eligible_only)
        self.questions = np.array(qs, dtype=np.int64)
        self.width = max([len(ex.action_sets[q]) for q in qs] + [1])
        self.slots = np.full((len(qs), self.width), -1, dtype=np.int64)
        row_of = np.full(len(ex.question_ids), -1, dtype=np.int64)
        slot_of: Dict[Tuple[int, int], int] = {}
        for i, q in enumerate(qs):
            row_of[q] = i
            for j, a in enumerate(ex.action_sets[q]):
                self.slots[i, j] = a
                slot_of[(q, a)] = j
        self.row = row_of[ex.q]
        slot = np.array([slot_of.get((int(q), int(a)), -1) for q, a in zip(ex.q, ex.a)], dtype=np.int64)
        self.usable = (self.row >= 0) & (slot >= 0)
        self.key = np.where(self.usable, self.row * self.width + slot, 0)
        self.no_assist = np.array(
            [next((j for j, a in enumerate(ex.action_sets[q]) if _is_no_assistance(ex.action_ids[a])), -1)
             for q in qs],
            dtype=np.int64,
        )

    def stats(self, values: np.ndarray, mask: np.ndarray) -> _PairStats:
        ok = mask & self.usable & ~np.isnan(values)
        k = self.key[ok]
        v = values[ok]
        size = len(self.questions) * self.width
        shape = (len(self.questions), self.width)
        return _PairStats(
            np.bincount(k, minlength=size).reshape(shape).astype(float),
            np.bincount(k, weights=v, minlength=size).reshape(shape),
            np.bincount(k, weights=v * v, minlength=size).reshape(shape),
        )


def _argmax_slot(stats: _PairStats, valid: np.ndarray) -> np.ndarray:
    # slots are sorted by action id, so the first maximum is the lexicographic tie-break
    m = np.where(valid & (stats.n > 0), stats.mean, -np.inf)
    best = np.argmax(m, axis=1)
    return np.where(np.isfinite(m.max(axis=1)), best, -1)


def _gated_slots(reward: _PairStats, reatt: _PairStats, valid: np.ndarray, p_threshold: float):
    """Objective selection for every question row; returns (slot, used_reward)."""
    a_r = _argmax_slot(reward, valid)
    a_c = _argmax_slot(reatt, valid)
    rows = np.arange(a_r.size)
    same = (a_r == a_c) | (a_c < 0) | (a_r < 0)
    r_idx, c_idx = np.maximum(a_r, 0), np.maximum(a_c, 0)
    m1, v1, n1 = reward.mean[rows, r_idx], reward.var[rows, r_idx], reward.n[rows, r_idx]
    m2, v2, n2 = reward.mean[rows, c_idx], reward.var[rows, c_idx], reward.n[rows, c_idx]
    p = _welch_p(m1, v1, n1, m2, v2, n2)
    use_r = same | (p < p_threshold)
    slot = np.where(same, np.where(a_r >= 0, a_r, a_c), np.where(use_r, a_r, a_c))
    return slot, use_r


def _welch_p(m1, v1, n1, m2, v2, n2) -> np.ndarray:
    """Vectorized one-sided Welch p-values; undefined tests give p = 1."""
    with np.errstate(invalid="ignore", divide="ignore"):
        s1 = v1 / n1
        s2 = v2 / n2
        se2 = s1 + s2
        ok = (n1 >= 2) & (n2 >= 2) & (se2 > 0) & np.isfinite(se2)
        se2_safe = np.where(ok, se2, 1.0)
        t = np.where(ok, (m1 - m2) / np.sqrt(se2_safe), 0.0)
        df = np.where(ok, se2_safe ** 2 / (s1 * s1 / np.maximum(n1 - 1, 1) + s2 * s2 / np.maximum(n2 - 1, 1)), 1.0)
    df = np.where(ok & np.isfinite(df) & (df > 0), df, 1.0)
    p = np.asarray(t_sf(t, df), dtype=float)
    return np.where(ok, p, 1.0)


def train_question_policy(question_id: QuestionId, dataset: FilteredDataset,
                          items: Mapping[QuestionId, IrtItem],
                          weights: RewardWeights = RewardWeights(),
                          p_threshold: float = DEFAULT_P_THRESHOLD) -> Tuple[str, str]:
    """Objective selection for one question: ``(action_id, objective)``.

    The combined-reward argmax wins over the reattempt argmax only when a
    one-sided Welch test on reward rejects at ``p_threshold``.
    """
    ex = ExposureTable.build(dataset, items)
    qcode = ex.question_code(question_id)
    acts = ex.action_sets[qcode]
    reward = [_samples(ex, qcode, a, REWARD, weights) for a in acts]
    reatt = [_samples(ex, qcode, a, REATTEMPT, weights) for a in acts]
    a_r = _first_max([v.mean() if v.size else -math.inf for v in reward])
    a_c = _first_max([v.mean() if v.size else -math.inf for v in reatt])
    if a_r is None and a_c is None:
        raise UnknownQuestion(f"{question_id} has no usable exposures")
    if a_r is None or a_c is None or a_r == a_c:
        best = a_r if a_r is not None else a_c
        return ex.action_ids[acts[best]], OBJ_REWARD
    try:
        x, y = reward[a_r], reward[a_c]
        if x.size < 2 or y.size < 2:
            raise DegenerateSample("too few samples")
        p = welch_from_stats(x.mean(), x.var(ddof=1), x.size, y.mean(), y.var(ddof=1), y.size).p_value
    except DegenerateSample:
        p = 1.0
    if p < p_threshold:
        return ex.action_ids[acts[a_r]], OBJ_REWARD
    return ex.action_ids[acts[a_c]], OBJ_REATTEMPT


def _first_max(values: Sequence[float]) -> Optional[int]:
    best, idx = -math.inf, None
    for i, v in enumerate(values):
        if v > best:
            best, idx = v, i
    return idx


# ---------------------------------------------------------------- policies


@dataclass(frozen=True)
class MabEntry:
    action_id: Optional[str]
    objective: str
    action_ids: Tuple[str, ...] = ()


@dataclass
class MabPolicy:
    entries: Dict[QuestionId, MabEntry]
    weights: RewardWeights
    metadata: Dict[str, object] = field(default_factory=dict)

    def action_for(self, question_id: QuestionId) -> Optional[str]:
        e = self.entries.get(question_id)
        return None if e is None else e.action_id

    @property
    def trained(self) -> Dict[QuestionId, str]:
        return {q: e.action_id for q, e in self.entries.items() if e.objective != OBJ_FALLBACK}


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _data_timestamp(dataset: FilteredDataset) -> str:
    ts = dataset.history.ts
    if ts.size == 0:
        return datetime.fromtimestamp(0, tz=timezone.utc).isoformat()
    return datetime.fromtimestamp(float(ts.max()), tz=timezone.utc).isoformat()


def train_mab_policy(dataset: FilteredDataset, items: Mapping[QuestionId, IrtItem],
                     weights: RewardWeights = RewardWeights(),
                     p_threshold: float = DEFAULT_P_THRESHOLD) -> MabPolicy:
    """Objective-selection entries for eligible questions, random fallback elsewhere."""
    entries: Dict[QuestionId, MabEntry] = {}
    ex = ExposureTable.build(dataset, items) if dataset.action_sets else None
    for qid in sorted(dataset.action_sets):
        acts = tuple(sorted(dataset.action_sets[qid]))
        if qid in dataset.eligible_questions and ex is not None:
            aid, obj = train_question_policy(qid, dataset, items, weights, p_threshold)
            entries[qid] = MabEntry(aid, obj, acts)
        else:
            entries[qid] = MabEntry(None, OBJ_FALLBACK, acts)
    meta = {
        "algorithm": GATED,
        "p_threshold": {"reward": p_threshold},
        "config_hash": _config_hash({"w1": weights.w1, "p": p_threshold, "report": dataset.filter_report}),
        "timestamp": _data_timestamp(dataset),
    }
    return MabPolicy(entries, weights, meta)


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class EvalConfig:
    repeats: int = 20
    folds: int = 5
    seed: int = 0
    weighting: str = "matched"  # or "n_q": self-normalized inverse propensity
    p_threshold: float = DEFAULT_P_THRESHOLD

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("offline evaluation needs at least 2 folds")
        if self.repeats < 1:
            raise ValueError("offline evaluation needs at least 1 repeat")
        if self.weighting not in ("matched", "n_q"):
            raise ValueError(f"unknown weighting {self.weighting!r}")


@dataclass
class EvalReport:
    policies: Tuple[str, ...]
    measures: Tuple[str, ...]
    mean: Dict[str, Dict[str, float]]
    halfwidth: Dict[str, Dict[str, float]]
    n: Dict[str, Dict[str, float]]
    repeats: int
    folds: int
    metadata: Dict[str, object] = field(default_factory=dict)

    def value(self, policy: str, measure: str) -> Tuple[float, float]:
        return self.mean[policy][measure], self.halfwidth[policy][measure]


def _session_folds(n_sessions: int, folds: int, seed: int, repeat: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=[seed, 0xF01D_0000 + repeat]))
    perm = rng.permutation(n_sessions)
    fold = np.empty(n_sessions, dtype=np.int64)
    fold[perm] = np.arange(n_sessions) % folds
    return fold


def _policy_slots(name: str, stats: Dict[str, _PairStats], layout: _Layout, valid: np.ndarray,
                  p_threshold: float) -> Optional[np.ndarray]:
    if name == RANDOM:
        return None
    if name == NO_ASSIST:
        return layout.no_assist
    if name == GATED:
        return _gated_slots(stats[REWARD], stats[REATTEMPT], valid, p_threshold)[0]
    if name.startswith("argmax:"):
        return _argmax_slot(stats[name.split(":", 1)[1]], valid)
    raise ValueError(f"unknown policy {name!r}")


def offline_evaluate(dataset: FilteredDataset, items: Mapping[QuestionId, IrtItem],
                     weights: RewardWeights = RewardWeights(),
                     policies: Sequence[str] = DEFAULT_POLICIES,
                     repeats: int = 20, folds: int = 5, seed: int = 0,
                     measures: Sequence[str] = ALL_MEASURES,
                     config: Optional[EvalConfig] = None) -> EvalReport:
    """Repeated k-fold evaluation with folds drawn at the session level.

    Each fold trains every policy on the other folds and scores held-out
    exposures of eligible questions whose logged action equals the
    policy's choice. The random baseline is scored on all held-out
    exposures, its expected matched value under uniform logging. Per
    repeat, the estimate is the mean over held-out matches with a normal
    95% halfwidth; reported numbers are averages over repeats.
    """
    cfg = config or EvalConfig(repeats=repeats, folds=folds, seed=seed)
    policies = tuple(dict.fromkeys(list(policies)))
    for base in (RANDOM, NO_ASSIST):
        if base not in policies:
            policies = (base,) + policies
    ex = ExposureTable.build(dataset, items)
    layout = _Layout(ex)
    valid = layout.slots >= 0
    needed = set(measures) | {p.split(":", 1)[1] for p in policies if p.startswith("argmax:")}
    if GATED in policies:
        needed |= {REWARD, REATTEMPT}
    cols = {m: ex.column(m, weights) for m in needed}
    n_q = valid.sum(axis=1).astype(float)
    w_row = np.where(layout.usable, n_q[np.maximum(layout.row, 0)], 0.0) if cfg.weighting == "n_q" \
        else layout.usable.astype(float)
    # per (policy, measure): per-repeat mean and halfwidth
    acc = {p: {m: ([], [], []) for m in measures} for p in policies}
    for r in range(cfg.repeats):
        fold = _session_folds(ex.n_sessions, cfg.folds, cfg.seed, r)[ex.session] if ex.q.size else ex.q
        tot = {p: {m: np.zeros(4) for m in measures} for p in policies}
        for f in range(cfg.folds):
            test = fold == f
            stats = {m: layout.stats(cols[m], ~test) for m in needed}
            for p in policies:
                slots = _policy_slots(p, stats, layout, valid, cfg.p_threshold)
                if slots is None:
                    hit = test & layout.usable
                    wt = hit.astype(float)
                else:
                    chosen = np.where(slots >= 0, layout.slots[np.arange(slots.size), np.maximum(slots, 0)], -2)
                    row_choice = np.where(layout.usable, chosen[np.maximum(layout.row, 0)], -3)
                    hit = test & layout.usable & (ex.a == row_choice)
                    wt = np.where(hit, w_row, 0.0)
                for m in measures:
                    v = cols[m]
                    ok = hit & ~np.isnan(v)
                    vw, vv = wt[ok], v[ok]
                    tot[p][m] += (vw.sum(), (vw * vw).sum(), (vw * vv).sum(), (vw * vv * vv).sum())
        for p in policies:
            for m in measures:
                sw, sw2, s1, s2 = tot[p][m]
                if sw <= 0:
                    continue
                mu = s1 / sw
                n_eff = sw * sw / sw2
                var = max(s2 / sw - mu * mu, 0.0) * n_eff / max(n_eff - 1.0, 1.0)
                means, hws, ns = acc[p][m]
                means.append(mu)
                hws.append(_Z95 * math.sqrt(var / n_eff))
                ns.append(n_eff)
    mean, hw, nn = {}, {}, {}
    for p in policies:
        mean[p], hw[p], nn[p] = {}, {}, {}
        for m in measures:
            means, hws, ns = acc[p][m]
            mean[p][m] = float(np.mean(means)) if means else float("nan")
            hw[p][m] = float(np.mean(hws)) if hws else float("nan")
            nn[p][m] = float(np.mean(ns)) if ns else 0.0
    meta = {
        "scoring": "matched logged action" if cfg.weighting == "matched" else "n_q-weighted matched action",
        "random_policy": "all held-out exposures",
        "fold_unit": "session",
        "seed": cfg.seed,
        "w1": weights.w1,
        "p_threshold": cfg.p_threshold,
        "eligible_questions": int(layout.questions.size),
    }
    return EvalReport(policies, tuple(measures), mean, hw, nn, cfg.repeats, cfg.folds, meta)


def pareto_sweep(dataset: FilteredDataset, items: Mapping[QuestionId, IrtItem],
                 w1_grid: Sequence[float] = W1_GRID,
                 policies: Sequence[str] = (RANDOM, NO_ASSIST, argmax_policy(REWARD)),
                 repeats: int = 20, folds: int = 5, seed: int = 0,
                 measures: Sequence[str] = ALL_MEASURES) -> List[Tuple[float, EvalReport]]:
    """One evaluation per reward weighting, ordered by w1."""
    for w in w1_grid:
        if not 0.0 <= w <= 1.0:
            raise ValueError(f"w1 grid value {w} outside [0, 1]")
    return [
        (float(w), offline_evaluate(dataset, items, RewardWeights(float(w)), policies, repeats, folds, seed, measures))
        for w in sorted(w1_grid)
    ]


def tune_p_threshold(dataset: FilteredDataset, items: Mapping[QuestionId, IrtItem],
                     weights: RewardWeights = RewardWeights(), grid: Sequence[float] = P_GRID,
                     measure: str = REWARD, repeats: int = 20, folds: int = 5, seed: int = 0) -> float:
    """Grid value whose gated policy has the best CV value on ``measure``; ties go to the smallest."""
    if not grid:
        raise ValueError("p-value grid must be non-empty")
    best_p, best_v = None, -math.inf
    for p in sorted(grid):
        cfg = EvalConfig(repeats=repeats, folds=folds, seed=seed, p_threshold=float(p))
        rep = offline_evaluate(dataset, items, weights, (GATED,), measures=(measure,), config=cfg)
        v = rep.mean[GATED][measure]
        if v > best_v:
            best_p, best_v = float(p), v
    return best_p if best_p is not None else float(sorted(grid)[0])


# ---------------------------------------------------------------- serialization


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.6f}"


def effects_to_csv(summaries: Sequence[QuestionEffectSummary], measures: Sequence[str] = ALL_MEASURES) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["question_id", "action_id", "n"]
    for m in measures:
        header += [f"{m}_mean", f"{m}_halfwidth"]
    w.writerow(header)
    for s in summaries:
        for e in s.estimates:
            row = [s.question_id, e.action_id, e.n]
            for m in measures:
                row += [_fmt(e.means.get(m)), _fmt(e.halfwidths.get(m))]
            w.writerow(row)
    return buf.getvalue()


def effects_to_json(summaries: Sequence[QuestionEffectSummary]) -> str:
    doc = [
        {
            "question_id": s.question_id,
            "effect_gap": s.effect_gap,
            "pooled_variance": s.pooled_variance,
            "estimates": [
                {"action_id": e.action_id, "n": e.n, "means": e.means, "halfwidths": e.halfwidths, "n_eff": e.n_eff}
                for e in s.estimates
            ],
        }
        for s in summaries
    ]
    return json.dumps(doc, indent=2, sort_keys=True)


def report_to_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["policy"]
    for m in report.measures:
        header += [f"{m}_mean", f"{m}_halfwidth", f"{m}_n"]
    w.writerow(header)
    for p in report.policies:
        row = [p]
        for m in report.measures:
            row += [_fmt(report.mean[p][m]), _fmt(report.halfwidth[p][m]), f"{report.n[p][m]:.1f}"]
        w.writerow(row)
    return buf.getvalue()


def report_to_json(report: EvalReport) -> str:
    return json.dumps({
        "policies": list(report.policies), "measures": list(report.measures), "mean": report.mean,
        "halfwidth": report.halfwidth, "n": report.n, "repeats": report.repeats, "folds": report.folds,
        "metadata": report.metadata,
    }, indent=2, sort_keys=True)


def pareto_to_csv(sweep: Sequence[Tuple[float, EvalReport]], policy: str = argmax_policy(REWARD)) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    measures = sweep[0][1].measures if sweep else ALL_MEASURES
    header = ["w1"]
    for m in measures:
        header += [f"{m}_mean", f"{m}_halfwidth"]
    w.writerow(header)
    for w1, rep in sweep:
        row = [f"{w1:.1f}"]
        for m in measures:
            row += [_fmt(rep.mean[policy][m]), _fmt(rep.halfwidth[policy][m])]
        w.writerow(row)
    return buf.getvalue()


def policy_to_dict(policy: MabPolicy) -> dict:
    return {
        "w1": policy.weights.w1,
        "metadata": policy.metadata,
        "entries": {
            q: {"action_id": e.action_id, "objective": e.objective, "action_ids": list(e.action_ids)}
            for q, e in sorted(policy.entries.items())
        },
    }
