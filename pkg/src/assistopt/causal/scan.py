"""Batch heterogeneity scan over many (question, treat, control) contrasts.

Every contrast and outcome gets per-covariate linear interaction tests,
a forest with calibration and RATE tests on a held-out half, and a
contextual-versus-MAB value comparison. P-values are BH-adjusted within
each test type and outcome; the report gives detection proportions.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..domain import IrtItem, QuestionId
from ..ingestion import FilteredDataset
from ..mab import MabPolicy, UnknownQuestion
from ..outcomes import ABILITY, REATTEMPT, REWARD, SUCCESS, RewardWeights
from ..statkit import StatError, bh_adjust
from .context import FEATURES
from .forest import ForestConfig, InsufficientData, fit_cate_forest
from .htetests import AUTOC, calibration_test, rate_autoc
from .policy import (
    ConstantPolicy, NoMatchedSamples, compare_policy_values, derive_contextual_policy, estimate_policy_value,
)
from .treatment import (
    CovariateMissing, EmptyArm, InvalidContrast, TreatmentDataset, UnknownAction,
    build_treatment_dataset, linear_hte_test,
)

OUTCOME_LABELS: Dict[str, str] = {
    REWARD: "Reward",
    REATTEMPT: "Reatt. Cor.",
    ABILITY: "Stud. Abil.",
    SUCCESS: "Sess. Succ.",
}
DEFAULT_OUTCOMES = tuple(OUTCOME_LABELS)
FOREST_TESTS = ("calibration", "rate")
POLICY_TESTS = ("cb_vs_mab",)

Contrast = Tuple[QuestionId, str, str]


@dataclass(frozen=True)
class ScanConfig:
    forest: ForestConfig = ForestConfig()
    seed: int = 0
    q: float = 0.2
    alpha: float = 0.05
    holdout: float = 0.5
    standardize: bool = True
    rate_target: str = AUTOC
    weights: RewardWeights = RewardWeights()


@dataclass
class ContrastResult:
    question_id: str
    treat: str
    control: str
    outcome: str
    n: int = 0
    linear_p: Dict[str, float] = field(default_factory=dict)
    forest_p: Dict[str, float] = field(default_factory=dict)
    policy_p: Dict[str, float] = field(default_factory=dict)
    detected: Dict[str, bool] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class HteReport:
    outcomes: Tuple[str, ...]
    results: List[ContrastResult]
    config: ScanConfig
    metadata: Dict[str, object] = field(default_factory=dict)

    def _proportion(self, outcome: str, key: str) -> float:
        rows = [r for r in self.results if r.outcome == outcome and r.ok]
        if not rows:
            return 0.0
        return sum(r.detected.get(key, False) for r in rows) / len(rows)

    def table(self, kind: str) -> Dict[str, Dict[str, float]]:
        """Detection proportions keyed by row then outcome."""
        rows = {"linear": FEATURES, "forest": FOREST_TESTS, "policy": POLICY_TESTS}[kind]
        prefix = {"linear": "linear:", "forest": "forest:", "policy": "policy:"}[kind]
        return {r: {o: self._proportion(o, prefix + r) for o in self.outcomes} for r in rows}

    def to_csv(self, kind: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test"] + [OUTCOME_LABELS.get(o, o) for o in self.outcomes])
        for row, cells in self.table(kind).items():
            w.writerow([row] + [f"{cells[o]:.6f}" for o in self.outcomes])
        return buf.getvalue()

    def to_json(self) -> str:
        cfg = asdict(self.config)
        return json.dumps({
            "config": cfg,
            "metadata": self.metadata,
            "tables": {k: self.table(k) for k in ("linear", "forest", "policy")},
            "contrasts": [asdict(r) for r in self.results],
        }, indent=2, sort_keys=True)


def _test_contrast(res: ContrastResult, td: TreatmentDataset, cfg: ScanConfig, seed: int):
    """Fill raw p-values; anything untestable gets p = 1."""
    res.n = td.n
    for cov in FEATURES:
        try:
            fit = linear_hte_test(td, cov, standardize=cfg.standardize)
            res.linear_p[cov] = float(fit.wald_p["wx"])
        except (StatError, CovariateMissing, np.linalg.LinAlgError):
            res.linear_p[cov] = 1.0
    res.forest_p = {t: 1.0 for t in FOREST_TESTS}
    res.policy_p = {t: 1.0 for t in POLICY_TESTS}
    fit_td, held = td.split(1.0 - cfg.holdout, seed)
    try:
        model = fit_cate_forest(fit_td, cfg.forest, seed)
    except InsufficientData:
        return
    try:
        res.forest_p["calibration"] = calibration_test(model, held).p_value
    except StatError:
        pass
    try:
        res.forest_p["rate"] = rate_autoc(model, held, seed, cfg.rate_target).p_value
    except StatError:
        pass
    try:
        cb = estimate_policy_value(derive_contextual_policy(model, td.treat_action, td.control_action), held)
        mab = estimate_policy_value(ConstantPolicy(False), held)
        res.policy_p["cb_vs_mab"] = compare_policy_values(cb, mab).p_value
    except (StatError, NoMatchedSamples):
        pass


def _adjust(results: Sequence[ContrastResult], outcomes: Sequence[str], cfg: ScanConfig):
    """BH within each (test type, outcome) family, plus the raw alpha cut."""
    for outcome in outcomes:
        rows = [r for r in results if r.outcome == outcome and r.ok]
        families = {
            "linear": [(r, "linear:" + c, r.linear_p[c]) for r in rows for c in FEATURES],
            **{f"forest:{t}": [(r, "forest:" + t, r.forest_p[t]) for r in rows] for t in FOREST_TESTS},
            **{f"policy:{t}": [(r, "policy:" + t, r.policy_p[t]) for r in rows] for t in POLICY_TESTS},
        }
        for members in families.values():
            if not members:
                continue
            rejected, _ = bh_adjust([p for _, _, p in members], cfg.q)
            for (r, key, p), rej in zip(members, rejected):
                r.detected[key] = bool(rej) and p < cfg.alpha


def scan_treatment_datasets(tds: Sequence[Tuple[Contrast, str, TreatmentDataset]],
                            config: ScanConfig = ScanConfig()) -> HteReport:
    """Scan pre-built datasets given as ((question, treat, control), outcome, td)."""
    results = []
    outcomes: List[str] = []
    for i, ((q, t, c), outcome, td) in enumerate(tds):
        if outcome not in outcomes:
            outcomes.append(outcome)
        res = ContrastResult(q, t, c, outcome)
        _test_contrast(res, td, config, config.seed + i)
        results.append(res)
    _adjust(results, outcomes, config)
    return HteReport(tuple(outcomes), results, config, _metadata(config))


def _metadata(config: ScanConfig) -> Dict[str, object]:
    return {
        "policy_test": "welch one-sided, contextual and MAB values treated as independent",
        "linear_covariates": "standardized" if config.standardize else "raw",
        "rate_target": config.rate_target,
    }


def hte_scan(dataset: FilteredDataset, contrasts: Sequence[Contrast], items: Mapping[QuestionId, IrtItem],
             outcomes: Sequence[str] = DEFAULT_OUTCOMES, config: ScanConfig = ScanConfig()) -> HteReport:
    results: List[ContrastResult] = []
    k = 0
    for q, t, c in contrasts:
        for outcome in outcomes:
            res = ContrastResult(q, t, c, outcome)
            try:
                td = build_treatment_dataset(q, dataset, t, c, outcome, items, config.weights)
                _test_contrast(res, td, config, config.seed + k)
            except (InvalidContrast, UnknownAction, UnknownQuestion, EmptyArm, StatError) as exc:
                res.error = f"{type(exc).__name__}: {exc}"
            results.append(res)
            k += 1
    _adjust(results, outcomes, config)
    return HteReport(tuple(outcomes), results, config, _metadata(config))


def mab_contrasts(policy: MabPolicy) -> List[Contrast]:
    """Every non-MAB action of each trained question against the MAB choice."""
    out = []
    for q, entry in sorted(policy.entries.items()):
        if entry.action_id is None:
            continue
        out.extend((q, a, entry.action_id) for a in entry.action_ids if a != entry.action_id)
    return out


@dataclass(frozen=True)
class PolicyComparison:
    question_id: str
    treat: str
    control: str
    outcome: str
    v_cb: float
    se_cb: float
    n_cb: int
    v_mab: float
    se_mab: float
    n_mab: int
    statistic: float
    p_value: float


def cb_compare(dataset: FilteredDataset, contrasts: Sequence[Contrast], items: Mapping[QuestionId, IrtItem],
               outcome: str = REWARD, config: ScanConfig = ScanConfig()) -> List[PolicyComparison]:
    """Held-out contextual policy value against the constant MAB action, per contrast."""
    rows = []
    for k, (q, t, c) in enumerate(contrasts):
        try:
            td = build_treatment_dataset(q, dataset, t, c, outcome, items, config.weights)
            fit_td, held = td.split(1.0 - config.holdout, config.seed + k)
            model = fit_cate_forest(fit_td, config.forest, config.seed + k)
            cb = estimate_policy_value(derive_contextual_policy(model, t, c, q), held)
            mab = estimate_policy_value(ConstantPolicy(False, t, c), held)
            res = compare_policy_values(cb, mab)
        except (InvalidContrast, UnknownAction, UnknownQuestion, EmptyArm, StatError,
                InsufficientData, NoMatchedSamples):
            continue
        rows.append(PolicyComparison(q, t, c, outcome, cb.v_hat, cb.se, cb.n_matched,
                                     mab.v_hat, mab.se, mab.n_matched, res.statistic, res.p_value))
    return rows


def comparisons_to_csv(rows: Sequence[PolicyComparison]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(PolicyComparison.__dataclass_fields__)
    w.writerow(cols)
    for r in rows:
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in (getattr(r, c) for c in cols)])
    return buf.getvalue()
