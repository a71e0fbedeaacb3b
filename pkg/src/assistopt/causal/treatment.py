"""Treatment/control datasets for one question and the estimators that need
no model: difference in means and the per-covariate interaction test."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Tuple

import numpy as np

from ..domain import IrtItem, QuestionId
from ..ingestion import FilteredDataset
from ..mab import ExposureTable, UnknownQuestion
from ..outcomes import BINARY_MEASURES, RewardWeights
from ..statkit import DegenerateSample, RegressionFit, logistic_wald, norm_ppf, ols_wald
from .context import FEATURE_INDEX, FEATURES, N_FEATURES, ContextVector, context_matrix


class InvalidContrast(ValueError):
    pass


class UnknownAction(KeyError):
    pass


class EmptyArm(ValueError):
    pass


class CovariateMissing(ValueError):
    pass


@dataclass(frozen=True)
class TreatmentSample:
    x: ContextVector
    w: int
    y: float


@dataclass
class TreatmentDataset:
    """Columnar (X, presence, w, y) samples for one treat/control contrast."""

    X: np.ndarray
    present: np.ndarray
    w: np.ndarray
    y: np.ndarray
    treat_action: str = "treat"
    control_action: str = "control"
    outcome_name: str = "y"
    question_id: str = ""
    binary: Optional[bool] = None
    feature_names: Tuple[str, ...] = field(default=FEATURES)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.present = np.asarray(self.present, dtype=bool)
        self.w = np.asarray(self.w, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        n = self.y.size
        if self.X.shape != (n, N_FEATURES) or self.present.shape != (n, N_FEATURES) or self.w.shape != (n,):
            raise ValueError("treatment dataset columns have inconsistent shapes")
        if not np.all((self.w == 0) | (self.w == 1)):
            raise ValueError("treatment indicator must be 0 or 1")
        if self.binary is None:
            self.binary = bool(np.all((self.y == 0) | (self.y == 1)))

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def n_treated(self) -> int:
        return int(self.w.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    @property
    def samples(self) -> List[TreatmentSample]:
        return [
            TreatmentSample(ContextVector.from_arrays(self.X[i], self.present[i]), int(self.w[i]), float(self.y[i]))
            for i in range(self.n)
        ]

    @classmethod
    def from_samples(cls, samples, **meta) -> "TreatmentDataset":
        samples = list(samples)
        X = np.array([s.x.values for s in samples], dtype=float).reshape(len(samples), N_FEATURES)
        P = np.array([s.x.present for s in samples], dtype=bool).reshape(len(samples), N_FEATURES)
        return cls(X, P, np.array([s.w for s in samples], dtype=float), np.array([s.y for s in samples], dtype=float), **meta)

    def subset(self, idx) -> "TreatmentDataset":
        idx = np.asarray(idx)
        return TreatmentDataset(
            self.X[idx], self.present[idx], self.w[idx], self.y[idx], self.treat_action, self.control_action,
            self.outcome_name, self.question_id, self.binary, self.feature_names,
        )

    def split(self, fraction: float = 0.5, seed: int = 0) -> Tuple["TreatmentDataset", "TreatmentDataset"]:
        """Random (fit, held-out) split, stratified by arm."""
        rng = np.random.Generator(np.random.Philox(key=[seed, 0x5B117]))
        fit = np.zeros(self.n, dtype=bool)
        for arm in (0.0, 1.0):
            idx = np.nonzero(self.w == arm)[0]
            pick = rng.permutation(idx)[: int(round(fraction * idx.size))]
            fit[pick] = True
        return self.subset(np.nonzero(fit)[0]), self.subset(np.nonzero(~fit)[0])


def build_treatment_dataset(question_id: QuestionId, dataset: FilteredDataset, treat: str, control: str,
                            outcome_name: str, items: Mapping[QuestionId, IrtItem],
                            weights: RewardWeights = RewardWeights()) -> TreatmentDataset:
    """One sample per exposure of ``treat`` (w = 1) or ``control`` (w = 0)."""
    if treat == control:
        raise InvalidContrast("treat and control actions must differ")
    acts = dataset.action_sets.get(question_id)
    if acts is None:
        raise UnknownQuestion(question_id)
    for a in (treat, control):
        if a not in acts:
            raise UnknownAction(f"{a!r} is not an action of {question_id}")
    ex = ExposureTable.build(dataset, items)
    t = dataset.table
    qcode = t.question_ids.index(question_id)
    a_codes = {aid: i for i, aid in enumerate(ex.action_ids)}
    y_all = ex.column(outcome_name, weights)
    is_t = (ex.q == qcode) & (ex.a == a_codes.get(treat, -9))
    is_c = (ex.q == qcode) & (ex.a == a_codes.get(control, -9))
    keep = (is_t | is_c) & ~np.isnan(y_all)
    if not (keep & is_t).any() or not (keep & is_c).any():
        raise EmptyArm(f"{question_id}: an arm has no usable samples for {outcome_name}")
    rows = dataset.exposure_rows[keep]
    X, P = context_matrix(t, rows, items, dataset.history)
    return TreatmentDataset(
        X, P, is_t[keep].astype(float), y_all[keep], treat, control, outcome_name, question_id,
        outcome_name in BINARY_MEASURES,
    )


@dataclass(frozen=True)
class AteResult:
    tau_hat: float
    se: float
    ci95: Tuple[float, float]


def estimate_ate(td: TreatmentDataset) -> AteResult:
    """Difference in arm means with the unpooled (Welch) standard error."""
    y1 = td.y[td.w == 1]
    y0 = td.y[td.w == 0]
    if y1.size < 2 or y0.size < 2:
        raise DegenerateSample("ATE needs at least two samples per arm")
    tau = float(y1.mean() - y0.mean())
    se = float(np.sqrt(y1.var(ddof=1) / y1.size + y0.var(ddof=1) / y0.size))
    z = norm_ppf(0.975)
    return AteResult(tau, se, (tau - z * se, tau + z * se))


def linear_hte_test(td: TreatmentDataset, covariate: str, standardize: bool = False,
                    interaction: bool = True, min_coverage: float = 0.9) -> RegressionFit:
    """Regress y on [1, w, x, w*x] and report Wald tests (logistic for binary y).

    Rows where the covariate is masked are dropped. With ``standardize`` the
    covariate is scaled to zero mean and unit variance first. Setting
    ``interaction=False`` fits the constrained model [1, w, x].
    """
    j = FEATURE_INDEX[covariate]
    keep = td.present[:, j]
    if td.n == 0 or keep.mean() < min_coverage:
        raise CovariateMissing(f"{covariate} present in fewer than {min_coverage:.0%} of samples")
    x = td.X[keep, j]
    w = td.w[keep]
    y = td.y[keep]
    if standardize:
        sd = x.std()
        if sd == 0:
            raise DegenerateSample(f"{covariate} is constant")
        x = (x - x.mean()) / sd
    cols = [np.ones_like(x), w, x]
    names = ["const", "w", "x"]
    if interaction:
        cols.append(w * x)
        names.append("wx")
    design = np.column_stack(cols)
    if td.binary:
        return logistic_wald(design, y, names)
    return ols_wald(design, y, names)
