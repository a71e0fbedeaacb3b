"""Contextual treat/control policies and their matched-sample values."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..statkit import TestResult, welch_from_stats
from .context import ContextVector
from .forest import CateModel
from .treatment import TreatmentDataset


class NoMatchedSamples(ValueError):
    pass


@dataclass(frozen=True)
class ContextualPolicy:
    """Treat exactly where the model predicts a positive effect."""

    question_id: str
    treat_action: str
    control_action: str
    model: CateModel

    def decide(self, X: np.ndarray, present: np.ndarray) -> np.ndarray:
        return self.model.predict(X, present) > 0

    def action_for(self, x: ContextVector) -> str:
        treat = self.decide(np.array([x.values]), np.array([x.present]))[0]
        return self.treat_action if treat else self.control_action


@dataclass(frozen=True)
class ConstantPolicy:
    treat: bool
    treat_action: str = "treat"
    control_action: str = "control"

    def decide(self, X: np.ndarray, present: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(X).shape[0], self.treat)

    def action_for(self, x: ContextVector) -> str:
        return self.treat_action if self.treat else self.control_action


Policy = Union[ContextualPolicy, ConstantPolicy]


def derive_contextual_policy(model: CateModel, treat: str, control: str, question_id: str = "") -> ContextualPolicy:
    return ContextualPolicy(question_id, treat, control, model)


@dataclass(frozen=True)
class PolicyValue:
    v_hat: float
    se: float
    n_matched: int

    @property
    def variance(self) -> float:
        return self.se * self.se * self.n_matched


def estimate_policy_value(policy: Policy, td: TreatmentDataset) -> PolicyValue:
    """Mean outcome over samples whose logged arm agrees with the policy."""
    decision = policy.decide(td.X, td.present)
    matched = decision == (td.w == 1)
    y = td.y[matched]
    if y.size == 0:
        raise NoMatchedSamples("no logged sample agrees with the policy")
    se = float(y.std(ddof=1) / math.sqrt(y.size)) if y.size > 1 else 0.0
    return PolicyValue(float(y.mean()), se, int(y.size))


def compare_policy_values(contextual: PolicyValue, mab: PolicyValue) -> TestResult:
    """One-sided Welch test of v_contextual > v_mab, treating the two as independent."""
    return welch_from_stats(
        contextual.v_hat, contextual.variance, contextual.n_matched,
        mab.v_hat, mab.variance, mab.n_matched,
    )
