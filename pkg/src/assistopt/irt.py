"""3PL item response model: response probabilities, MAP ability estimation
and Goldilocks question sequencing."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .domain import IrtItem, Question, QuestionId, QType

THETA_MIN, THETA_MAX = -4.0, 4.0
NEWTON_TOL = 1e-6
NEWTON_MAX_ITER = 50
# Coarse grid used to seed Newton: the 3PL posterior is not log-concave when c > 0.
_SEED_GRID = np.linspace(THETA_MIN, THETA_MAX, 33)


@dataclass(frozen=True)
class AbilityEstimate:
    theta: float
    n_responses: int
    converged: bool


class Exhausted(LookupError):
    """No unanswered question remains in the pool."""


def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def p_correct(theta: float, item: IrtItem) -> float:
    """c + (1 - c) * logistic(a * (theta - b))."""
    return float(item.c + (1.0 - item.c) * _logistic(item.a * (theta - item.b)))


def dp_dtheta(theta: float, item: IrtItem) -> float:
    s = _logistic(item.a * (theta - item.b))
    return float(item.a * (1.0 - item.c) * s * (1.0 - s))


# The functions below operate on parameter arrays shaped (..., n_items); the
# trailing axis runs over responses. ``mask`` marks which entries are real.


def _terms(theta, a, b, c, y, mask):
    s = _logistic(a * (theta[..., None] - b))
    p = c + (1.0 - c) * s
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    dp = a * (1.0 - c) * s * (1.0 - s)
    d2p = a * a * (1.0 - c) * s * (1.0 - s) * (1.0 - 2.0 * s)
    return p, dp, d2p


def log_posterior_batch(theta, a, b, c, y, mask):
    s = _logistic(a * (theta[..., None] - b))
    p = np.clip(c + (1.0 - c) * s, 1e-12, 1.0 - 1e-12)
    ll = np.where(mask, y * np.log(p) + (1.0 - y) * np.log1p(-p), 0.0)
    return ll.sum(axis=-1) - 0.5 * theta * theta


def _grad_hess(theta, a, b, c, y, mask):
    p, dp, d2p = _terms(theta, a, b, c, y, mask)
    # d/dtheta of y log p + (1 - y) log(1 - p)
    g_i = (y / p - (1.0 - y) / (1.0 - p)) * dp
    h_i = (y / p - (1.0 - y) / (1.0 - p)) * d2p - (y / (p * p) + (1.0 - y) / ((1.0 - p) ** 2)) * dp * dp
    g = np.where(mask, g_i, 0.0).sum(axis=-1) - theta
    h = np.where(mask, h_i, 0.0).sum(axis=-1) - 1.0
    return g, h


def refine_ability_batch(theta0, a, b, c, y, mask) -> Tuple[np.ndarray, np.ndarray]:
    """Newton ascent of the log posterior from ``theta0`` (one start per row).

    Steps are halved whenever the Hessian is not safely negative or a step
    fails to raise the posterior. Returns ``(theta, converged)``.
    """
    a, b, c, y, mask = _as_arrays(a, b, c, y, mask)
    rows = a.shape[:-1]
    theta = np.broadcast_to(np.asarray(theta0, dtype=float), rows).copy()
    converged = np.zeros(rows, dtype=bool)
    for _ in range(NEWTON_MAX_ITER):
        live = ~converged
        if not live.any():
            break
        g, h = _grad_hess(theta, a, b, c, y, mask)
        step = np.where(h < -1e-10, -g / np.where(h < -1e-10, h, -1.0), g)
        cur = log_posterior_batch(theta, a, b, c, y, mask)
        scale = np.ones(rows)
        new = np.clip(theta + step, THETA_MIN, THETA_MAX)
        for _ in range(40):
            val = log_posterior_batch(new, a, b, c, y, mask)
            bad = live & (val < cur - 1e-12)
            if not bad.any():
                break
            scale = np.where(bad, scale * 0.5, scale)
            new = np.where(bad, np.clip(theta + scale * step, THETA_MIN, THETA_MAX), new)
        delta = np.abs(new - theta)
        theta = np.where(live, new, theta)
        converged |= live & (delta < NEWTON_TOL)
    return theta, converged


def _as_arrays(a, b, c, y, mask):
    a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    return np.broadcast_arrays(a, b, c, y, mask)


def estimate_ability_batch(a, b, c, y, mask) -> Tuple[np.ndarray, np.ndarray]:
    """MAP ability under a N(0, 1) prior for every row of the response arrays.

    Newton is started from the best point of a coarse grid. Returns
    ``(theta, converged)``; rows without responses get 0.
    """
    a, b, c, y, mask = _as_arrays(a, b, c, y, mask)
    rows = a.shape[:-1]
    grid_vals = np.stack(
        [log_posterior_batch(np.full(rows, g), a, b, c, y, mask) for g in _SEED_GRID], axis=-1
    )
    theta0 = _SEED_GRID[np.argmax(grid_vals, axis=-1)]
    theta, converged = refine_ability_batch(theta0, a, b, c, y, mask)
    has_data = mask.any(axis=-1)
    theta = np.where(has_data, theta, 0.0)
    converged = converged | ~has_data
    return theta, converged


def running_ability(responses: Sequence[Tuple[IrtItem, bool]]) -> np.ndarray:
    """Ability estimate the tutor holds before each response and after the last.

    Entry k is the estimate after the first k responses: the prior mean for
    k = 0, then a Newton refinement warm-started from entry k - 1. This is
    the sequentially updated estimate used for question selection.
    """
    out = np.zeros(len(responses) + 1)
    if not responses:
        return out
    a = np.array([it.a for it, _ in responses])
    b = np.array([it.b for it, _ in responses])
    c = np.array([it.c for it, _ in responses])
    y = np.array([1.0 if ok else 0.0 for _, ok in responses])
    for k in range(1, len(responses) + 1):
        th, _ = refine_ability_batch(out[k - 1:k], a[None, :k], b[None, :k], c[None, :k],
                                     y[None, :k], np.ones((1, k), dtype=bool))
        out[k] = th[0]
    return out


def estimate_ability(responses: Sequence[Tuple[IrtItem, bool]]) -> AbilityEstimate:
    """MAP ability estimate from first-attempt responses; prior mean on empty input."""
    if not responses:
        return AbilityEstimate(0.0, 0, True)
    a = np.array([it.a for it, _ in responses])
    b = np.array([it.b for it, _ in responses])
    c = np.array([it.c for it, _ in responses])
    y = np.array([1.0 if ok else 0.0 for _, ok in responses])
    theta, conv = estimate_ability_batch(a, b, c, y, np.ones_like(y, dtype=bool))
    return AbilityEstimate(float(theta), len(responses), bool(conv))


def map_gradient(theta: float, responses: Sequence[Tuple[IrtItem, bool]]) -> float:
    """Analytic derivative of the log posterior used in the Newton steps."""
    if not responses:
        return -theta
    a = np.array([it.a for it, _ in responses])
    b = np.array([it.b for it, _ in responses])
    c = np.array([it.c for it, _ in responses])
    y = np.array([1.0 if ok else 0.0 for _, ok in responses])
    g, _ = _grad_hess(np.asarray(theta, dtype=float), a, b, c, y, np.ones_like(y, dtype=bool))
    return float(g)


def map_objective(theta: float, responses: Sequence[Tuple[IrtItem, bool]]) -> float:
    if not responses:
        return -0.5 * theta * theta
    a = np.array([it.a for it, _ in responses])
    b = np.array([it.b for it, _ in responses])
    c = np.array([it.c for it, _ in responses])
    y = np.array([1.0 if ok else 0.0 for _, ok in responses])
    return float(log_posterior_batch(np.asarray(theta, dtype=float), a, b, c, y, np.ones_like(y, dtype=bool)))


def select_next_question(theta: float, pool: Iterable[Question], answered) -> QuestionId:
    """Unanswered question with difficulty closest to ``theta``.

    Non-true-false questions win whenever one is available; remaining ties
    go to the lexicographically smallest id. Raises Exhausted when nothing
    is left.
    """
    remaining = [q for q in pool if q.id not in answered]
    if not remaining:
        raise Exhausted("question pool exhausted")
    preferred = [q for q in remaining if q.qtype is not QType.TRUE_FALSE]
    candidates = preferred or remaining
    best = min(candidates, key=lambda q: (abs(q.item.b - theta), q.id))
    return best.id


def load_items(lines: Iterable[str]) -> Dict[QuestionId, IrtItem]:
    """Parse the item parameter file (one JSON object per line: question_id, a, b, c)."""
    items = {}
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            items[str(obj["question_id"])] = IrtItem(float(obj["a"]), float(obj["b"]), float(obj["c"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"item file line {n}: {exc}") from exc
    return items


def dump_items(items: Mapping[QuestionId, IrtItem]) -> str:
    return "".join(
        json.dumps({"question_id": qid, "a": it.a, "b": it.b, "c": it.c}) + "\n"
        for qid, it in sorted(items.items())
    )
