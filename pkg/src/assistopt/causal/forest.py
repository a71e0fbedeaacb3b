"""Honest causal forest for conditional treatment effects.

Each tree draws a subsample without replacement and splits it in two:
the first half chooses the splits, the second half fills the leaves with
treated-minus-control mean differences. Presence-mask columns are features
in their own right, so trees can split on missingness.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .context import FEATURES, N_FEATURES, ContextVector, FeatureMismatch
from .treatment import TreatmentDataset

MODEL_FEATURES: Tuple[str, ...] = FEATURES + tuple(f"{f}__present" for f in FEATURES)
_MODEL_VERSION = 1


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    min_leaf: int = 10
    subsample: float = 0.5
    honest_fraction: float = 0.5
    mtry: Optional[int] = None
    max_depth: Optional[int] = None

    def __post_init__(self):
        if self.n_trees < 1 or self.min_leaf < 1:
            raise ValueError("n_trees and min_leaf must be positive")
        if not 0 < self.subsample <= 1 or not 0 < self.honest_fraction < 1:
            raise ValueError("subsample must lie in (0, 1] and honest_fraction in (0, 1)")

    def features_per_split(self, d: int) -> int:
        return min(d, self.mtry if self.mtry else math.ceil(d / 3))


@dataclass
class Tree:
    """Flat tree: node k is a leaf when ``feature[k] < 0``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    split_ids: Optional[np.ndarray] = None
    estimate_ids: Optional[np.ndarray] = None

    def apply(self, Z: np.ndarray) -> np.ndarray:
        node = np.zeros(Z.shape[0], dtype=np.int64)
        rows = np.arange(Z.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            go_left = Z[rows, np.maximum(f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def predict(self, Z: np.ndarray) -> np.ndarray:
        return self.value[self.apply(Z)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
            "left": self.left.tolist(), "right": self.right.tolist(), "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=float),
        )


@dataclass
class CateModel:
    trees: List[Tree]
    config: ForestConfig
    feature_names: Tuple[str, ...] = MODEL_FEATURES
    seed: int = 0

    def predict(self, X: np.ndarray, present: np.ndarray) -> np.ndarray:
        Z = model_matrix(X, present)
        if Z.shape[1] != len(self.feature_names):
            raise FeatureMismatch("input width does not match the model features")
        total = np.zeros(Z.shape[0])
        for t in self.trees:
            total += t.predict(Z)
        return total / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "version": _MODEL_VERSION,
            "config": asdict(self.config),
            "feature_names": list(self.feature_names),
            "seed": self.seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CateModel":
        if d.get("version") != _MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        return cls([Tree.from_dict(t) for t in d["trees"]], ForestConfig(**d["config"]),
                   tuple(d["feature_names"]), int(d["seed"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "CateModel":
        return cls.from_dict(json.loads(text))


def model_matrix(X: np.ndarray, present: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = np.atleast_2d(np.asarray(present, dtype=bool))
    if X.shape[1] != N_FEATURES or P.shape != X.shape:
        raise FeatureMismatch(f"expected {N_FEATURES} feature columns")
    return np.hstack([np.where(P, X, 0.0), P.astype(float)])


def predict_cate(model: CateModel, x: ContextVector) -> float:
    if tuple(model.feature_names) != MODEL_FEATURES:
        raise FeatureMismatch("model was trained on a different feature layout")
    return float(model.predict(np.array([x.values]), np.array([x.present]))[0])


def constant_model(effect: float, n_trees: int = 1) -> CateModel:
    """Forest of root-only trees predicting ``effect`` everywhere."""
    leaf = Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([float(effect)]))
    return CateModel([leaf] * n_trees, ForestConfig(n_trees=n_trees))


# ---------------------------------------------------------------- fitting


def _arm_diff(y, w, idx) -> float:
    t = w[idx] == 1
    n1, n0 = int(t.sum()), int((~t).sum())
    if n1 == 0 or n0 == 0:
        return 0.0
    yy = y[idx]
    return float(yy[t].mean() - yy[~t].mean())


def _best_split(Z, y, w, tr, es, feats, min_leaf):
    """Best (feature, threshold) over ``feats`` or None.

    Train and estimation samples are sorted jointly per feature so the
    estimation-half constraint is checked at the same cut points.
    """
    ids = np.concatenate([tr, es])
    is_tr = np.concatenate([np.ones(tr.size, bool), np.zeros(es.size, bool)])
    V = Z[np.ix_(ids, feats)]
    order = np.argsort(V, axis=0, kind="stable")
    Vs = np.take_along_axis(V, order, axis=0)
    wt = w[ids][order] == 1
    trs = is_tr[order]
    ys = y[ids][order]

    def csum(mask, vals=None):
        x = mask.astype(float) if vals is None else np.where(mask, vals, 0.0)
        return np.cumsum(x, axis=0)

    tr_t, tr_c = trs & wt, trs & ~wt
    es_t, es_c = ~trs & wt, ~trs & ~wt
    n_t, n_c = csum(tr_t), csum(tr_c)
    s_t, s_c = csum(tr_t, ys), csum(tr_c, ys)
    e_t, e_c = csum(es_t), csum(es_c)
    N_t, N_c, S_t, S_c, E_t, E_c = (a[-1] for a in (n_t, n_c, s_t, s_c, e_t, e_c))
    # cut after sorted position i (i < m - 1)
    n_t, n_c, s_t, s_c, e_t, e_c = (a[:-1] for a in (n_t, n_c, s_t, s_c, e_t, e_c))
    distinct = Vs[:-1] < Vs[1:]
    ok = (
        distinct
        & (n_t >= min_leaf) & (n_c >= min_leaf) & (N_t - n_t >= min_leaf) & (N_c - n_c >= min_leaf)
        & (e_t >= min_leaf) & (e_c >= min_leaf) & (E_t - e_t >= min_leaf) & (E_c - e_c >= min_leaf)
    )
    if not ok.any():
        return None
    with np.errstate(invalid="ignore", divide="ignore"):
        tau_p = S_t / N_t - S_c / N_c
        tau_l = s_t / n_t - s_c / n_c
        tau_r = (S_t - s_t) / (N_t - n_t) - (S_c - s_c) / (N_c - n_c)
        nl = n_t + n_c
        nr = (N_t + N_c) - nl
        score = nl * (tau_l - tau_p) ** 2 + nr * (tau_r - tau_p) ** 2
    score = np.where(ok, score, -np.inf)
    flat = int(np.argmax(score))
    i, j = divmod(flat, score.shape[1])
    if not np.isfinite(score[i, j]):
        return None
    thr = 0.5 * (Vs[i, j] + Vs[i + 1, j])
    if not Vs[i, j] <= thr < Vs[i + 1, j]:
        thr = Vs[i, j]
    return int(feats[j]), float(thr)


def _grow_tree(Z, y, w, tr, es, cfg: ForestConfig, rng) -> Tree:
    d = Z.shape[1]
    mtry = cfg.features_per_split(d)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, tr, es, 0)]
    while stack:
        node, t_idx, e_idx, depth = stack.pop()
        value[node] = _arm_diff(y, w, e_idx)
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        if t_idx.size < 4 * cfg.min_leaf or e_idx.size < 4 * cfg.min_leaf:
            continue
        feats = np.sort(rng.choice(d, size=mtry, replace=False))
        split = _best_split(Z, y, w, t_idx, e_idx, feats, cfg.min_leaf)
        if split is None:
            continue
        f, thr = split
        l_node, r_node = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, thr, l_node, r_node
        go_t = Z[t_idx, f] <= thr
        go_e = Z[e_idx, f] <= thr
        # right child pushed first so the left subtree is numbered first
        stack.append((r_node, t_idx[~go_t], e_idx[~go_e], depth + 1))
        stack.append((l_node, t_idx[go_t], e_idx[go_e], depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), np.array(value, dtype=float),
        split_ids=np.sort(tr), estimate_ids=np.sort(es),
    )


def fit_cate_forest(td: TreatmentDataset, config: ForestConfig = ForestConfig(), seed: int = 0) -> CateModel:
    n = td.n
    if n < 4 * config.min_leaf:
        raise InsufficientData(f"need at least {4 * config.min_leaf} samples, got {n}")
    Z = model_matrix(td.X, td.present)
    y, w = td.y, td.w
    m = max(2, int(round(config.subsample * n)))
    n_split = max(1, int(round(config.honest_fraction * m)))
    trees = []
    for b in range(config.n_trees):
        rng = np.random.Generator(np.random.Philox(key=[seed, b]))
        sub = rng.choice(n, size=m, replace=False)
        trees.append(_grow_tree(Z, y, w, sub[:n_split], sub[n_split:], config, rng))
    return CateModel(trees, config, MODEL_FEATURES, seed)


# ---------------------------------------------------------------- tuning


TUNING_SPACE = {
    "n_trees": (100, 200, 400),
    "min_leaf": (5, 10, 25, 50),
    "subsample": (0.35, 0.5),
}


def transformed_outcome_loss(model: CateModel, td: TreatmentDataset) -> float:
    """Mean squared error of tau_hat against the unbiased transformed outcome."""
    e = td.w.mean()
    if e <= 0 or e >= 1:
        raise InsufficientData("both arms needed for the tuning loss")
    y_star = td.y * (td.w - e) / (e * (1 - e))
    return float(np.mean((y_star - model.predict(td.X, td.present)) ** 2))


def tune_forest(td: TreatmentDataset, n_configs: int = 100, seed: int = 0,
                space: Dict[str, Sequence] = TUNING_SPACE) -> Tuple[ForestConfig, float]:
    """Random search over ``space`` scored on a held-out split; returns (config, loss)."""
    fit, held = td.split(0.5, seed)
    grid = [dict(zip(space, combo)) for combo in itertools.product(*space.values())]
    rng = np.random.Generator(np.random.Philox(key=[seed, 0x7E5E]))
    picks = rng.permutation(len(grid))[: min(n_configs, len(grid))]
    best: Tuple[Optional[ForestConfig], float] = (None, math.inf)
    for k in sorted(picks):
        cfg = ForestConfig(**grid[k])
        try:
            loss = transformed_outcome_loss(fit_cate_forest(fit, cfg, seed), held)
        except InsufficientData:
            continue
        if loss < best[1]:
            best = (cfg, loss)
    if best[0] is None:
        raise InsufficientData("no configuration could be fitted")
    return best[0], best[1]
