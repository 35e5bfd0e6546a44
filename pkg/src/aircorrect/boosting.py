"""Gradient-boosted regression trees with squared loss and split-count importance.

Trees are grown level by level with an exact greedy search over every
midpoint between consecutive distinct feature values. With squared loss the
hessian is one per sample, so ``min_child_weight`` is a minimum leaf size and
a leaf holding residual sum ``G`` over ``n`` samples gets weight
``G / (n + reg_lambda)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError

log = logging.getLogger(__name__)

# relative gain difference below which two candidate splits count as tied
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class GBTConfig:
    learning_rate: float = 0.05
    max_depth: int = 5
    min_child_weight: float = 5
    n_estimators: int = 500
    reg_lambda: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.max_depth < 1 or self.n_estimators < 0:
            raise ConfigError("max_depth must be >= 1 and n_estimators >= 0")
        if self.min_child_weight <= 0 or self.reg_lambda < 0:
            raise ConfigError("min_child_weight must be positive and reg_lambda non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TreeNode:
    """Internal when ``feature >= 0`` (children set), otherwise a leaf carrying ``weight``."""

    feature: int
    threshold: float
    left: int
    right: int
    weight: float
    n_samples: int

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass
class Tree:
    """Flat node arrays; node 0 is the root and leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray
    n_samples: np.ndarray
    gain: np.ndarray

    def __len__(self):
        return len(self.feature)

    def node(self, i: int) -> TreeNode:
        return TreeNode(int(self.feature[i]), float(self.threshold[i]), int(self.left[i]),
                        int(self.right[i]), float(self.weight[i]), int(self.n_samples[i]))

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row of ``X`` (go left when value < threshold)."""
        idx = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[idx]
            inner = feat >= 0
            if not inner.any():
                return idx
            f = np.where(inner, feat, 0)
            go_left = X[rows, f] < self.threshold[idx]
            nxt = np.where(go_left, self.left[idx], self.right[idx])
            idx = np.where(inner, nxt, idx)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.weight[self.apply(X)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "weight", "n_samples", "gain")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        ints = {"feature", "left", "right", "n_samples"}
        return cls(**{k: np.asarray(v, dtype=np.int64 if k in ints else float) for k, v in d.items()})


@dataclass
class GBTModel:
    base_score: float
    trees: list
    learning_rate: float
    feature_names: tuple
    config: GBTConfig = field(default_factory=GBTConfig)
    loss_history: list = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def truncated(self, k: int) -> "GBTModel":
        return GBTModel(self.base_score, self.trees[:k], self.learning_rate,
                        self.feature_names, self.config, self.loss_history[:k + 1])

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.full(len(X), self.base_score)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out


def _base_score(y: np.ndarray) -> float:
    # a constant target must reproduce exactly; a rounded mean may not
    if np.all(y == y[0]):
        return float(y[0])
    return math.fsum(y) / len(y)


def _best_split(gains: np.ndarray):
    """Index of the best gain, ties (within TIE_RTOL) going to the earliest entry."""
    top = gains.max()
    if not np.isfinite(top) or top <= 0:
        return None
    tied = gains >= top - TIE_RTOL * abs(top)
    return int(np.argmax(tied))


def fit_tree(X: np.ndarray, residual: np.ndarray, order: np.ndarray, config: GBTConfig):
    """Grow one tree on ``residual``; ``order[f]`` is the argsort of column ``f``.

    Returns the tree and the leaf index of every training row.
    """
    n, F = X.shape
    lam, mcw = config.reg_lambda, config.min_child_weight
    feature, threshold, left, right, weight, count, gain_of = [], [], [], [], [], [], []

    def new_node(members):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        weight.append(float(np.sum(residual[members])) / (len(members) + lam))
        count.append(len(members))
        gain_of.append(0.0)
        return len(feature) - 1

    root_members = np.arange(n)
    new_node(root_members)
    leaf_of = np.zeros(n, dtype=np.int64)
    # rows of ``order`` regrouped so each active node's samples are contiguous
    grouped = order
    active = [0]
    seg_counts = [n]
    cols = np.arange(F)[:, None]

    for _depth in range(config.max_depth):
        if not active:
            break
        vals = X[grouped, cols]
        g = residual[grouped]
        csum = np.cumsum(g, axis=1)
        starts = np.concatenate([[0], np.cumsum(seg_counts)[:-1]]).astype(np.int64)
        next_active, next_counts, key = [], [], np.full(n, -1, dtype=np.int64)
        for k, node in enumerate(active):
            s, m = int(starts[k]), int(seg_counts[k])
            if m < 2 * mcw or m < 2:
                continue
            seg_vals = vals[:, s:s + m]
            base = csum[:, s - 1:s] if s > 0 else 0.0
            GL = (csum[:, s:s + m - 1] - base)
            G = float(np.sum(residual[grouped[0, s:s + m]]))
            nL = np.arange(1, m, dtype=float)[None, :]
            nR = m - nL
            GR = G - GL
            gains = 0.5 * (GL * GL / (nL + lam) + GR * GR / (nR + lam) - G * G / (m + lam))
            valid = (seg_vals[:, :-1] < seg_vals[:, 1:]) & (nL >= mcw) & (nR >= mcw)
            gains = np.where(valid, gains, -np.inf)
            best = _best_split(gains.ravel())
            if best is None:
                continue
            f, j = divmod(best, m - 1)
            lo, hi = seg_vals[f, j], seg_vals[f, j + 1]
            thr = 0.5 * (lo + hi)
            if not lo < thr:
                thr = hi
            members = grouped[0, s:s + m]
            go_left = X[members, f] < thr
            lmem = np.sort(members[go_left])
            rmem = np.sort(members[~go_left])
            li, ri = new_node(lmem), new_node(rmem)
            feature[node], threshold[node] = int(f), float(thr)
            left[node], right[node] = li, ri
            gain_of[node] = float(gains[f, j])
            leaf_of[lmem] = li
            leaf_of[rmem] = ri
            key[lmem] = len(next_active)
            key[rmem] = len(next_active) + 1
            next_active += [li, ri]
            next_counts += [len(lmem), len(rmem)]
        if not next_active:
            break
        # stable regroup: children contiguous, value order kept inside each child
        keys = key[grouped]
        keys = np.where(keys < 0, len(next_active), keys).astype(np.int16 if len(next_active) < 30000 else np.int64)
        perm = np.argsort(keys, axis=1, kind="stable")
        grouped = np.take_along_axis(grouped, perm, axis=1)
        active, seg_counts = next_active, next_counts

    tree = Tree(
        np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
        np.asarray(weight, dtype=float), np.asarray(count, dtype=np.int64),
        np.asarray(gain_of, dtype=float),
    )
    return tree, leaf_of


def fit_gbt(X, y, config: GBTConfig = GBTConfig(), feature_names: Sequence[str] | None = None) -> GBTModel:
    """Boost ``n_estimators`` trees on squared loss starting from the target mean."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionError(f"X{X.shape} and y{y.shape} do not align")
    if len(y) == 0:
        raise ConfigError("cannot fit on zero rows")
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{i}" for i in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise DimensionError("feature_names length differs from column count")
    base = _base_score(y)
    pred = np.full(len(y), base)
    order = np.argsort(X, axis=0, kind="stable").T.copy()
    trees = []
    history = [float(np.mean((y - pred) ** 2))]
    for _ in range(config.n_estimators):
        residual = y - pred
        if not np.any(residual):
            break
        tree, leaf_of = fit_tree(X, residual, order, config)
        if len(tree) == 1:
            # no admissible split anywhere: further rounds would repeat this one
            break
        trees.append(tree)
        pred = pred + config.learning_rate * tree.weight[leaf_of]
        history.append(float(np.mean((y - pred) ** 2)))
    if not trees:
        log.debug("gbt: no admissible split, model is base score only")
    return GBTModel(base, trees, config.learning_rate, names, config, history)


def predict_gbt(model: GBTModel, x) -> float | np.ndarray:
    """Prediction for one feature vector (float) or a matrix (array)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if len(x) != model.n_features:
            raise DimensionError(f"expected {model.n_features} features, got {len(x)}")
        return float(model.predict(x[None, :])[0])
    return model.predict(x)


# ----------------------------------------------------------------------------
# Importance and pruning
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ImportanceReport:
    feature_names: tuple
    counts: np.ndarray
    gains: np.ndarray
    metric: str = "count"

    @property
    def scores(self) -> np.ndarray:
        return self.counts.astype(float) if self.metric == "count" else self.gains

    @property
    def total(self) -> float:
        return float(self.scores.sum())

    @property
    def empty(self) -> bool:
        return self.total <= 0

    @property
    def fractions(self) -> np.ndarray:
        if self.empty:
            return np.full(len(self.feature_names), np.nan)
        return self.scores / self.total

    def as_dict(self) -> dict:
        return dict(zip(self.feature_names, self.fractions.tolist()))

    def rows(self):
        """``(feature, count, fraction)`` rows for CSV output."""
        fr = self.fractions
        return [(name, int(c), float(f)) for name, c, f in zip(self.feature_names, self.counts, fr)]


def feature_importance(model: GBTModel, metric: str = "count") -> ImportanceReport:
    if metric not in ("count", "gain"):
        raise ConfigError(f"unknown importance metric {metric!r}")
    counts = np.zeros(model.n_features, dtype=np.int64)
    gains = np.zeros(model.n_features)
    for tree in model.trees:
        inner = tree.feature >= 0
        np.add.at(counts, tree.feature[inner], 1)
        np.add.at(gains, tree.feature[inner], tree.gain[inner])
    return ImportanceReport(model.feature_names, counts, gains, metric)


def default_prune_threshold(n_features: int) -> float:
    return 0.5 / n_features


def prune_features(report: ImportanceReport, data=None, threshold: float | None = None):
    """Drop features whose importance share is below ``threshold``.

    Zero-importance features are always dropped and the most important one is
    always kept. ``data`` may be an array or any object with
    ``select_features``; returns ``(kept_indices, reduced_data)``.
    """
    n = len(report.feature_names)
    if threshold is None:
        threshold = default_prune_threshold(n)
    if not 0.0 <= threshold < 1.0:
        raise ConfigError(f"prune threshold must lie in [0, 1), got {threshold}")
    if report.empty:
        log.warning("empty importance report; keeping all %d features", n)
        keep = list(range(n))
    else:
        fr = report.fractions
        keep = [i for i in range(n) if fr[i] > 0 and fr[i] >= threshold]
        if not keep:
            keep = [int(np.argmax(fr))]
    if data is None:
        return keep, None
    if hasattr(data, "select_features"):
        return keep, data.select_features(keep)
    return keep, np.asarray(data)[:, keep]
