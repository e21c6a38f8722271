"""Random-forest binary classifier built from first principles.

Trees are CART-style: axis-aligned splits scored by Gini impurity, grown
depth-first to purity (or to the configured limits), with leaves storing the
positive fraction of their training samples so the ensemble average is a
probability. Everything about growth is deterministic given the config seed:

* tree ``t`` draws from its own stream seeded by ``derive_seed(seed, "tree", t)``;
* that stream first yields the bootstrap indices (uniform with replacement,
  same size as the training set), then one feature subset per internal-node
  attempt, visited depth-first with the left subtree before the right;
* candidate thresholds are midpoints between consecutive distinct sorted
  feature values; samples with ``x[f] <= threshold`` go left;
* ties in impurity are broken toward the lowest feature index, then the
  lowest threshold. Near-ties from float rounding are re-scored exactly in
  rational arithmetic before the tie-break applies, so the chosen split never
  depends on summation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional

import numpy as np

from .core import derive_seed

__all__ = [
    "ForestConfig",
    "ForestModel",
    "Tree",
    "ForestError",
    "fit_forest",
    "predict_proba",
    "classify",
    "gini_impurity",
    "forest_to_dict",
    "forest_from_dict",
    "save_forest",
    "load_forest",
]

# Candidates whose float score is within this relative distance of the best
# are re-scored exactly before tie-breaking.
_TIE_RTOL = 1e-9

_LEAF = -1


class ForestError(ValueError):
    """Raised for invalid forest configuration or training input."""


@dataclass(frozen=True)
class ForestConfig:
    """Hyperparameters for :func:`fit_forest`.

    ``max_depth=None`` grows trees until purity or the size limits stop them.
    ``bootstrap=False`` trains every tree on the full sample (useful when
    comparing a single tree against a reference construction).
    """

    n_estimators: int = 400
    min_samples_split: int = 100
    min_samples_leaf: int = 50
    max_features: int = 4
    max_depth: Optional[int] = None
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.n_estimators < 1:
            raise ForestError(f"n_estimators must be >= 1, got {self.n_estimators}")
        if self.min_samples_split < 2:
            raise ForestError(f"min_samples_split must be >= 2, got {self.min_samples_split}")
        if self.min_samples_leaf < 1:
            raise ForestError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.min_samples_split < 2 * self.min_samples_leaf:
            raise ForestError(
                f"min_samples_split ({self.min_samples_split}) must be at least twice "
                f"min_samples_leaf ({self.min_samples_leaf}), or no split can satisfy both"
            )
        if self.max_features < 1:
            raise ForestError(f"max_features must be >= 1, got {self.max_features}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ForestError(f"max_depth must be >= 1 or None, got {self.max_depth}")


@dataclass
class Tree:
    """One fitted tree in flat array form (nodes in depth-first pre-order).

    ``feature[i] == -1`` marks a leaf. ``value[i]`` is the positive fraction
    of the training samples that reached node ``i``; internal nodes carry it
    too, which makes truncated evaluation and debugging cheap.
    """

    feature: np.ndarray    # int32, -1 for leaves
    threshold: np.ndarray  # float64, NaN for leaves
    left: np.ndarray       # int32 child index, -1 for leaves
    right: np.ndarray      # int32 child index, -1 for leaves
    value: np.ndarray      # float64, positive fraction at the node
    n_samples: np.ndarray  # int32, training samples that reached the node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


def gini_impurity(labels) -> float:
    """Gini impurity ``1 - sum_k p_k^2`` of a non-empty label sequence."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ForestError("gini_impurity needs at least one label")
    _, counts = np.unique(labels, return_counts=True)
    p = counts / labels.size
    return float(1.0 - np.sum(p * p))


def _score_feature(xcol: np.ndarray, y: np.ndarray, min_leaf: int):
    """Score every admissible midpoint split of one feature column.

    Returns ``(scores, thresholds, n_left, pos_left)`` or ``None`` when the
    column admits no split. ``scores`` is the quantity
    ``sum_child (pos^2 + neg^2) / n_child`` — maximizing it is equivalent to
    minimizing the sample-weighted Gini impurity of the children, but it
    needs one division per child instead of several.
    """
    order = np.argsort(xcol, kind="stable")
    xs = xcol[order]
    ys = y[order]
    boundary = np.nonzero(xs[:-1] < xs[1:])[0]  # split after sorted index i
    if boundary.size == 0:
        return None
    n = xcol.size
    n_left = boundary + 1
    keep = (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not keep.any():
        return None
    boundary = boundary[keep]
    n_left = n_left[keep]
    n_right = n - n_left
    pos_prefix = np.cumsum(ys, dtype=np.float64)
    pos_left = pos_prefix[boundary]
    pos_right = pos_prefix[-1] - pos_left
    neg_left = n_left - pos_left
    neg_right = n_right - pos_right
    scores = (pos_left * pos_left + neg_left * neg_left) / n_left \
        + (pos_right * pos_right + neg_right * neg_right) / n_right
    thresholds = (xs[boundary] + xs[boundary + 1]) / 2.0
    # A midpoint of two adjacent doubles can round up to the right value,
    # which would send the right sample left; fall back to the left value.
    bad = thresholds >= xs[boundary + 1]
    if bad.any():
        thresholds = thresholds.copy()
        thresholds[bad] = xs[boundary][bad]
    return scores, thresholds, n_left, pos_left


def _exact_split_score(pos_left: int, n_left: int, pos_total: int, n_total: int) -> Fraction:
    """The per-child purity sum as an exact rational, for tie-breaking."""
    neg_left = n_left - pos_left
    pos_right = pos_total - pos_left
    n_right = n_total - n_left
    neg_right = n_right - pos_right
    return (
        Fraction(pos_left * pos_left + neg_left * neg_left, n_left)
        + Fraction(pos_right * pos_right + neg_right * neg_right, n_right)
    )


def _best_split(X: np.ndarray, y: np.ndarray, rows: np.ndarray,
                features: np.ndarray, min_leaf: int):
    """Find the best (feature, threshold) over the sampled features.

    Returns ``None`` when no feature admits a split that leaves both children
    with at least ``min_leaf`` samples. Exact tie-break: highest purity score,
    then lowest feature index, then lowest threshold.
    """
    per_feature = []
    best_float = -np.inf
    for f in features:
        scored = _score_feature(X[rows, f], y[rows], min_leaf)
        if scored is None:
            continue
        scores, thresholds, n_left, pos_left = scored
        best_float = max(best_float, float(scores.max()))
        per_feature.append((f, scores, thresholds, n_left, pos_left))
    if not per_feature:
        return None

    cutoff = best_float - _TIE_RTOL * (1.0 + abs(best_float))
    n_total = rows.size
    pos_total = int(y[rows].sum())
    best = None  # (exact_score, feature, threshold, exact-break key)
    for f, scores, thresholds, n_left, pos_left in per_feature:
        for i in np.nonzero(scores >= cutoff)[0]:
            exact = _exact_split_score(int(pos_left[i]), int(n_left[i]), pos_total, n_total)
            key = (exact, -f, -thresholds[i])  # maximize score, then min feature, min threshold
            if best is None or key > best[0]:
                best = (key, int(f), float(thresholds[i]))
    _, feature, threshold = best
    return feature, threshold


class _TreeBuilder:
    """Grows one tree depth-first, appending nodes in pre-order."""

    def __init__(self, X: np.ndarray, y: np.ndarray, config: ForestConfig,
                 rng: np.random.Generator):
        self.X = X
        self.y = y
        self.config = config
        self.rng = rng
        self.n_features = X.shape[1]
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.n_samples: list[int] = []

    def build(self, rows: np.ndarray) -> Tree:
        self._grow(rows, depth=0)
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            value=np.asarray(self.value, dtype=np.float64),
            n_samples=np.asarray(self.n_samples, dtype=np.int32),
        )

    def _add_node(self, rows: np.ndarray) -> int:
        idx = len(self.feature)
        self.feature.append(_LEAF)
        self.threshold.append(float("nan"))
        self.left.append(_LEAF)
        self.right.append(_LEAF)
        self.value.append(float(self.y[rows].sum()) / rows.size)
        self.n_samples.append(rows.size)
        return idx

    def _grow(self, rows: np.ndarray, depth: int) -> int:
        cfg = self.config
        node = self._add_node(rows)
        pos = int(self.y[rows].sum())
        pure = pos == 0 or pos == rows.size
        at_depth = cfg.max_depth is not None and depth >= cfg.max_depth
        if pure or at_depth or rows.size < cfg.min_samples_split:
            return node
        # The feature subset is drawn before we know whether a split exists,
        # so RNG consumption is one draw per internal-node attempt.
        k = min(cfg.max_features, self.n_features)
        features = np.sort(self.rng.choice(self.n_features, size=k, replace=False))
        split = _best_split(self.X, self.y, rows, features, cfg.min_samples_leaf)
        if split is None:
            return node
        f, thr = split
        go_left = self.X[rows, f] <= thr
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self._grow(rows[go_left], depth + 1)
        self.right[node] = self._grow(rows[~go_left], depth + 1)
        return node


@dataclass
class ForestModel:
    """A fitted ensemble. ``predict_proba`` averages leaf values over trees."""

    trees: list
    config: ForestConfig
    n_features: int

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self, X)

    def classify(self, X, threshold: float) -> np.ndarray:
        return classify(self, X, threshold)


def fit_forest(X, y, config: ForestConfig | None = None) -> ForestModel:
    """Fit a forest on a feature matrix and binary labels.

    Requires at least ``min_samples_split`` rows and both label classes.
    """
    config = config or ForestConfig()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ForestError(f"X must be 2-D, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise ForestError(f"y must have {X.shape[0]} entries, got shape {y.shape}")
    if not np.isfinite(X).all():
        raise ForestError("X contains non-finite values")
    labels = np.unique(y)
    if not np.isin(labels, (0, 1)).all():
        raise ForestError(f"labels must be 0/1, got values {labels}")
    if labels.size < 2:
        raise ForestError("training labels contain a single class")
    n = X.shape[0]
    if n < config.min_samples_split:
        raise ForestError(
            f"need at least min_samples_split={config.min_samples_split} rows, got {n}"
        )
    if config.max_features > X.shape[1]:
        raise ForestError(
            f"max_features={config.max_features} exceeds the {X.shape[1]} available features"
        )
    y = y.astype(np.int64)

    trees = []
    for t in range(config.n_estimators):
        rng = np.random.default_rng(derive_seed(config.seed, "tree", t))
        if config.bootstrap:
            rows = rng.integers(0, n, size=n)
        else:
            rows = np.arange(n)
        trees.append(_TreeBuilder(X, y, config, rng).build(rows))
    return ForestModel(trees=trees, config=config, n_features=X.shape[1])


def _tree_predict(tree: Tree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int32)
    while True:
        feat = tree.feature[node]
        active = np.nonzero(feat >= 0)[0]
        if active.size == 0:
            return tree.value[node]
        an = node[active]
        go_left = X[active, tree.feature[an]] <= tree.threshold[an]
        node[active] = np.where(go_left, tree.left[an], tree.right[an])


def predict_proba(model: ForestModel, X) -> np.ndarray | float:
    """Mean leaf value across trees, summed in tree-index order.

    Accepts a single feature vector (returns a float) or a 2-D batch
    (returns a 1-D array). A single row and the same row inside a batch
    produce bit-identical results.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ForestError(f"expected {model.n_features} features, got shape {X.shape}")
    total = np.zeros(X.shape[0], dtype=np.float64)
    for tree in model.trees:
        total += _tree_predict(tree, X)
    out = total / len(model.trees)
    return float(out[0]) if single else out


def classify(model: ForestModel, X, threshold: float) -> np.ndarray | bool:
    """Thresholded prediction: positive iff probability >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ForestError(f"threshold must lie in [0, 1], got {threshold}")
    p = predict_proba(model, X)
    if isinstance(p, float):
        return p >= threshold
    return p >= threshold


def _tree_to_dict(tree: Tree) -> dict:
    return {
        "feature": tree.feature.tolist(),
        "threshold": [None if np.isnan(v) else v for v in tree.threshold.tolist()],
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
        "n_samples": tree.n_samples.tolist(),
    }


def _tree_from_dict(d: dict) -> Tree:
    return Tree(
        feature=np.asarray(d["feature"], dtype=np.int32),
        threshold=np.asarray([np.nan if v is None else v for v in d["threshold"]],
                             dtype=np.float64),
        left=np.asarray(d["left"], dtype=np.int32),
        right=np.asarray(d["right"], dtype=np.int32),
        value=np.asarray(d["value"], dtype=np.float64),
        n_samples=np.asarray(d["n_samples"], dtype=np.int32),
    )


def forest_to_dict(model: ForestModel) -> dict:
    cfg = model.config
    return {
        "format": "advisekit-forest/1",
        "config": {
            "n_estimators": cfg.n_estimators,
            "min_samples_split": cfg.min_samples_split,
            "min_samples_leaf": cfg.min_samples_leaf,
            "max_features": cfg.max_features,
            "max_depth": cfg.max_depth,
            "seed": cfg.seed,
            "bootstrap": cfg.bootstrap,
        },
        "n_features": model.n_features,
        "trees": [_tree_to_dict(t) for t in model.trees],
    }


def forest_from_dict(d: dict) -> ForestModel:
    if d.get("format") != "advisekit-forest/1":
        raise ForestError(f"unrecognized forest format {d.get('format')!r}")
    config = ForestConfig(**d["config"])
    return ForestModel(
        trees=[_tree_from_dict(t) for t in d["trees"]],
        config=config,
        n_features=int(d["n_features"]),
    )


def save_forest(model: ForestModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest_to_dict(model), fh)


def load_forest(path) -> ForestModel:
    with open(path, encoding="utf-8") as fh:
        return forest_from_dict(json.load(fh))
