"""Greedy multi-output regression tree over raw feature vectors.

Node impurity is the sum over samples of the squared distance to the
node mean, summed over both output coordinates. Splits test
value <= threshold with thresholds at midpoints between consecutive
distinct feature values; the best split minimises the summed child
impurity, with ties broken toward the lower feature index, then the
lower threshold. No pruning.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 30
    min_samples_leaf: int = 2
    min_impurity_decrease: float = 0.0


def validate_tree_config(config: TreeConfig) -> None:
    if config.max_depth < 1:
        raise ConfigurationError("max depth must be at least 1")
    if config.min_samples_leaf < 1:
        raise ConfigurationError("min samples per leaf must be at least 1")
    if config.min_impurity_decrease < 0:
        raise ConfigurationError("min impurity decrease must be non-negative")


@dataclass
class TreeNode:
    n_samples: int
    # internal nodes carry a split, leaves carry the mean label
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    value: Optional[np.ndarray] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class TreeModel:
    root: TreeNode
    n_features: int
    config: TreeConfig


def node_impurity(labels: np.ndarray) -> float:
    """Summed squared distance to the label mean, both outputs."""
    mean = labels.mean(axis=0)
    diff = labels - mean
    return float((diff * diff).sum())


def best_split(
    values: np.ndarray, labels: np.ndarray, min_samples_leaf: int
) -> Optional[Tuple[float, int, float]]:
    """Exhaustive best (child impurity sum, feature, threshold), or None.

    Uses centred prefix sums per feature, so each candidate threshold is
    scored in O(1) after one sort.
    """
    n, d = values.shape
    centred = labels - labels.mean(axis=0)
    best: Optional[Tuple[float, int, float]] = None
    sizes_left = np.arange(1, n, dtype=np.float64)
    sizes_right = n - sizes_left
    for j in range(d):
        order = np.argsort(values[:, j], kind="stable")
        v = values[order, j]
        y = centred[order]
        cs = np.cumsum(y, axis=0)
        cs2 = np.cumsum(y * y, axis=0)
        valid = (v[1:] > v[:-1]) & (sizes_left >= min_samples_leaf) & (sizes_right >= min_samples_leaf)
        if not valid.any():
            continue
        left_sum = cs[:-1]
        left_sq = cs2[:-1]
        right_sum = cs[-1] - left_sum
        right_sq = cs2[-1] - left_sq
        sse = (left_sq - left_sum**2 / sizes_left[:, None]).sum(axis=1)
        sse = sse + (right_sq - right_sum**2 / sizes_right[:, None]).sum(axis=1)
        sse = np.maximum(sse, 0.0)
        sse[~valid] = np.inf
        idx = int(np.argmin(sse))  # thresholds ascend, so ties pick the lowest
        score = float(sse[idx])
        if not np.isfinite(score):
            continue
        if best is None or score < best[0]:
            best = (score, j, float((v[idx] + v[idx + 1]) / 2.0))
    return best


def _build(values: np.ndarray, labels: np.ndarray, depth: int, config: TreeConfig) -> TreeNode:
    n = values.shape[0]
    mean = labels.mean(axis=0)
    impurity = node_impurity(labels)
    if (
        depth >= config.max_depth
        or n < 2 * config.min_samples_leaf
        or impurity <= 0.0
    ):
        return TreeNode(n_samples=n, value=mean)
    found = best_split(values, labels, config.min_samples_leaf)
    if found is None:
        return TreeNode(n_samples=n, value=mean)
    child_sse, feature, threshold = found
    if impurity - child_sse <= config.min_impurity_decrease:
        return TreeNode(n_samples=n, value=mean)
    go_left = values[:, feature] <= threshold
    return TreeNode(
        n_samples=n,
        feature=feature,
        threshold=threshold,
        left=_build(values[go_left], labels[go_left], depth + 1, config),
        right=_build(values[~go_left], labels[~go_left], depth + 1, config),
    )


def fit(values: np.ndarray, labels: np.ndarray, config: Optional[TreeConfig] = None) -> TreeModel:
    """Grow a tree on raw features and raw metre labels."""
    config = config or TreeConfig()
    validate_tree_config(config)
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] == 0:
        raise DataError("tree fitting needs a non-empty (n, d) feature array")
    if labels.shape != (values.shape[0], 2):
        raise DataError("tree fitting needs labels of shape (n, 2)")
    if not np.isfinite(values).all() or not np.isfinite(labels).all():
        raise DataError("tree fitting needs finite features and labels")
    root = _build(values, labels, 0, config)
    return TreeModel(root=root, n_features=values.shape[1], config=config)


def predict_tree(model: TreeModel, values: np.ndarray) -> np.ndarray:
    """Route each vector to its leaf mean; metres out."""
    values = np.asarray(values, dtype=np.float64)
    single = values.ndim == 1
    if single:
        values = values[None, :]
    if values.ndim != 2 or values.shape[1] != model.n_features:
        raise DataError(
            f"feature width {values.shape[-1]} does not match tree width {model.n_features}"
        )
    out = np.empty((values.shape[0], 2))

    def fill(node: TreeNode, idx: np.ndarray) -> None:
        if node.is_leaf:
            out[idx] = node.value
            return
        go_left = values[idx, node.feature] <= node.threshold
        fill(node.left, idx[go_left])
        fill(node.right, idx[~go_left])

    fill(model.root, np.arange(values.shape[0]))
    return out[0] if single else out


def tree_depth(node: TreeNode) -> int:
    if node.is_leaf:
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def leaf_count(node: TreeNode) -> int:
    if node.is_leaf:
        return 1
    return leaf_count(node.left) + leaf_count(node.right)


# ---------------------------------------------------------------------------
# Serialization (versioned nested JSON blob)

_TREE_VERSION = 1


def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"n": node.n_samples, "value": node.value.tolist()}
    return {
        "n": node.n_samples,
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict) -> TreeNode:
    if "value" in d:
        return TreeNode(n_samples=int(d["n"]), value=np.asarray(d["value"], dtype=np.float64))
    return TreeNode(
        n_samples=int(d["n"]),
        feature=int(d["feature"]),
        threshold=float(d["threshold"]),
        left=_node_from_dict(d["left"]),
        right=_node_from_dict(d["right"]),
    )


def tree_to_dict(model: TreeModel) -> dict:
    return {
        "version": _TREE_VERSION,
        "n_features": model.n_features,
        "config": {
            "max_depth": model.config.max_depth,
            "min_samples_leaf": model.config.min_samples_leaf,
            "min_impurity_decrease": model.config.min_impurity_decrease,
        },
        "root": _node_to_dict(model.root),
    }


def tree_from_dict(d: dict) -> TreeModel:
    if d.get("version") != _TREE_VERSION:
        raise ConfigurationError(f"unsupported tree blob version {d.get('version')}")
    c = d.get("config", {})
    config = TreeConfig(
        max_depth=int(c.get("max_depth", 30)),
        min_samples_leaf=int(c.get("min_samples_leaf", 2)),
        min_impurity_decrease=float(c.get("min_impurity_decrease", 0.0)),
    )
    validate_tree_config(config)
    try:
        return TreeModel(
            root=_node_from_dict(d["root"]),
            n_features=int(d["n_features"]),
            config=config,
        )
    except KeyError as e:
        raise ConfigurationError(f"tree blob is missing key {e}") from e


def tree_config_from_dict(d: dict) -> TreeConfig:
    allowed = {"max_depth", "min_samples_leaf", "min_impurity_decrease"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown tree config keys: {sorted(unknown)}")
    config = TreeConfig(
        max_depth=int(d.get("max_depth", 30)),
        min_samples_leaf=int(d.get("min_samples_leaf", 2)),
        min_impurity_decrease=float(d.get("min_impurity_decrease", 0.0)),
    )
    validate_tree_config(config)
    return config
