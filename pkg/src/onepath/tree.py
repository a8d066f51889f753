"""Plaintext decision trees: CART training, quantization, complete-binary
padding, level-order indexing, and the inference oracle every encrypted run
is checked against.

Feature indexes are 1-based throughout, matching the node and wire formats.
A complete tree of depth d stores its 2^d - 1 internal nodes in level order
(heap positions 1..gamma, children of position p at 2p and 2p+1) followed by
2^d leaf labels.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError


@dataclass
class PlainNode:
    feature: int | None = None  # 1-based; None for leaves
    threshold: float | None = None
    left: "PlainNode | None" = None
    right: "PlainNode | None" = None
    label: str | None = None

    @property
    def is_leaf(self) -> bool:
        return self.label is not None


@dataclass
class PlainTree:
    root: PlainNode
    n_features: int

    @property
    def depth(self) -> int:
        def walk(node: PlainNode) -> int:
            if node.is_leaf:
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    def predict(self, x) -> str:
        node = self.root
        while not node.is_leaf:
            node = node.right if x[node.feature - 1] > node.threshold else node.left
        return node.label


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    probs = counts / total
    return 1.0 - float(np.sum(probs * probs))


def _majority(labels: list[str]) -> str:
    best, best_count = None, -1
    for lab in sorted(set(labels)):
        c = labels.count(lab)
        if c > best_count:
            best, best_count = lab, c
    return best


def train_cart(X, y, max_depth: int) -> PlainTree:
    """Greedy Gini-impurity CART.  Ties break toward the lowest feature
    index, then the lowest threshold, so training is deterministic for a
    fixed row order."""
    X = np.asarray(X, dtype=float)
    y = list(map(str, y))
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ParameterError("training data must be a nonempty 2-D array")
    if len(y) != X.shape[0]:
        raise ParameterError("row/label count mismatch")
    if X.shape[0] < 2 and max_depth > 0:
        max_depth = 0
    classes = sorted(set(y))
    cindex = {c: i for i, c in enumerate(classes)}
    yi = np.array([cindex[v] for v in y])

    def build(idx: np.ndarray, depth: int) -> PlainNode:
        labels = [y[i] for i in idx]
        counts = np.bincount(yi[idx], minlength=len(classes))
        if depth >= max_depth or len(idx) < 2 or len(set(labels)) == 1:
            return PlainNode(label=_majority(labels))
        parent = _gini(counts)
        best = None  # (gain, feature, threshold, left_mask)
        m = len(idx)
        for f in range(X.shape[1]):
            col = X[idx, f]
            order = np.argsort(col, kind="stable")
            sv = col[order]
            sy = yi[idx][order]
            distinct = np.nonzero(sv[:-1] != sv[1:])[0]
            if len(distinct) == 0:
                continue
            onehot = np.zeros((m, len(classes)))
            onehot[np.arange(m), sy] = 1.0
            cum = np.cumsum(onehot, axis=0)
            for cut in distinct:
                thresh = (sv[cut] + sv[cut + 1]) / 2.0
                left_counts = cum[cut]
                right_counts = counts - left_counts
                nl = cut + 1
                nr = m - nl
                child = (nl * _gini(left_counts) + nr * _gini(right_counts)) / m
                gain = parent - child
                if gain > 1e-12 and (best is None or gain > best[0] + 1e-12):
                    best = (gain, f + 1, thresh)
        if best is None:
            return PlainNode(label=_majority(labels))
        _, feature, threshold = best
        left_idx = idx[X[idx, feature - 1] <= threshold]
        right_idx = idx[X[idx, feature - 1] > threshold]
        return PlainNode(
            feature=feature,
            threshold=threshold,
            left=build(left_idx, depth + 1),
            right=build(right_idx, depth + 1),
        )

    return PlainTree(root=build(np.arange(X.shape[0]), 0), n_features=X.shape[1])


@dataclass
class Quantizer:
    """Per-feature affine map onto [0, 2^feature_bits); shared verbatim
    between provider and user so both sides compare in the same scale."""

    feature_bits: int
    offsets: list[float]
    scales: list[float]
    clamp: str = "warn"  # or "error"
    clamp_count: int = field(default=0, compare=False)

    @classmethod
    def identity(cls, n_features: int, feature_bits: int) -> "Quantizer":
        return cls(feature_bits, [0.0] * n_features, [1.0] * n_features)

    @classmethod
    def fit(cls, X, feature_bits: int, clamp: str = "warn") -> "Quantizer":
        X = np.asarray(X, dtype=float)
        top = (1 << feature_bits) - 1
        offsets, scales = [], []
        for f in range(X.shape[1]):
            lo, hi = float(X[:, f].min()), float(X[:, f].max())
            offsets.append(lo)
            scales.append(top / (hi - lo) if hi > lo else 1.0)
        return cls(feature_bits, offsets, scales, clamp)

    @property
    def n_features(self) -> int:
        return len(self.offsets)

    def resolution(self, feature: int) -> float:
        """Value-space width of one quantization step for a 1-based feature."""
        return 1.0 / self.scales[feature - 1]

    def apply_value(self, feature: int, value: float) -> int:
        q = round((value - self.offsets[feature - 1]) * self.scales[feature - 1])
        top = (1 << self.feature_bits) - 1
        if q < 0 or q > top:
            if self.clamp == "error":
                raise ParameterError(
                    f"value {value} for feature {feature} outside quantizer domain"
                )
            self.clamp_count += 1
            q = min(max(q, 0), top)
        return int(q)

    def apply_vector(self, x) -> list[int]:
        if len(x) != self.n_features:
            raise ParameterError("feature vector length mismatch")
        return [self.apply_value(f + 1, v) for f, v in enumerate(x)]

    def to_dict(self) -> dict:
        return {
            "feature_bits": self.feature_bits,
            "offsets": self.offsets,
            "scales": self.scales,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Quantizer":
        return cls(d["feature_bits"], list(d["offsets"]), list(d["scales"]))


def quantize(obj, quantizer: Quantizer):
    """Map a PlainTree's thresholds, or a real feature vector, through the
    quantizer.  Ties after quantization resolve as <= (left branch)."""
    if isinstance(obj, PlainTree):

        def walk(node: PlainNode) -> PlainNode:
            if node.is_leaf:
                return PlainNode(label=node.label)
            return PlainNode(
                feature=node.feature,
                threshold=quantizer.apply_value(node.feature, node.threshold),
                left=walk(node.left),
                right=walk(node.right),
            )

        return PlainTree(root=walk(obj.root), n_features=obj.n_features)
    return quantizer.apply_vector(obj)


@dataclass(frozen=True)
class InternalNode:
    feature: int  # 1-based
    threshold: int
    dummy: bool = False


@dataclass
class CompleteTree:
    depth: int
    n_features: int
    internals: list[InternalNode]  # level order, heap positions 1..gamma
    leaves: list[str]

    def __post_init__(self):
        if self.depth < 1:
            raise ParameterError("complete tree depth must be >= 1")
        if len(self.internals) != self.gamma or len(self.leaves) != self.m:
            raise ParameterError("node arrays do not match the declared depth")
        for node in self.internals:
            if not 1 <= node.feature <= self.n_features:
                raise ParameterError("feature index out of range")

    @property
    def gamma(self) -> int:
        return (1 << self.depth) - 1

    @property
    def m(self) -> int:
        return 1 << self.depth


@dataclass(frozen=True)
class PredictionPath:
    directions: tuple[bool, ...]  # True = right branch
    leaf_index: int

    @property
    def positions(self) -> tuple[int, ...]:
        """Heap positions of the internal nodes on the path, root first."""
        out, pos = [], 1
        for right in self.directions:
            out.append(pos)
            pos = 2 * pos + 1 if right else 2 * pos
        return tuple(out)


def complete_pad(tree: PlainTree, depth: int) -> CompleteTree:
    """Pad to a complete binary tree of exactly `depth` levels.  Leaves above
    the target depth become chains of dummy internal nodes (feature 1,
    threshold 0) whose children all carry the original label, so the
    function computed by the tree is unchanged."""
    if depth < 1:
        raise ParameterError("target depth must be >= 1")
    gamma = (1 << depth) - 1
    internals: list[InternalNode | None] = [None] * gamma
    leaves: list[str | None] = [None] * (1 << depth)

    def fill(node: PlainNode, pos: int, remaining: int):
        if remaining == 0:
            if not node.is_leaf:
                raise ParameterError(f"tree deeper than target depth {depth}")
            leaves[pos - (1 << depth)] = node.label
            return
        if node.is_leaf:
            internals[pos - 1] = InternalNode(1, 0, dummy=True)
            fill(node, 2 * pos, remaining - 1)
            fill(node, 2 * pos + 1, remaining - 1)
        else:
            if not float(node.threshold).is_integer() or node.threshold < 0:
                raise ParameterError("thresholds must be quantized before padding")
            internals[pos - 1] = InternalNode(node.feature, int(node.threshold))
            fill(node.left, 2 * pos, remaining - 1)
            fill(node.right, 2 * pos + 1, remaining - 1)

    fill(tree.root, 1, depth)
    return CompleteTree(depth, tree.n_features, internals, leaves)


def plaintext_infer(tree: CompleteTree, x: list[int]) -> tuple[str, PredictionPath]:
    """Walk d levels, going right iff x[f] > threshold; the oracle for every
    encrypted run."""
    if len(x) != tree.n_features:
        raise ParameterError("feature vector length mismatch")
    pos = 1
    directions = []
    for _ in range(tree.depth):
        node = tree.internals[pos - 1]
        right = x[node.feature - 1] > node.threshold
        directions.append(right)
        pos = 2 * pos + 1 if right else 2 * pos
    leaf_index = pos - (1 << tree.depth)
    return tree.leaves[leaf_index], PredictionPath(tuple(directions), leaf_index)


def random_complete_tree(
    depth: int,
    n_features: int,
    feature_bits: int,
    rng: random.Random,
    n_labels: int = 4,
) -> CompleteTree:
    top = 1 << feature_bits
    internals = [
        InternalNode(rng.randint(1, n_features), rng.randrange(top))
        for _ in range((1 << depth) - 1)
    ]
    leaves = [f"class_{rng.randrange(n_labels)}" for _ in range(1 << depth)]
    return CompleteTree(depth, n_features, internals, leaves)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def dump_tree_json(tree: CompleteTree, quantizer: Quantizer | None = None) -> str:
    nodes = [
        {"feature": n.feature, "threshold": n.threshold, "dummy": n.dummy}
        for n in tree.internals
    ] + [{"label": label} for label in tree.leaves]
    doc = {
        "depth": tree.depth,
        "n": tree.n_features,
        "quantizer": quantizer.to_dict() if quantizer else None,
        "nodes": nodes,
    }
    return json.dumps(doc, indent=2)


def load_tree_json(text: str) -> tuple[CompleteTree, Quantizer | None]:
    doc = json.loads(text)
    depth, n = doc["depth"], doc["n"]
    gamma = (1 << depth) - 1
    nodes = doc["nodes"]
    internals = [
        InternalNode(d["feature"], d["threshold"], d.get("dummy", False))
        for d in nodes[:gamma]
    ]
    leaves = [d["label"] for d in nodes[gamma:]]
    quantizer = Quantizer.from_dict(doc["quantizer"]) if doc.get("quantizer") else None
    return CompleteTree(depth, n, internals, leaves), quantizer


def load_csv(path) -> tuple[np.ndarray, list[str], list[str]]:
    """CSV with a header row; the last column is the class label."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows, labels = [], []
        for row in reader:
            if not row:
                continue
            rows.append([float(v) for v in row[:-1]])
            labels.append(row[-1])
    if not rows:
        raise ParameterError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float), labels, header[:-1]
