"""Random forest of Gini CART trees, written from scratch.

Each tree is grown on a bootstrap resample drawn from its own generator,
seeded with ``random_state + tree_index``, so serial and parallel fits are
identical.  At every node ``mtry`` candidate features are drawn without
replacement; thresholds are midpoints between consecutive distinct values.
Ties in impurity go to the lowest feature index, then the lowest threshold.

Predicted vessel probability is the mean over trees of the leaf vessel
fraction.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import (
    BadVectorLength,
    CorruptModel,
    EmptyEvalSet,
    EmptyTrainingSet,
    InvariantViolation,
    ValidationError,
    WriteFailure,
)
from .features import FEATURE_GROUPS

MODEL_MAGIC = b"ELRF"
MODEL_VERSION = 1
MODEL_FEATURES = 37
LEAF = -1


@dataclass
class Tree:
    """Preorder node arrays of one fitted tree; ``feature == -1`` marks leaves."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    vessel: np.ndarray
    non_vessel: np.ndarray

    @property
    def node_count(self):
        return len(self.feature)

    @property
    def value(self):
        total = self.vessel + self.non_vessel
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, self.vessel / np.maximum(total, 1), 0.0)

    def max_depth(self):
        depth = np.zeros(self.node_count, dtype=np.int64)
        for i in range(self.node_count):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())


def _best_split(x, y, min_leaf):
    """Lowest weighted Gini split of one feature column.

    Returns ``(score, threshold)`` where score is ``n * weighted impurity / 2``,
    or ``None`` when the column offers no admissible split.
    """
    n = len(x)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    pos_left = np.cumsum(y[order])[:-1].astype(np.float64)
    n_left = np.arange(1, n, dtype=np.float64)
    ok = xs[:-1] < xs[1:]
    if min_leaf > 1:
        ok &= (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not ok.any():
        return None
    pos_total = float(y.sum())
    n_right = n - n_left
    pos_right = pos_total - pos_left
    score = pos_left * (n_left - pos_left) / n_left + pos_right * (n_right - pos_right) / n_right
    score = np.where(ok, score, np.inf)
    i = int(np.argmin(score))
    lo, hi = xs[i], xs[i + 1]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return float(score[i]), float(thr)


def build_tree(X, y, sample, rng, max_depth=None, min_leaf=1, mtry=6):
    """Grow one CART tree on the rows listed in ``sample`` (duplicates allowed)."""
    n_features = X.shape[1]
    mtry = min(mtry, n_features)
    feature, threshold, left, right, vessel, non = [], [], [], [], [], []
    # stack items: (rows, depth, parent, is_left); LIFO with left pushed last -> preorder
    stack = [(sample, 0, -1, False)]
    while stack:
        rows, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        ys = y[rows]
        n = len(rows)
        pos = int(ys.sum())
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(0)
        right.append(0)
        vessel.append(pos)
        non.append(n - pos)
        if pos == 0 or pos == n or n < 2 * min_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        best = None
        for f in np.sort(rng.choice(n_features, size=mtry, replace=False)):
            found = _best_split(X[rows, f], ys, min_leaf)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], found[1], int(f))
        if best is None:
            continue
        score, thr, f = best
        parent_score = pos * (n - pos) / n
        if score > parent_score + 1e-9 * n:
            raise InvariantViolation("Gini split increased weighted impurity")
        go_left = X[rows, f] <= thr
        feature[node] = f
        threshold[node] = thr
        vessel[node] = 0
        non[node] = 0
        stack.append((rows[~go_left], depth + 1, node, False))
        stack.append((rows[go_left], depth + 1, node, True))
    return Tree(
        np.array(feature, dtype=np.int32),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(vessel, dtype=np.int64),
        np.array(non, dtype=np.int64),
    )


def _fit_tree(X, y, seed, max_depth, min_leaf, mtry):
    rng = np.random.default_rng(seed)
    n = len(y)
    sample = rng.integers(0, n, size=n)
    return build_tree(X, y, sample, rng, max_depth, min_leaf, mtry)


class RandomForest(ClassifierMixin, BaseEstimator):
    """Bagged Gini trees with soft-vote probabilities.

    Parameters
    ----------
    n_trees : int, default=100
    max_depth : int or None, default=None
        ``None`` grows until leaves are pure or too small.
    min_samples_leaf : int, default=1
    mtry : int, default=6
        Candidate features per split (clamped to the feature count).
    random_state : int, default=0
        Tree ``k`` uses generator seed ``random_state + k``.
    n_jobs : int, default=1
        Trees are fitted through joblib when greater than 1.
    """

    def __init__(self, n_trees=100, max_depth=None, min_samples_leaf=1, mtry=6,
                 random_state=0, n_jobs=1):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.mtry = mtry
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _validate_params(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValidationError("min_samples_leaf must be >= 1")
        if self.mtry < 1:
            raise ValidationError("mtry must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValidationError("max_depth must be >= 1 or None")
        if not 0 <= int(self.random_state) < 2**64 - self.n_trees:
            raise ValidationError("random_state must be a non-negative 64-bit integer")

    def fit(self, X, y):
        self._validate_params()
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyTrainingSet("training set is empty")
        X = check_array(X, dtype=np.float64, order="F")
        y = np.asarray(y).astype(bool).astype(np.int64).ravel()
        if len(y) != X.shape[0]:
            raise ValidationError("X and y have different lengths")
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        seeds = [int(self.random_state) + k for k in range(self.n_trees)]
        args = (self.max_depth, self.min_samples_leaf, self.mtry)
        if self.n_jobs is not None and self.n_jobs != 1:
            from joblib import Parallel, delayed

            self.trees_ = Parallel(n_jobs=self.n_jobs)(
                delayed(_fit_tree)(X, y, s, *args) for s in seeds
            )
        else:
            self.trees_ = [_fit_tree(X, y, s, *args) for s in seeds]
        self._flatten()
        return self

    def _flatten(self):
        offsets = np.cumsum([0] + [t.node_count for t in self.trees_])
        self._roots = offsets[:-1].astype(np.int64)
        feat = np.concatenate([t.feature for t in self.trees_])
        self._feature = feat.astype(np.int64)
        self._threshold = np.concatenate([t.threshold for t in self.trees_])
        self._left = np.concatenate([t.left + o for t, o in zip(self.trees_, offsets)]).astype(np.int64)
        self._right = np.concatenate([t.right + o for t, o in zip(self.trees_, offsets)]).astype(np.int64)
        self._value = np.concatenate([t.value for t in self.trees_])
        self._depth = max(t.max_depth() for t in self.trees_)

    def _check_X(self, X):
        check_is_fitted(self, "trees_")
        X = np.asarray(X)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise BadVectorLength(
                f"expected vectors of length {self.n_features_in_}, got shape {X.shape}"
            )
        return check_array(X, dtype=np.float64)

    def tree_values(self, X):
        """Leaf vessel fraction reached in every tree, shape ``(n, n_trees)``."""
        X = self._check_X(X)
        n = X.shape[0]
        n_trees = len(self._roots)
        out = np.empty((n, n_trees))
        chunk = max(1, 1_000_000 // n_trees)
        for s in range(0, n, chunk):
            Xc = X[s : s + chunk]
            rows = np.arange(len(Xc))[:, None]
            node = np.broadcast_to(self._roots, (len(Xc), n_trees)).copy()
            for _ in range(self._depth):
                f = self._feature[node]
                internal = f >= 0
                if not internal.any():
                    break
                xv = Xc[rows, np.where(internal, f, 0)]
                nxt = np.where(xv <= self._threshold[node], self._left[node], self._right[node])
                node = np.where(internal, nxt, node)
            out[s : s + chunk] = self._value[node]
        return out

    def vessel_proba(self, X):
        """Vessel probability per row, shape ``(n,)``."""
        return self.tree_values(X).mean(axis=1)

    def predict_proba(self, X):
        p = self.vessel_proba(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X, threshold=0.5):
        """Vessel (1) iff probability is strictly above ``threshold``."""
        return (self.vessel_proba(X) > threshold).astype(np.int64)


def train(X, y, **params):
    """Fit a :class:`RandomForest` with the given parameters."""
    return RandomForest(**params).fit(X, y)


def permutation_importance(model, X, y, groups=None, n_repeats=5, random_state=0, threshold=0.5):
    """Accuracy drop when each feature group's columns are shuffled together.

    Returns ``[(group, importance), ...]`` sorted by decreasing importance
    (ties keep the group order).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(bool)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyEvalSet("evaluation set is empty")
    if groups is None:
        groups = FEATURE_GROUPS
    rng = np.random.default_rng(random_state)
    baseline = np.mean(model.predict(X, threshold=threshold).astype(bool) == y)
    result = []
    for name, cols in groups.items():
        cols = list(cols)
        drops = []
        for _ in range(n_repeats):
            perm = rng.permutation(len(X))
            Xp = X.copy()
            Xp[:, cols] = X[perm][:, cols]
            acc = np.mean(model.predict(Xp, threshold=threshold).astype(bool) == y)
            drops.append(baseline - acc)
        result.append((name, float(np.mean(drops))))
    return sorted(result, key=lambda item: -item[1])


# -- serialisation -----------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIIQ")
_INTERNAL = struct.Struct("<BIdII")
_LEAF = struct.Struct("<BQQ")


def dumps(model):
    """Serialise a fitted 37-feature forest to bytes."""
    check_is_fitted(model, "trees_")
    if model.n_features_in_ != MODEL_FEATURES:
        raise ValidationError(f"model files hold {MODEL_FEATURES}-feature forests only")
    parts = [
        _HEADER.pack(
            MODEL_MAGIC, MODEL_VERSION, model.n_trees, model.max_depth or 0,
            model.min_samples_leaf, model.mtry, int(model.random_state),
        )
    ]
    for tree in model.trees_:
        parts.append(struct.pack("<I", tree.node_count))
        for i in range(tree.node_count):
            if tree.feature[i] == LEAF:
                parts.append(_LEAF.pack(1, int(tree.vessel[i]), int(tree.non_vessel[i])))
            else:
                parts.append(
                    _INTERNAL.pack(0, int(tree.feature[i]), float(tree.threshold[i]),
                                   int(tree.left[i]), int(tree.right[i]))
                )
    return b"".join(parts)


def save_model(model, path):
    data = dumps(model)
    try:
        with open(os.fspath(path), "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise WriteFailure(f"{path}: {exc.strerror or exc}") from exc


def _check_structure(tree):
    """Every node reachable exactly once from the root, children after parents."""
    n = tree.node_count
    seen = np.zeros(n, dtype=bool)
    todo = [0]
    while todo:
        i = todo.pop()
        if seen[i]:
            raise CorruptModel("node reached twice")
        seen[i] = True
        if tree.feature[i] != LEAF:
            for child in (tree.left[i], tree.right[i]):
                if not i < child < n:
                    raise CorruptModel(f"dangling child index {child}")
                todo.append(int(child))
    if not seen.all():
        raise CorruptModel("unreachable nodes")


def loads(data):
    """Inverse of :func:`dumps`."""
    try:
        magic, version, n_trees, max_depth, min_leaf, mtry, seed = _HEADER.unpack_from(data, 0)
    except struct.error as exc:
        raise CorruptModel("truncated model header") from exc
    if magic != MODEL_MAGIC:
        raise CorruptModel("bad magic")
    if version != MODEL_VERSION:
        raise CorruptModel(f"unsupported model version {version}")
    if n_trees < 1 or mtry < 1 or min_leaf < 1:
        raise CorruptModel("invalid parameter block")
    pos = _HEADER.size
    trees = []
    try:
        for _ in range(n_trees):
            (count,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if count == 0:
                raise CorruptModel("empty tree")
            feature = np.full(count, LEAF, dtype=np.int32)
            threshold = np.zeros(count)
            left = np.zeros(count, dtype=np.int32)
            right = np.zeros(count, dtype=np.int32)
            vessel = np.zeros(count, dtype=np.int64)
            non = np.zeros(count, dtype=np.int64)
            for i in range(count):
                tag = data[pos]
                if tag == 0:
                    _, f, thr, lo, hi = _INTERNAL.unpack_from(data, pos)
                    pos += _INTERNAL.size
                    if f >= MODEL_FEATURES:
                        raise CorruptModel(f"feature index {f} out of range")
                    if not np.isfinite(thr):
                        raise CorruptModel("non-finite threshold")
                    feature[i], threshold[i], left[i], right[i] = f, thr, lo, hi
                elif tag == 1:
                    _, v, nv = _LEAF.unpack_from(data, pos)
                    pos += _LEAF.size
                    if v + nv == 0:
                        raise CorruptModel("empty leaf")
                    vessel[i], non[i] = v, nv
                else:
                    raise CorruptModel(f"unknown node tag {tag}")
            tree = Tree(feature, threshold, left, right, vessel, non)
            _check_structure(tree)
            trees.append(tree)
    except (struct.error, IndexError) as exc:
        raise CorruptModel("truncated model file") from exc
    if pos != len(data):
        raise CorruptModel("trailing bytes after last tree")
    model = RandomForest(
        n_trees=n_trees, max_depth=max_depth or None, min_samples_leaf=min_leaf,
        mtry=mtry, random_state=seed,
    )
    model.n_features_in_ = MODEL_FEATURES
    model.classes_ = np.array([0, 1])
    model.trees_ = trees
    model._flatten()
    return model


def load_model(path):
    try:
        with open(os.fspath(path), "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CorruptModel(f"{path}: {exc.strerror or exc}") from exc
    return loads(data)
