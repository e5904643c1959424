"""Decision-tree classifiers with per-prediction node-visit accounting.

The training and prediction logic is implemented here rather than borrowed
so that (a) every prediction reports how many internal-node comparisons it
cost, which is what the energy proxy charges for, and (b) a (dataset,
hyperparameters, seed) triple reproduces a byte-identical serialized model.
The estimator classes follow the scikit-learn fit/predict convention so
they compose with the usual tooling.

Split semantics
---------------
* single-tree: exhaustive best-Gini split over all features, thresholds at
  midpoints between consecutive distinct sorted values.
* random-forest: bootstrap sample per tree (same size, with replacement),
  ``max_features`` candidate features drawn without replacement per node,
  exhaustive thresholds within the candidates.
* extra-trees: no bootstrap; per candidate feature a single uniform-random
  threshold in (min, max) of that feature inside the node.

Recursion stops when a node is pure, the depth limit is reached, the node
has fewer than ``min_samples_split`` samples, or no candidate split leaves
both children with at least ``min_samples_leaf`` samples.  Leaves predict
the majority class, ties going to class 0; ensemble votes break ties the
same way.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .exceptions import DataError, GreenflowError

MODEL_FORMAT = "greenflow-tree-model"
MODEL_VERSION = 1

ALGORITHMS = ("single-tree", "random-forest", "extra-trees")

_LEAF = -1


class EmptyDataset(GreenflowError):
    """Training set has no rows."""


class EmptyNode(GreenflowError):
    """Gini impurity requested for a node with no samples."""


class VersionMismatch(DataError):
    """Serialized model written by a newer format version."""


class CorruptModel(DataError):
    """Serialized model is not a valid container."""


def gini(counts) -> float:
    """Gini impurity 1 - sum(p_i^2) of a two-class count pair."""
    c0, c1 = int(counts[0]), int(counts[1])
    if c0 < 0 or c1 < 0:
        raise ValueError("class counts must be non-negative")
    n = c0 + c1
    if n == 0:
        raise EmptyNode("gini of an empty node is undefined")
    p0 = c0 / n
    p1 = c1 / n
    return 1.0 - (p0 * p0 + p1 * p1)


@dataclass(frozen=True)
class Hyperparams:
    algorithm: str
    max_depth: int | None = None
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    max_features: int | str | None = None
    n_estimators: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None (unbounded)")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if isinstance(self.max_features, str) and self.max_features != "sqrt":
            raise ValueError("max_features must be an int, 'sqrt', or None")
        if isinstance(self.max_features, int) and self.max_features < 1:
            raise ValueError("max_features must be >= 1")

    @classmethod
    def default_for(cls, algorithm: str) -> "Hyperparams":
        if algorithm == "single-tree":
            return cls(algorithm=algorithm)
        return cls(algorithm=algorithm, max_features="sqrt", n_estimators=100)


@dataclass(frozen=True)
class Prediction:
    label: int
    node_visits: int


def resolve_max_features(max_features, n_features: int) -> int:
    """Map the max_features setting onto a concrete candidate count."""
    if max_features is None:
        return n_features
    if max_features == "sqrt":
        return max(1, int(math.floor(math.sqrt(n_features))))
    return max(1, min(int(max_features), n_features))


# ---------------------------------------------------------------------------
# tree growing

@dataclass
class _Tree:
    feature: np.ndarray     # int32, _LEAF for leaves
    threshold: np.ndarray   # float64
    left: np.ndarray        # int32
    right: np.ndarray       # int32
    counts: np.ndarray      # (n_nodes, 2) int64 training class counts
    depth: int = 0
    klass: np.ndarray = field(init=False)

    def __post_init__(self):
        c = self.counts
        # majority class per node, ties to class 0
        self.klass = (c[:, 1] > c[:, 0]).astype(np.int8)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


def _best_split(X, y, idx, feats, min_leaf):
    """Exhaustive midpoint split search; first strictly-best candidate wins.

    Returns (feature, threshold) or None.  The per-feature argmax takes the
    first maximal position, i.e. the lowest qualifying threshold, and a later
    feature replaces an earlier one only on strictly larger score, so the
    result does not depend on dict/set ordering anywhere.
    """
    m = len(idx)
    ysub = y[idx].astype(np.int64)
    best_score = -np.inf
    best = None
    for f in feats:
        x = X[idx, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        c1 = np.cumsum(ysub[order])
        total1 = c1[-1]
        n_left = np.arange(1, m, dtype=np.int64)
        l1 = c1[:-1]
        l0 = n_left - l1
        n_right = m - n_left
        r1 = total1 - l1
        r0 = n_right - r1
        valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        score = (l0 * l0 + l1 * l1) / n_left + (r0 * r0 + r1 * r1) / n_right
        score[~valid] = -np.inf
        j = int(np.argmax(score))
        if score[j] > best_score:
            best_score = score[j]
            best = (int(f), float((xs[j] + xs[j + 1]) / 2.0))
    return best


def _random_split(X, y, idx, feats, min_leaf, rng):
    """One uniform-random threshold per candidate feature, best Gini wins."""
    m = len(idx)
    ysub = y[idx].astype(np.int64)
    total1 = int(ysub.sum())
    best_score = -np.inf
    best = None
    for f in feats:
        x = X[idx, f]
        lo = float(x.min())
        hi = float(x.max())
        if lo == hi:
            continue
        t = float(rng.uniform(lo, hi))
        left = x <= t
        n_left = int(left.sum())
        n_right = m - n_left
        if n_left < min_leaf or n_right < min_leaf:
            continue
        l1 = int(ysub[left].sum())
        l0 = n_left - l1
        r1 = total1 - l1
        r0 = n_right - r1
        score = (l0 * l0 + l1 * l1) / n_left + (r0 * r0 + r1 * r1) / n_right
        if score > best_score:
            best_score = score
            best = (int(f), t)
    return best


def _grow_tree(X, y, idx, *, max_depth, min_leaf, min_split, k_features,
               rng, random_thresholds) -> _Tree:
    """Depth-first, left-child-first growth with an explicit stack.

    The explicit stack keeps zero-gain split chains from exhausting the
    interpreter recursion limit; traversal order (and hence RNG consumption
    and node numbering) matches plain pre-order recursion.
    """
    n_features = X.shape[1]
    feature, threshold, left, right, counts = [], [], [], [], []
    max_seen_depth = 0

    # stack entries: (index array, depth, parent node id, is_left_child)
    stack = [(idx, 0, -1, False)]
    while stack:
        node_idx, depth, parent, is_left = stack.pop()
        node_id = len(feature)
        if parent >= 0:
            if is_left:
                left[parent] = node_id
            else:
                right[parent] = node_id
        max_seen_depth = max(max_seen_depth, depth)

        ones = int(y[node_idx].sum())
        node_counts = (len(node_idx) - ones, ones)
        split = None
        depth_ok = max_depth is None or depth < max_depth
        if (depth_ok and len(node_idx) >= min_split
                and node_counts[0] > 0 and node_counts[1] > 0):
            if k_features >= n_features:
                feats = np.arange(n_features)
            else:
                feats = rng.choice(n_features, size=k_features, replace=False)
            if random_thresholds:
                split = _random_split(X, y, node_idx, feats, min_leaf, rng)
            else:
                split = _best_split(X, y, node_idx, feats, min_leaf)

        if split is None:
            feature.append(_LEAF)
            threshold.append(0.0)
            left.append(_LEAF)
            right.append(_LEAF)
            counts.append(node_counts)
            continue

        f, t = split
        feature.append(f)
        threshold.append(t)
        left.append(_LEAF)
        right.append(_LEAF)
        counts.append(node_counts)
        go_left = X[node_idx, f] <= t
        # push right first so the left child is grown (and numbered) first
        stack.append((node_idx[~go_left], depth + 1, node_id, False))
        stack.append((node_idx[go_left], depth + 1, node_id, True))

    return _Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        counts=np.asarray(counts, dtype=np.int64),
        depth=max_seen_depth,
    )


def _tree_predict_counted(tree: _Tree, X):
    """Vectorized traversal returning (classes, internal-node visits)."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    visits = np.zeros(n, dtype=np.int64)
    while True:
        feat = tree.feature[node]
        active = feat != _LEAF
        if not active.any():
            break
        rows = np.nonzero(active)[0]
        cur = node[rows]
        f = tree.feature[cur]
        go_left = X[rows, f] <= tree.threshold[cur]
        node[rows] = np.where(go_left, tree.left[cur], tree.right[cur])
        visits[rows] += 1
    return tree.klass[node], visits


# ---------------------------------------------------------------------------
# estimators

def _validate_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-dimensional, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("X contains NaN or infinity")
    return X


def _validate_xy(X, y):
    X = _validate_matrix(X)
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != X.shape[0]:
        raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    if X.shape[0] == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    y = y.astype(np.int64)
    bad = ~np.isin(y, (0, 1))
    if bad.any():
        raise ValueError(f"labels must be 0/1, got {np.unique(y[bad])}")
    return X, y.astype(np.int8)


class _TreeEstimator(BaseEstimator, ClassifierMixin):
    """Shared fit/predict machinery; subclasses pin the algorithm."""

    _algorithm = None

    def _hp(self) -> Hyperparams:
        params = self.get_params()
        params.pop("random_state", None)
        return Hyperparams(algorithm=self._algorithm, **params)

    @property
    def hyperparams(self) -> Hyperparams:
        return self._hp()

    def fit(self, X, y):
        X, y = _validate_xy(X, y)
        hp = self._hp()
        n, d = X.shape
        idx = np.arange(n)
        k = resolve_max_features(hp.max_features, d)
        random_thresholds = hp.algorithm == "extra-trees"
        bootstrap = hp.algorithm == "random-forest"

        trees = []
        if hp.algorithm == "single-tree":
            # fully deterministic: all features, exhaustive thresholds
            trees.append(_grow_tree(
                X, y, idx, max_depth=hp.max_depth,
                min_leaf=hp.min_samples_leaf, min_split=hp.min_samples_split,
                k_features=d, rng=None, random_thresholds=False))
        else:
            seed = 0 if self.random_state is None else int(self.random_state)
            # one independent stream per tree: sequential and parallel
            # training consume randomness identically
            streams = np.random.SeedSequence(seed).spawn(hp.n_estimators)
            for ss in streams:
                rng = np.random.default_rng(ss)
                tree_idx = rng.integers(0, n, size=n) if bootstrap else idx
                trees.append(_grow_tree(
                    X, y, tree_idx, max_depth=hp.max_depth,
                    min_leaf=hp.min_samples_leaf,
                    min_split=hp.min_samples_split,
                    k_features=k, rng=rng,
                    random_thresholds=random_thresholds))

        self.trees_ = trees
        self.n_features_in_ = d
        self.classes_ = np.array([0, 1])
        return self

    def _check_fitted(self):
        if not hasattr(self, "trees_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    def predict_counted(self, X):
        """Predict classes and count internal-node comparisons per sample."""
        self._check_fitted()
        X = _validate_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, model expects "
                f"{self.n_features_in_}")
        votes = np.zeros(X.shape[0], dtype=np.int64)
        visits = np.zeros(X.shape[0], dtype=np.int64)
        for tree in self.trees_:
            k, v = _tree_predict_counted(tree, X)
            votes += k
            visits += v
        n_trees = len(self.trees_)
        labels = (2 * votes > n_trees).astype(np.int8)  # vote tie -> class 0
        return labels, visits

    def predict(self, X):
        labels, _ = self.predict_counted(X)
        return labels

    @property
    def depth_(self) -> int:
        self._check_fitted()
        return max(t.depth for t in self.trees_)


class SingleTreeClassifier(_TreeEstimator):
    """One deterministic decision tree grown on all features.

    Parameters
    ----------
    max_depth : int or None
        Maximum root-to-leaf edge count; None means unbounded.
    min_samples_leaf : int
        Minimum training samples each child of a split must keep.
    min_samples_split : int
        Minimum node size considered for splitting.
    random_state : int or None
        Accepted for API symmetry; single trees use no randomness.
    """

    _algorithm = "single-tree"

    def __init__(self, max_depth=None, min_samples_leaf=1,
                 min_samples_split=2, random_state=None):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.min_samples_split = min_samples_split
        self.random_state = random_state


class RandomForestClassifier(_TreeEstimator):
    """Bagged trees: bootstrap rows, random feature subsets per node."""

    _algorithm = "random-forest"

    def __init__(self, n_estimators=100, max_depth=None, min_samples_leaf=1,
                 min_samples_split=2, max_features="sqrt", random_state=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.random_state = random_state


class ExtraTreesClassifier(_TreeEstimator):
    """Extremely randomized trees: full sample, one random threshold per
    candidate feature."""

    _algorithm = "extra-trees"

    def __init__(self, n_estimators=100, max_depth=None, min_samples_leaf=1,
                 min_samples_split=2, max_features="sqrt", random_state=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.random_state = random_state


_ESTIMATORS = {
    "single-tree": SingleTreeClassifier,
    "random-forest": RandomForestClassifier,
    "extra-trees": ExtraTreesClassifier,
}


def build_estimator(hp: Hyperparams, seed: int | None = None) -> _TreeEstimator:
    """Instantiate the estimator class matching a Hyperparams record."""
    cls = _ESTIMATORS[hp.algorithm]
    if hp.algorithm == "single-tree":
        return cls(max_depth=hp.max_depth,
                   min_samples_leaf=hp.min_samples_leaf,
                   min_samples_split=hp.min_samples_split,
                   random_state=seed)
    return cls(n_estimators=hp.n_estimators, max_depth=hp.max_depth,
               min_samples_leaf=hp.min_samples_leaf,
               min_samples_split=hp.min_samples_split,
               max_features=hp.max_features, random_state=seed)


def train(X, y, hp: Hyperparams, seed: int | None = None) -> _TreeEstimator:
    return build_estimator(hp, seed).fit(X, y)


def predict(model: _TreeEstimator, features) -> Prediction:
    """Classify a single feature vector, reporting its traversal cost."""
    labels, visits = model.predict_counted(np.asarray(features).reshape(1, -1))
    return Prediction(label=int(labels[0]), node_visits=int(visits[0]))


# ---------------------------------------------------------------------------
# serialization

def _hp_to_dict(hp: Hyperparams) -> dict:
    return {
        "algorithm": hp.algorithm,
        "max_depth": hp.max_depth,
        "min_samples_leaf": hp.min_samples_leaf,
        "min_samples_split": hp.min_samples_split,
        "max_features": hp.max_features,
        "n_estimators": hp.n_estimators,
    }


def serialize(model: _TreeEstimator) -> bytes:
    """Write a fitted model as a canonical, versioned JSON container.

    Key order and float formatting are fixed, so identical models are
    byte-identical on disk.
    """
    model._check_fitted()
    container = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "hyperparams": _hp_to_dict(model._hp()),
        "seed": model.random_state,
        "n_features": model.n_features_in_,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "counts": t.counts.tolist(),
                "depth": t.depth,
            }
            for t in model.trees_
        ],
    }
    return json.dumps(container, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")


def deserialize(data: bytes) -> _TreeEstimator:
    try:
        container = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptModel(f"not a valid model container: {exc}") from exc
    if not isinstance(container, dict) or container.get("format") != MODEL_FORMAT:
        raise CorruptModel("missing or wrong format tag")
    version = container.get("version")
    if version != MODEL_VERSION:
        raise VersionMismatch(
            f"container version {version!r}, this build reads {MODEL_VERSION}")
    try:
        hp = Hyperparams(**container["hyperparams"])
        model = build_estimator(hp, container.get("seed"))
        trees = []
        for t in container["trees"]:
            tree = _Tree(
                feature=np.asarray(t["feature"], dtype=np.int32),
                threshold=np.asarray(t["threshold"], dtype=np.float64),
                left=np.asarray(t["left"], dtype=np.int32),
                right=np.asarray(t["right"], dtype=np.int32),
                counts=np.asarray(t["counts"], dtype=np.int64).reshape(-1, 2),
                depth=int(t["depth"]),
            )
            trees.append(tree)
        if not trees:
            raise ValueError("container holds no trees")
        model.trees_ = trees
        model.n_features_in_ = int(container["n_features"])
        model.classes_ = np.array([0, 1])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"malformed model container: {exc}") from exc
    return model
