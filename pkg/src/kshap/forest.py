"""Bagged CART regression forests, one independent ensemble per action column."""
from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _cart
from .errors import DegenerateAction, DimensionMismatch, EmptyDataset, IoFailure, NoValidSplit
from .seeding import child_seed, stream

FORMAT = "kshap-forest"
FORMAT_VERSION = 1


def default_threads():
    env = os.environ.get("KSHAP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; leaves have ``feature == -1`` and no children."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    def __post_init__(self):
        for name, dt in (("feature", np.int64), ("threshold", float), ("left", np.int64),
                         ("right", np.int64), ("value", float), ("cover", np.int64)):
            a = np.ascontiguousarray(getattr(self, name), dtype=dt)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def is_leaf(self):
        return self.left < 0

    def depth(self):
        d = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.left[node] >= 0:
                d[self.left[node]] = d[self.right[node]] = d[node] + 1
        return int(d.max())

    def predict(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        return _cart.predict_tree(self.feature, self.threshold, self.left, self.right,
                                  self.value, X)

    def to_json(self):
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "value", "cover")}

    @classmethod
    def from_json(cls, obj):
        return cls(**{k: obj[k] for k in ("feature", "threshold", "left", "right", "value", "cover")})

    @classmethod
    def leaf(cls, value, cover=1):
        return cls([-1], [0.0], [-1], [-1], [float(value)], [cover])


@dataclass(frozen=True, eq=False)
class PackedForest:
    """All trees concatenated, as consumed by the compiled SHAP kernel."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    offsets: np.ndarray
    tree_dim: np.ndarray
    tree_scale: np.ndarray
    max_depth: int
    n_dims: int


@dataclass(frozen=True, eq=False)
class RandomForest:
    trees: tuple                 # per action dimension, a tuple of Tree
    n_features: int
    n_trees: int
    max_depth: int
    min_samples_leaf: int
    max_features: int
    seed: int
    feature_names: tuple = ()
    action_names: tuple = ()
    oob_mse: tuple | None = None
    train_mse: tuple | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_dims(self):
        return len(self.trees)

    def predict(self, X):
        return predict(self, X)

    def packed(self):
        cached = self.__dict__.get("_packed")
        if cached is not None:
            return cached
        flat = [(j, t) for j, dim in enumerate(self.trees) for t in dim]
        cat = lambda name: np.ascontiguousarray(  # noqa: E731
            np.concatenate([getattr(t, name) for _, t in flat]))
        offsets = np.zeros(len(flat) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([t.n_nodes for _, t in flat])
        pk = PackedForest(cat("feature"), cat("threshold"), cat("left"), cat("right"), cat("value"),
                          offsets, np.array([j for j, _ in flat], dtype=np.int64),
                          np.array([1.0 / len(self.trees[j]) for j, _ in flat]),
                          max(t.depth() for _, t in flat), self.n_dims)
        object.__setattr__(self, "_packed", pk)
        return pk

    # --- serialization
    def to_json(self):
        return {
            "format": FORMAT, "version": FORMAT_VERSION,
            "n_features": self.n_features, "n_trees": self.n_trees, "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf, "max_features": self.max_features,
            "seed": self.seed, "feature_names": list(self.feature_names),
            "action_names": list(self.action_names),
            "oob_mse": None if self.oob_mse is None else list(self.oob_mse),
            "train_mse": None if self.train_mse is None else list(self.train_mse),
            "metadata": self.metadata,
            "dims": [[t.to_json() for t in dim] for dim in self.trees],
        }

    @classmethod
    def from_json(cls, obj):
        if obj.get("format") != FORMAT or obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"not a {FORMAT} v{FORMAT_VERSION} document")
        trees = tuple(tuple(Tree.from_json(t) for t in dim) for dim in obj["dims"])
        opt = lambda v: None if v is None else tuple(v)  # noqa: E731
        return cls(trees, obj["n_features"], obj["n_trees"], obj["max_depth"],
                   obj["min_samples_leaf"], obj["max_features"], obj["seed"],
                   tuple(obj["feature_names"]), tuple(obj["action_names"]),
                   opt(obj.get("oob_mse")), opt(obj.get("train_mse")), obj.get("metadata", {}))

    def save(self, path):
        try:
            with open(path, "w") as fh:
                json.dump(self.to_json(), fh)
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_json(json.load(fh))
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc


def _fit_one(X, y, T, max_depth, min_samples_leaf, max_features, seed, j, t):
    boot = stream(seed, "bootstrap", j, t).integers(0, T, size=T)
    idx = boot.copy()
    arrays = _cart.grow_tree(X, y, idx, max_depth, min_samples_leaf, max_features,
                             child_seed(seed, "tree", j, t))
    return Tree(*arrays), boot


def fit_forest(data, n_trees=100, max_depth=16, min_samples_leaf=5, max_features=None, seed=0,
               threads=None, compute_oob=True):
    """Fit one bagged forest per action column of ``data`` (a Dataset or (X, Y)).

    Each tree's bootstrap sample and feature draws depend only on
    ``(seed, dimension, tree index)``, so results do not depend on ``threads``.
    """
    if isinstance(data, tuple):
        X, Y = data
        feature_names, action_names = (), ()
    else:
        X, Y = data.states, data.actions
        feature_names, action_names = data.schema.features, data.schema.actions
    X = np.ascontiguousarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    T, F = X.shape
    if T < 2:
        raise EmptyDataset(f"fitting a forest needs at least 2 rows, got {T}")
    if Y.shape[0] != T:
        raise DimensionMismatch(f"{T} states but {Y.shape[0]} actions")
    if min(n_trees, max_depth, min_samples_leaf) < 1:
        raise ValueError("n_trees, max_depth and min_samples_leaf must be positive")
    if max_features is None:
        max_features = int(math.ceil(math.sqrt(F)))
    max_features = int(min(max(1, max_features), F))
    d = Y.shape[1]
    for j in range(d):
        if np.all(Y[:, j] == Y[0, j]):
            name = action_names[j] if action_names else j
            warnings.warn(f"action column {name!r} is constant; its trees are single leaves",
                          DegenerateAction, stacklevel=2)
    ys = [np.ascontiguousarray(Y[:, j]) for j in range(d)]
    jobs = [(j, t) for j in range(d) for t in range(n_trees)]

    def run(job):
        j, t = job
        return _fit_one(X, ys[j], T, max_depth, min_samples_leaf, max_features, seed, j, t)

    n_threads = threads or default_threads()
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    trees = tuple(tuple(results[j * n_trees + t][0] for t in range(n_trees)) for j in range(d))
    oob = None
    if compute_oob:
        oob = []
        for j in range(d):
            acc = np.zeros(T)
            cnt = np.zeros(T)
            for t in range(n_trees):
                tree, boot = results[j * n_trees + t]
                out = np.ones(T, dtype=bool)
                out[boot] = False
                if out.any():
                    acc[out] += tree.predict(X[out])
                    cnt[out] += 1
            m = cnt > 0
            oob.append(float(np.mean((acc[m] / cnt[m] - Y[m, j]) ** 2)) if m.any() else float("nan"))
        oob = tuple(oob)
    forest = RandomForest(trees, F, n_trees, max_depth, min_samples_leaf, max_features, int(seed),
                          tuple(feature_names), tuple(action_names), oob,
                          metadata={"action_units": "raw", "bootstrap": "with replacement, full size",
                                    "criterion": "squared error"})
    pred = predict(forest, X)
    object.__setattr__(forest, "train_mse", tuple(float(v) for v in ((pred - Y) ** 2).mean(axis=0)))
    return forest


def predict(forest, X):
    """Mean tree output per action dimension; 1-D input gives a 1-D result."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise DimensionMismatch(f"expected {forest.n_features} features, got shape {X.shape}")
    X = np.ascontiguousarray(X)
    out = np.zeros((X.shape[0], forest.n_dims))
    for j, dim in enumerate(forest.trees):
        for t in dim:
            out[:, j] += t.predict(X)
        out[:, j] /= len(dim)
    return out[0] if single else out


def split_search(X, y, features=None, min_samples_leaf=1):
    """Best variance-reduction split of (X, y) over ``features``.

    Returns ``(feature, threshold)``; thresholds are midpoints between
    consecutive distinct values and a row goes left when ``x <= threshold``.
    Ties go to the lowest feature index, then the lowest threshold.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if features is None:
        features = np.arange(X.shape[1])
    features = np.sort(np.asarray(features, dtype=np.int64))
    idx = np.arange(X.shape[0], dtype=np.int64)
    f, t, _, _ = _cart.best_split(X, y, idx, 0, X.shape[0], features, min_samples_leaf)
    if f < 0:
        raise NoValidSplit("no candidate feature admits a split")
    return int(f), float(t)
