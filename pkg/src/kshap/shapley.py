"""Interventional Shapley attributions of a world-policy.

Two engines share one definition: the value of a coalition S at x is the mean
model output over background rows b after overwriting b's features in S with
x's. :func:`exact_shap` enumerates coalitions and serves as the oracle;
:func:`tree_shap` computes the same quantity in a single tree walk per row and
tree (see :mod:`kshap._treeshap`).
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _treeshap
from .dataset import AGENT_COL, LABEL_COL
from .errors import (DimensionMismatch, EmptyBackground, IoFailure, MissingColumn, NonFiniteValue,
                     SchemaMismatch, TooManyFeatures, TypeMismatch)
from .forest import default_threads
from .seeding import stream

MAX_EXACT_FEATURES = 15
CHUNK_ROWS = 32


@dataclass(frozen=True, eq=False)
class Background:
    states: np.ndarray
    indices: np.ndarray | None = None

    def __post_init__(self):
        s = np.ascontiguousarray(self.states, dtype=float)
        if s.ndim != 2 or s.shape[0] < 1:
            raise EmptyBackground("background needs at least one row")
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @property
    def size(self):
        return self.states.shape[0]


def draw_background(dataset, size=100, seed=0):
    """Seeded uniform subsample (without replacement) of the dataset's states."""
    X = dataset.states if hasattr(dataset, "states") else np.asarray(dataset, dtype=float)
    T = X.shape[0]
    if T == 0 or size < 1:
        raise EmptyBackground("cannot draw a background from no rows")
    idx = np.sort(stream(seed, "background").choice(T, size=min(size, T), replace=False))
    return Background(X[idx], idx)


@dataclass(frozen=True, eq=False)
class ShapExplanation:
    phi0: np.ndarray    # (d,)
    phi: np.ndarray     # (F, d)

    @property
    def flattened(self):
        return self.phi.reshape(-1)


@dataclass(frozen=True, eq=False)
class ShapMatrix:
    """Per-row attributions flattened feature-major: column ``i * d + j``."""

    values: np.ndarray          # (T, F*d)
    phi0: np.ndarray            # (d,)
    feature_names: tuple
    action_names: tuple
    labels: np.ndarray | None = None
    agent_ids: np.ndarray | None = None

    @property
    def n_rows(self):
        return self.values.shape[0]

    def column_names(self):
        return [f"{f}__{a}" for f in self.feature_names for a in self.action_names]

    def per_dimension(self, j):
        """Attributions for action dimension ``j`` only, shape (T, F)."""
        d = len(self.action_names)
        return self.values[:, j::d]

    def save_csv(self, path):
        header = self.column_names() + [f"phi0__{a}" for a in self.action_names]
        extras = [(n, a) for n, a in ((LABEL_COL, self.labels), (AGENT_COL, self.agent_ids))
                  if a is not None]
        header += [n for n, _ in extras]
        phi0 = [repr(float(v)) for v in self.phi0]
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for i in range(self.n_rows):
                    w.writerow([repr(float(v)) for v in self.values[i]] + phi0
                               + [str(int(a[i])) for _, a in extras])
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load_csv(cls, path):
        try:
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        if not rows:
            raise MissingColumn("phi0__*", str(path))
        header = rows[0]
        phi0_cols = [j for j, h in enumerate(header) if h.startswith("phi0__")]
        if not phi0_cols:
            raise MissingColumn("phi0__*", str(path))
        actions = tuple(header[j][len("phi0__"):] for j in phi0_cols)
        value_cols = [j for j, h in enumerate(header) if "__" in h and not h.startswith("phi0__")]
        feats = []
        for j in value_cols[::len(actions)]:
            feats.append(header[j].rsplit("__", 1)[0])
        expected = [f"{f}__{a}" for f in feats for a in actions]
        if [header[j] for j in value_cols] != expected:
            raise SchemaMismatch(f"{path}: attribution columns are not feature-major")

        def num(r, j, text):
            try:
                v = float(text)
            except ValueError:
                raise TypeMismatch(r, header[j], text) from None
            if not math.isfinite(v):
                raise NonFiniteValue(r, header[j], text)
            return v

        body = [r for r in rows[1:] if r]
        values = np.array([[num(r, j, row[j]) for j in value_cols] for r, row in enumerate(body, 1)],
                          dtype=float).reshape(len(body), len(value_cols))
        phi0 = (np.array([num(1, j, body[0][j]) for j in phi0_cols]) if body
                else np.zeros(len(actions)))
        opt = {}
        for name in (LABEL_COL, AGENT_COL):
            if name in header:
                j = header.index(name)
                opt[name] = np.array([int(float(row[j])) for row in body], dtype=np.int64)
        return cls(values, phi0, tuple(feats), actions, opt.get(LABEL_COL), opt.get(AGENT_COL))


# ------------------------------------------------------------------ oracle


def _as_model(model):
    if hasattr(model, "predict"):
        return model.predict
    return model


def exact_shap(model, x, background, n_features=None):
    """Shapley values by enumerating every coalition (2**F model sweeps).

    ``model`` maps an (n, F) matrix to (n,) or (n, d) outputs.
    """
    bg = background.states if isinstance(background, Background) else np.asarray(background, float)
    if bg.ndim != 2 or bg.shape[0] == 0:
        raise EmptyBackground("background needs at least one row")
    x = np.asarray(x, dtype=float)
    F = x.shape[0] if n_features is None else int(n_features)
    if F > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"exact enumeration supports at most {MAX_EXACT_FEATURES} features")
    if x.shape[0] != F or bg.shape[1] != F:
        raise DimensionMismatch("x, background and n_features disagree")
    f = _as_model(model)
    n_sets = 1 << F
    B = bg.shape[0]
    # all hybrid rows at once: coalition bits pick x, the rest comes from b
    masks = ((np.arange(n_sets)[:, None] >> np.arange(F)[None, :]) & 1).astype(bool)
    hybrid = np.where(masks[:, None, :], x[None, None, :], bg[None, :, :]).reshape(-1, F)
    out = np.asarray(f(hybrid), dtype=float)
    out = out.reshape(n_sets, B, -1)
    v = out.mean(axis=1)                         # (2**F, d)
    size = masks.sum(axis=1)
    weight = np.array([math.factorial(s) * math.factorial(F - s - 1) / math.factorial(F)
                       for s in range(F)])
    phi = np.zeros((F, v.shape[1]))
    for i in range(F):
        bit = 1 << i
        without = np.array([s for s in range(n_sets) if not s & bit], dtype=np.int64)
        w = weight[size[without]]
        phi[i] = (w[:, None] * (v[without | bit] - v[without])).sum(axis=0)
    return ShapExplanation(v[0].copy(), phi)


# --------------------------------------------------------------- tree SHAP


class _Engine:
    """Forest + background prepared for the compiled kernel."""

    def __init__(self, forest, background):
        bg = background.states if isinstance(background, Background) else np.asarray(background)
        if bg.ndim != 2 or bg.shape[0] == 0:
            raise EmptyBackground("background needs at least one row")
        if bg.shape[1] != forest.n_features:
            raise DimensionMismatch(f"background has {bg.shape[1]} features, "
                                    f"forest expects {forest.n_features}")
        self.forest = forest
        self.pk = pk = forest.packed()
        self.nb = bg.shape[0]
        gl = []
        for t in range(len(pk.offsets) - 1):
            a, b = pk.offsets[t], pk.offsets[t + 1]
            gl.append(_treeshap.goes_left_bits(pk.feature[a:b], pk.threshold[a:b], pk.left[a:b],
                                               np.ascontiguousarray(bg, dtype=float)))
        self.gl = np.ascontiguousarray(np.concatenate(gl))
        self.w = _treeshap.weight_table(max(pk.max_depth, 1))
        self.phi0 = forest.predict(np.ascontiguousarray(bg, dtype=float)).mean(axis=0)

    def rows(self, X):
        pk = self.pk
        out = _treeshap.forest_phi(pk.feature, pk.threshold, pk.left, pk.right, pk.value, self.gl,
                                   pk.offsets, pk.tree_dim, pk.tree_scale, pk.max_depth, pk.n_dims,
                                   np.ascontiguousarray(X, dtype=float), self.nb, self.w)
        return out.transpose(0, 2, 1)   # (n, F, d)


def tree_shap(forest, x, background):
    """Interventional SHAP of ``forest`` at ``x`` averaged over ``background``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != forest.n_features:
        raise DimensionMismatch(f"expected a state of length {forest.n_features}")
    eng = _Engine(forest, background)
    return ShapExplanation(eng.phi0, eng.rows(x[None, :])[0])


def explain_dataset(forest, dataset, background, threads=None):
    """Attributions for every row of ``dataset``, in row order.

    Rows are processed in fixed-size chunks, so the result does not depend on
    the number of threads.
    """
    X = dataset.states if hasattr(dataset, "states") else np.asarray(dataset, dtype=float)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise SchemaMismatch(f"dataset has shape {X.shape}, forest expects "
                             f"{forest.n_features} features")
    if hasattr(dataset, "schema") and forest.feature_names and \
            tuple(dataset.schema.features) != tuple(forest.feature_names):
        raise SchemaMismatch("dataset feature names differ from the forest's")
    eng = _Engine(forest, background)
    T, F, d = X.shape[0], forest.n_features, forest.n_dims
    values = np.zeros((T, F * d))
    starts = list(range(0, T, CHUNK_ROWS))

    def run(s):
        e = min(T, s + CHUNK_ROWS)
        values[s:e] = eng.rows(X[s:e]).reshape(e - s, F * d)

    n_threads = threads or default_threads()
    if n_threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    names = forest.feature_names or tuple(f"x{i}" for i in range(F))
    actions = forest.action_names or tuple(f"a{j}" for j in range(d))
    labels = getattr(dataset, "labels", None)
    agents = getattr(dataset, "agent_ids", None)
    return ShapMatrix(values, eng.phi0, tuple(names), tuple(actions), labels, agents)
