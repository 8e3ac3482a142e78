"""Clustering scores: purity, ARI, NMI, silhouette and held-out utility."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .dataset import split_indices
from .errors import DegenerateAction, LengthMismatch, SingleCluster
from .forest import fit_forest, predict


def _check(pred, truth, min_len=1):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise LengthMismatch(f"pred has shape {pred.shape}, truth has shape {truth.shape}")
    if len(pred) < min_len:
        raise LengthMismatch(f"need at least {min_len} observations")
    return pred, truth


def contingency(pred, truth):
    """Counts table of shape (n_clusters, n_labels) over the distinct values present."""
    pred, truth = _check(pred, truth)
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def purity(pred, truth):
    table = contingency(pred, truth)
    return float(table.max(axis=1).sum() / table.sum())


def _pairs(counts):
    return sum(int(c) * (int(c) - 1) // 2 for c in np.ravel(counts))


def ari(pred, truth):
    """Adjusted Rand index from exact integer pair counts and one final division."""
    pred, truth = _check(pred, truth, min_len=2)
    table = contingency(pred, truth)
    n_pairs = _pairs([table.sum()])
    sum_ij = _pairs(table)
    sum_a = _pairs(table.sum(axis=1))
    sum_b = _pairs(table.sum(axis=0))
    # both terms scaled by 2 * n_pairs so everything stays integral
    num = 2 * (n_pairs * sum_ij - sum_a * sum_b)
    den = n_pairs * (sum_a + sum_b) - 2 * sum_a * sum_b
    if den == 0:
        return 1.0 if _same_partition(pred, truth) else 0.0
    return num / den


def _same_partition(pred, truth):
    table = contingency(pred, truth)
    return bool((table > 0).sum(axis=1).max() == 1 and (table > 0).sum(axis=0).max() == 1)


def _entropy(counts, total):
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth):
    """Mutual information over the arithmetic mean of the two entropies (nats)."""
    table = contingency(pred, truth)
    T = table.sum()
    h_pred = _entropy(table.sum(axis=1), T)
    h_truth = _entropy(table.sum(axis=0), T)
    if h_pred == 0 or h_truth == 0:
        return 1.0 if _same_partition(pred, truth) else 0.0
    nz = table > 0
    pij = table[nz] / T
    pi = (table.sum(axis=1)[:, None] / T * np.ones_like(table))[nz]
    pj = (table.sum(axis=0)[None, :] / T * np.ones_like(table))[nz]
    mi = float((pij * np.log(pij / (pi * pj))).sum())
    return float(min(1.0, max(0.0, mi / (0.5 * (h_pred + h_truth)))))


@njit(cache=True, nogil=True)
def _silhouette_sums(X, lab, k):
    T = X.shape[0]
    sums = np.zeros((T, k))
    for i in range(T):
        for j in range(i + 1, T):
            s = 0.0
            for f in range(X.shape[1]):
                d = X[i, f] - X[j, f]
                s += d * d
            d = math.sqrt(s)
            sums[i, lab[j]] += d
            sums[j, lab[i]] += d
    return sums


def silhouette(points, pred):
    """Mean silhouette with Euclidean distances; singleton clusters score 0."""
    X = np.ascontiguousarray(points, dtype=float)
    pred = np.asarray(pred)
    if X.shape[0] != len(pred):
        raise LengthMismatch(f"{X.shape[0]} points but {len(pred)} labels")
    _, lab = np.unique(pred, return_inverse=True)
    k = int(lab.max()) + 1 if len(lab) else 0
    if k < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    sums = _silhouette_sums(X, lab.astype(np.int64), k)
    sizes = np.bincount(lab, minlength=k).astype(float)
    T = len(lab)
    own = sizes[lab]
    b = np.where(own > 1, sums[np.arange(T), lab] / np.maximum(own - 1, 1), 0.0)
    other = sums / sizes[None, :]
    other[np.arange(T), lab] = np.inf
    c = other.min(axis=1)
    denom = np.maximum(b, c)
    s = np.where((own > 1) & (denom > 0), (c - b) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


# ------------------------------------------------------------------ utility


@dataclass(frozen=True)
class UtilityResult:
    value: float
    n_evaluated: int
    n_skipped: int
    fallback_clusters: tuple


def utility(dataset, pred, n_trees=25, max_depth=8, min_samples_leaf=5, fraction=0.25, seed=0,
            threads=None, scale_actions=True):
    """Mean held-out relative error reduction of per-cluster over global policies.

    A random ``fraction`` of rows is held out. On the rest one global forest
    and one forest per cluster are fit with identical hyperparameters and
    seed. For each held-out row, with e_g and e_c the squared errors of the
    global and its cluster's model, the score averages (e_g - e_c) / e_g over
    rows with e_g >= 1e-12. Clusters with fewer than F + 1 training rows use
    the global model.
    """
    pred = np.asarray(pred)
    if len(pred) != len(dataset):
        raise LengthMismatch(f"{len(dataset)} rows but {len(pred)} cluster labels")
    test_idx, train_idx = split_indices(len(dataset), fraction, seed)
    S_tr, A_tr = dataset.states[train_idx], dataset.actions[train_idx]
    S_te, A_te = dataset.states[test_idx], dataset.actions[test_idx]
    if scale_actions:
        sd = A_tr.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        A_tr = A_tr / sd
        A_te = A_te / sd
    p_tr, p_te = pred[train_idx], pred[test_idx]
    params = dict(n_trees=n_trees, max_depth=max_depth, min_samples_leaf=min_samples_leaf,
                  seed=seed, threads=threads, compute_oob=False)
    glob = fit_forest((S_tr, A_tr), **params)
    e_g = ((predict(glob, S_te) - A_te) ** 2).sum(axis=1)
    e_c = e_g.copy()
    fallback = []
    for c in np.unique(pred):
        m_tr = p_tr == c
        m_te = p_te == c
        if m_tr.sum() < S_tr.shape[1] + 1 or m_tr.sum() < 2:
            fallback.append(int(c))
            continue
        if not m_te.any():
            continue
        with warnings.catch_warnings():
            # a cluster with a constant action is legitimate here
            warnings.simplefilter("ignore", DegenerateAction)
            model = fit_forest((S_tr[m_tr], A_tr[m_tr]), **params)
        e_c[m_te] = ((predict(model, S_te[m_te]) - A_te[m_te]) ** 2).sum(axis=1)
    keep = e_g >= 1e-12
    value = float(((e_g[keep] - e_c[keep]) / e_g[keep]).mean()) if keep.any() else 0.0
    return UtilityResult(value, int(keep.sum()), int((~keep).sum()), tuple(fallback))


# ------------------------------------------------------------------ report


@dataclass
class ClusteringReport:
    algorithm: str
    k: int
    T: int
    seed: int
    purity: float | None = None
    ari: float | None = None
    nmi: float | None = None
    silhouette: float | None = None
    utility: float | None = None
    timing: dict = field(default_factory=dict)
    contingency: list | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)


def evaluate(pred, truth=None, points=None, algorithm="", seed=0, timing=None, utility_value=None):
    pred = np.asarray(pred)
    k = int(len(np.unique(pred)))
    rep = ClusteringReport(algorithm, k, int(len(pred)), int(seed), timing=dict(timing or {}),
                           utility=utility_value)
    if truth is not None:
        rep.purity = purity(pred, truth)
        rep.ari = ari(pred, truth) if len(pred) >= 2 else None
        rep.nmi = nmi(pred, truth)
        rep.contingency = contingency(pred, truth).tolist()
    if points is not None and k >= 2:
        rep.silhouette = silhouette(points, pred)
    return rep
