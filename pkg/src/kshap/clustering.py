"""K-Means (k-means++ seeding, Lloyd iterations), elbow selection of k, and the
EM baseline that clusters rows by which linear policy explains them best.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RangeTooSmall, TooFewPoints
from .seeding import stream

_MONO_TOL = 1e-9


# ------------------------------------------------------------------ K-Means


@dataclass(frozen=True, eq=False)
class KMeansModel:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations_run: int
    seed: int
    inertia_trace: tuple = ()
    restart: int = 0

    @property
    def k(self):
        return self.centroids.shape[0]

    def predict(self, points):
        return _assign(np.asarray(points, dtype=float), self.centroids)[0]


def _sq_dists(points, centroids):
    # direct differences rather than the dot-product expansion: exact ties
    # and monotone inertia are easier to guarantee this way
    out = np.empty((points.shape[0], centroids.shape[0]))
    for j in range(centroids.shape[0]):
        diff = points - centroids[j]
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def _assign(points, centroids):
    d = _sq_dists(points, centroids)
    lab = np.argmin(d, axis=1)      # first minimum: ties go to the lowest index
    return lab, d[np.arange(len(lab)), lab]


def inertia_of(points, centroids, assignments):
    diff = points - centroids[assignments]
    return float(np.einsum("ij,ij->", diff, diff))


def _kmeanspp(points, k, rng):
    T = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(T)]
    closest = _sq_dists(points, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k: pick any not-yet-used row
            idx = int(rng.integers(T))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, T - 1)
        centers[c] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centers[c:c + 1])[:, 0])
    return centers


def _update(points, lab, k):
    counts = np.bincount(lab, minlength=k)
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, lab, points)
    return sums, counts


def _repair_empty(points, lab, dist, k):
    """Move the farthest points into empty clusters, one per empty cluster."""
    counts = np.bincount(lab, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if len(empty) == 0:
        return lab, False
    lab = lab.copy()
    dist = dist.copy()
    for c in empty:
        # only take from clusters that keep at least one member
        counts = np.bincount(lab, minlength=k)
        donors = counts[lab] > 1
        cand = np.where(donors, dist, -1.0)
        i = int(np.argmax(cand))
        lab[i] = c
        dist[i] = 0.0
    return lab, True


def _lloyd(points, centers, max_iter, check_monotone):
    k = centers.shape[0]
    lab, dist = _assign(points, centers)
    lab, _ = _repair_empty(points, lab, dist, k)
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        sums, counts = _update(points, lab, k)
        centers = sums / counts[:, None]
        inertia = inertia_of(points, centers, lab)
        if check_monotone and trace and inertia > trace[-1] * (1 + _MONO_TOL) + _MONO_TOL:
            raise AssertionError(f"Lloyd inertia increased: {trace[-1]} -> {inertia}")
        trace.append(inertia)
        new_lab, dist = _assign(points, centers)
        # repair before comparing, or a repaired cluster can empty again and cycle
        new_lab, _ = _repair_empty(points, new_lab, dist, k)
        if np.array_equal(new_lab, lab):
            break
        lab = new_lab
    return centers, lab, trace, it


def kmeans_fit(points, k, seed=0, restarts=10, max_iter=300, init="k-means++",
               check_monotone=True):
    """Best-of-``restarts`` K-Means by inertia; deterministic given ``seed``."""
    X = np.ascontiguousarray(points, dtype=float)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D matrix")
    T = X.shape[0]
    if k < 1 or T < k:
        raise TooFewPoints(f"need at least k={k} points, got {T}")
    if not np.isfinite(X).all():
        raise ValueError("points must be finite")
    best = None
    for r in range(max(1, restarts)):
        rng = stream(seed, "kmeans", k, r)
        if init == "k-means++":
            centers = _kmeanspp(X, k, rng)
        elif init == "random":
            centers = X[rng.choice(T, size=k, replace=False)].copy()
        else:
            raise ValueError(f"unknown init {init!r}")
        centers, lab, trace, it = _lloyd(X, centers, max_iter, check_monotone)
        inertia = trace[-1]
        if best is None or inertia < best.inertia:
            best = KMeansModel(centers, lab, inertia, it, int(seed), tuple(trace), r)
    return best


# -------------------------------------------------------------------- elbow


@dataclass(frozen=True, eq=False)
class ElbowReport:
    ks: tuple
    distortions: tuple
    inertias: tuple
    chosen_k: int
    second_differences: tuple
    knee_confidence: float
    low_confidence: bool
    monotone_violations: tuple = ()
    rule: str = "max-second-difference"
    models: dict = field(default_factory=dict, repr=False)

    def to_json(self):
        return {"ks": list(self.ks), "distortions": list(self.distortions),
                "inertias": list(self.inertias), "chosen_k": self.chosen_k,
                "second_differences": list(self.second_differences),
                "knee_confidence": self.knee_confidence, "low_confidence": self.low_confidence,
                "monotone_violations": list(self.monotone_violations), "rule": self.rule}


def knee_from_curve(ks, distortions):
    """Apply the max-second-difference rule to a distortion curve.

    Returns (chosen k, second differences of interior ks, confidence), where
    confidence is the drop into the knee divided by the drop out of it.
    """
    d = np.asarray(distortions, dtype=float)
    if len(d) < 3:
        raise RangeTooSmall("the elbow rule needs at least three candidate ks")
    sd = d[:-2] - 2 * d[1:-1] + d[2:]
    i = int(np.argmax(sd))           # first maximum: ties go to the smaller k
    into = d[i] - d[i + 1]
    out = d[i + 1] - d[i + 2]
    conf = float("inf") if out <= 0 else float(into / out)
    return int(ks[i + 1]), tuple(float(v) for v in sd), conf


def elbow_select_k(points, k_min=2, k_max=6, seed=0, restarts=10, confidence_threshold=2.0):
    """Fit K-Means for each k in [k_min, k_max] and pick the knee of distortion.

    Distortion is the mean Euclidean distance of a point to its centroid.
    """
    X = np.ascontiguousarray(points, dtype=float)
    if k_min < 1 or k_max - k_min < 2:
        raise RangeTooSmall(f"need k_min >= 1 and k_max - k_min >= 2, got [{k_min}, {k_max}]")
    if k_max > X.shape[0]:
        raise TooFewPoints(f"k_max={k_max} exceeds the number of points {X.shape[0]}")
    ks = tuple(range(k_min, k_max + 1))
    models = {k: kmeans_fit(X, k, seed=seed, restarts=restarts) for k in ks}
    dist = []
    for k in ks:
        m = models[k]
        diff = X - m.centroids[m.assignments]
        dist.append(float(np.sqrt(np.einsum("ij,ij->i", diff, diff)).mean()))
    violations = tuple(ks[i + 1] for i in range(len(ks) - 1) if dist[i + 1] > dist[i] * 1.01)
    chosen, sd, conf = knee_from_curve(ks, dist)
    return ElbowReport(ks, tuple(dist), tuple(models[k].inertia for k in ks), chosen, sd, conf,
                       conf < confidence_threshold, violations, models=models)


# --------------------------------------------------------- EM baseline


@dataclass(frozen=True, eq=False)
class EMKClusteringModel:
    coefficients: np.ndarray     # (k, F + 1, d); last row is the intercept
    assignments: np.ndarray
    total_residual: float
    restarts_used: int
    residual_trace: tuple
    iterations_run: int
    state_scale: tuple = ()      # (means, stds) applied to states before fitting
    action_scale: tuple = ()

    @property
    def k(self):
        return self.coefficients.shape[0]


def _design(S):
    return np.hstack([S, np.ones((S.shape[0], 1))])


def _ridge(Z, A, lam):
    p = Z.shape[1]
    return np.linalg.solve(Z.T @ Z + lam * np.eye(p), Z.T @ A)


def _residuals(Z, A, W):
    out = np.empty((Z.shape[0], W.shape[0]))
    for c in range(W.shape[0]):
        r = A - Z @ W[c]
        out[:, c] = np.einsum("ij,ij->i", r, r)
    return out


def _standardize(M):
    mu = M.mean(axis=0)
    sd = M.std(axis=0)
    sd = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mu)), sd, 1.0)
    return (M - mu) / sd, (mu, sd)


def em_k_clustering(states, actions=None, k=2, seed=0, restarts=10, max_iter=100, ridge=1e-6,
                    standardize=True, max_reseeds=20):
    """Alternate row-to-policy assignment and per-cluster ridge refits.

    ``states`` may be a Dataset, in which case ``actions`` is taken from it.
    The objective is the summed squared action residual plus the ridge term;
    it never increases within a restart.
    """
    if actions is None:
        states, actions = states.states, states.actions
    S = np.asarray(states, dtype=float)
    A = np.asarray(actions, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    T, F = S.shape
    if k < 1 or T < k * (F + 1):
        raise TooFewPoints(f"need T >= k*(F+1) = {k * (F + 1)} rows, got {T}")
    if standardize:
        S, s_scale = _standardize(S)
        A, a_scale = _standardize(A)
    else:
        s_scale = a_scale = ()
    Z = _design(S)
    best = None
    for r in range(max(1, restarts)):
        for attempt in range(max_reseeds):
            rng = stream(seed, "em", k, r, attempt)
            lab = rng.integers(0, k, size=T)
            W = np.zeros((k, F + 1, A.shape[1]))
            trace = []
            collapsed = False
            it = 0
            for it in range(1, max_iter + 1):
                for c in range(k):
                    m = lab == c
                    if m.any():
                        W[c] = _ridge(Z[m], A[m], ridge)
                res = _residuals(Z, A, W)
                new_lab = np.argmin(res, axis=1)
                obj = float(res[np.arange(T), new_lab].sum()) + ridge * float((W ** 2).sum())
                if trace and obj > trace[-1] * (1 + _MONO_TOL) + _MONO_TOL:
                    raise AssertionError(f"EM objective increased: {trace[-1]} -> {obj}")
                trace.append(obj)
                if np.array_equal(new_lab, lab):
                    break
                lab = new_lab
            if k == 1 or len(np.unique(lab)) > 1:
                break
            collapsed = True
        if collapsed and k > 1 and len(np.unique(lab)) == 1:
            continue
        res = _residuals(Z, A, W)
        total = float(res[np.arange(T), lab].sum())
        model = EMKClusteringModel(W.copy(), lab.copy(), total, r + 1, tuple(trace), it,
                                   s_scale, a_scale)
        if best is None or total < best.total_residual:
            best = model
    if best is None:
        raise TooFewPoints("every restart collapsed into a single cluster")
    return best
