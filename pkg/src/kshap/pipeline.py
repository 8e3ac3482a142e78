"""End-to-end policy clustering and the two baselines it is compared with."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import elbow_select_k, em_k_clustering, kmeans_fit
from .dataset import FeatureScaler
from .errors import KShapError, StageError
from .forest import fit_forest
from .shapley import draw_background, explain_dataset

ALGORITHMS = ("kshap", "kmeans-raw", "em")

DEVIATIONS = (
    "EM baseline uses linear ridge policies instead of neural networks",
    "utility uses random-forest policies (25 trees, depth 8) on a 25% held-out split",
    "price moving-average differences are encoded as sigmoid(difference / tick size)",
    "attributions use interventional SHAP over a seeded background sample",
    "market-action attributions are concatenated feature-major across action dimensions",
)


@dataclass
class ForestParams:
    n_trees: int = 100
    max_depth: int = 16
    min_samples_leaf: int = 5
    max_features: int | None = None

    def to_json(self):
        return dict(self.__dict__)


@dataclass
class PipelineResult:
    labels: np.ndarray
    forest: object
    background: object
    shap: object
    kmeans: object
    elbow: object = None
    timing: dict = field(default_factory=dict)

    @property
    def k(self):
        return self.kmeans.k


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (KShapError, ValueError, ArithmeticError) as exc:
        raise StageError(name, exc) from exc


def kshap_pipeline(dataset, k="auto", forest_params=None, background_size=100, seed=0,
                   threads=None, restarts=10, k_range=(2, 6)):
    """Fit the world-policy, explain every row, and K-Means the attributions.

    Only states and actions are used; labels and agent ids are dropped first.
    """
    fp = forest_params or ForestParams()
    if isinstance(fp, dict):
        fp = ForestParams(**fp)
    data = dataset.anonymized()
    timing = {}
    t0 = time.perf_counter()
    forest = _stage("fit_forest", fit_forest, data, n_trees=fp.n_trees, max_depth=fp.max_depth,
                    min_samples_leaf=fp.min_samples_leaf, max_features=fp.max_features, seed=seed,
                    threads=threads)
    t1 = time.perf_counter()
    background = _stage("background", draw_background, data, background_size, seed)
    shap = _stage("explain", explain_dataset, forest, data, background, threads=threads)
    t2 = time.perf_counter()
    elbow = None
    if k == "auto":
        elbow = _stage("elbow", elbow_select_k, shap.values, k_range[0], k_range[1], seed,
                       restarts)
        km = elbow.models[elbow.chosen_k]
    else:
        km = _stage("kmeans", kmeans_fit, shap.values, int(k), seed=seed, restarts=restarts)
    t3 = time.perf_counter()
    timing.update(fit_forest=t1 - t0, explain=t2 - t1, cluster=t3 - t2)
    return PipelineResult(km.assignments.copy(), forest, background, shap, km, elbow, timing)


def raw_points(dataset):
    """Standardized state++action matrix used by the raw-space baseline."""
    m = dataset.state_action_matrix()
    return FeatureScaler.fit(m).transform(m)


def kmeans_raw(dataset, k, seed=0, restarts=10):
    return _stage("kmeans", kmeans_fit, raw_points(dataset.anonymized()), k, seed=seed,
                  restarts=restarts)


def em_baseline(dataset, k, seed=0, restarts=10):
    data = dataset.anonymized()
    return _stage("em", em_k_clustering, data.states, data.actions, k=k, seed=seed,
                  restarts=restarts)
