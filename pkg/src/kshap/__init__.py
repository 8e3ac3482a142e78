"""Policy clustering of anonymous state-action data.

A random-forest world-policy is fit on all observations, every observation is
explained with interventional TreeSHAP, and the attributions are clustered
with K-Means.
"""
__version__ = "0.1.0"

from .dataset import Dataset, MARKET_SCHEMA, PD_SCHEMA, load_csv, save_csv  # noqa: E402
from .forest import RandomForest, fit_forest, predict  # noqa: E402
from .shapley import ShapMatrix, draw_background, exact_shap, explain_dataset, tree_shap  # noqa: E402
from .clustering import elbow_select_k, em_k_clustering, kmeans_fit  # noqa: E402
from .metrics import ari, nmi, purity, silhouette, utility  # noqa: E402
from .pipeline import kshap_pipeline  # noqa: E402

__all__ = ["Dataset", "MARKET_SCHEMA", "PD_SCHEMA", "load_csv", "save_csv", "RandomForest",
           "fit_forest", "predict", "ShapMatrix", "draw_background", "exact_shap",
           "explain_dataset", "tree_shap", "elbow_select_k", "em_k_clustering", "kmeans_fit",
           "ari", "nmi", "purity", "silhouette", "utility", "kshap_pipeline", "__version__"]
