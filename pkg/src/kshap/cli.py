"""Command-line interface: ``kshap <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every subcommand accepts ``--config file.json`` whose keys are the long flag
names (dashes or underscores); explicit flags override file values.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .dataset import SCHEMAS, load_csv, save_csv
from .errors import InvalidConfig, KShapError, StageError
from .forest import RandomForest, default_threads, fit_forest
from .metrics import ari, contingency, nmi, purity, silhouette, utility
from .pipeline import (ALGORITHMS, DEVIATIONS, ForestParams, em_baseline, kmeans_raw,
                       kshap_pipeline, raw_points)
from .seeding import stream
from .shapley import ShapMatrix, draw_background, explain_dataset
from .simulator import MarketConfig, PD_SCENARIOS, pi3_config, run_market, run_prisoners_dilemma


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def _parse_k(v):
    if v is None or v == "auto":
        return v
    try:
        k = int(v)
    except (TypeError, ValueError):
        raise UsageError(f"--k must be an integer or 'auto', got {v!r}") from None
    if k < 1:
        raise UsageError("--k must be >= 1")
    return k


def _threads(cfg):
    return cfg.get("threads") or default_threads()


def _write_json(path, obj):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise KShapError(f"cannot write {path}: {exc}") from exc


def _write_rows(path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise KShapError(f"cannot write {path}: {exc}") from exc


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_labels(path, assignments, truth=None):
    header = ["row_index", "cluster"] + (["label"] if truth is not None else [])
    rows = []
    for i, c in enumerate(assignments):
        rows.append([i, int(c)] + ([int(truth[i])] if truth is not None else []))
    _write_rows(path, header, rows)


def read_labels(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise KShapError(f"cannot read {path}: {exc}") from exc
    header = rows[0] if rows else []
    if "cluster" not in header:
        raise KShapError(f"{path}: missing 'cluster' column")
    j = header.index("cluster")
    return np.array([int(r[j]) for r in rows[1:] if r], dtype=np.int64)


def _label_scores(pred, truth):
    if truth is None:
        return {}
    out = {"purity": purity(pred, truth), "nmi": nmi(pred, truth),
           "contingency": contingency(pred, truth).tolist()}
    out["ari"] = ari(pred, truth) if len(pred) >= 2 else None
    return out


def _report(cmd, cfg, **fields):
    rep = {"version": __version__, "command": cmd, "config": cfg,
           "deviations": list(DEVIATIONS), "purity": None, "ari": None, "nmi": None,
           "silhouette": None, "utility": None, "k": None, "T": None, "seed": cfg.get("seed"),
           "algorithm": None}
    rep.update(fields)
    return rep


def _silhouette(points, pred, sample, seed):
    if len(np.unique(pred)) < 2:
        return None
    if sample and sample < len(pred):
        idx = np.sort(stream(seed, "silhouette").choice(len(pred), sample, replace=False))
        points, pred = points[idx], pred[idx]
        if len(np.unique(pred)) < 2:
            return None
    return silhouette(points, pred)


def _forest_params(cfg):
    return ForestParams(cfg["n_trees"], cfg["max_depth"], cfg["min_samples_leaf"],
                        cfg["max_features"])


# -------------------------------------------------------------- subcommands


def cmd_simulate(cfg):
    if cfg.get("config_market"):
        market = MarketConfig.from_json(cfg["config_market"])
    else:
        market = pi3_config()
    if cfg.get("seed") is not None:
        market.seed = cfg["seed"]
    if cfg.get("horizon") is not None:
        market.horizon = float(cfg["horizon"])
    market.validate()
    ds = run_market(market)
    save_csv(ds, cfg["out"])
    if cfg.get("report"):
        _write_json(cfg["report"], _report("simulate", cfg, T=len(ds), market=market.to_json(),
                                           label_names=list(ds.label_names)))
    return 0


def cmd_pd_gen(cfg):
    ds = run_prisoners_dilemma(cfg["scenario"], cfg["rounds"], cfg["state_mode"], cfg["seed"])
    save_csv(ds, cfg["out"])
    return 0


def cmd_train(cfg):
    ds = load_csv(cfg["data"], cfg["schema"]).anonymized()
    fp = _forest_params(cfg)
    forest = fit_forest(ds, n_trees=fp.n_trees, max_depth=fp.max_depth,
                        min_samples_leaf=fp.min_samples_leaf, max_features=fp.max_features,
                        seed=cfg["seed"], threads=_threads(cfg))
    forest.metadata["schema"] = ds.schema.id
    forest.save(cfg["out"])
    return 0


def cmd_explain(cfg):
    forest = RandomForest.load(cfg["model"])
    ds = load_csv(cfg["data"], cfg["schema"])
    bg_source = ds.anonymized()
    if cfg.get("background_data"):
        bg_source = load_csv(cfg["background_data"], cfg["schema"]).anonymized()
    bg = draw_background(bg_source, cfg["background_size"], cfg["seed"])
    sm = explain_dataset(forest, ds, bg, threads=_threads(cfg))
    sm.save_csv(cfg["out"])
    return 0


def _cluster_points(sm, dimension):
    if dimension is None:
        return sm.values
    if not 0 <= dimension < len(sm.action_names):
        raise UsageError(f"--dimension must be in [0, {len(sm.action_names)})")
    return sm.per_dimension(dimension)


def cmd_cluster(cfg):
    from .clustering import elbow_select_k, kmeans_fit
    sm = ShapMatrix.load_csv(cfg["shap"])
    points = _cluster_points(sm, cfg.get("dimension"))
    k = _parse_k(cfg["k"])
    elbow = None
    if k == "auto":
        elbow = elbow_select_k(points, cfg["k_min"], cfg["k_max"], cfg["seed"], cfg["restarts"])
        km = elbow.models[elbow.chosen_k]
    else:
        km = kmeans_fit(points, k, seed=cfg["seed"], restarts=cfg["restarts"])
    write_labels(cfg["out"], km.assignments, sm.labels)
    if cfg.get("curves") and elbow is not None:
        _write_elbow(cfg["curves"], elbow)
    if cfg.get("report"):
        rep = _report("cluster", cfg, k=km.k, T=len(km.assignments), algorithm="kshap",
                      inertia=km.inertia, iterations=km.iterations_run,
                      chosen_k=None if elbow is None else elbow.chosen_k,
                      elbow=None if elbow is None else elbow.to_json(),
                      **_label_scores(km.assignments, sm.labels))
        _write_json(cfg["report"], rep)
    return 0


def _write_elbow(path, elbow):
    _write_rows(path, ["k", "distortion", "inertia"],
                [[k, _fmt(d), _fmt(i)] for k, d, i in zip(elbow.ks, elbow.distortions,
                                                         elbow.inertias)])


def cmd_evaluate(cfg):
    ds = load_csv(cfg["data"], cfg["schema"])
    pred = read_labels(cfg["labels"])
    if len(pred) != len(ds):
        raise KShapError(f"{len(pred)} cluster labels for {len(ds)} rows")
    rep = _report("evaluate", cfg, k=int(len(np.unique(pred))), T=len(ds), algorithm="external",
                  **_label_scores(pred, ds.labels))
    if cfg.get("points"):
        sm = ShapMatrix.load_csv(cfg["points"])
        rep["silhouette"] = _silhouette(sm.values, pred, cfg["silhouette_sample"], cfg["seed"])
    if cfg.get("with_utility"):
        u = utility(ds.anonymized(), pred, seed=cfg["seed"], threads=_threads(cfg))
        rep["utility"] = u.value
        rep["utility_skipped"] = u.n_skipped
    _write_json(cfg["report"], rep)
    return 0


def cmd_pipeline(cfg):
    ds = load_csv(cfg["data"], cfg["schema"])
    k = _parse_k(cfg["k"])
    t0 = time.perf_counter()
    res = kshap_pipeline(ds, k=k, forest_params=_forest_params(cfg),
                         background_size=cfg["background_size"], seed=cfg["seed"],
                         threads=_threads(cfg), restarts=cfg["restarts"],
                         k_range=(cfg["k_min"], cfg["k_max"]))
    elapsed = time.perf_counter() - t0
    if cfg.get("out"):
        write_labels(cfg["out"], res.labels, ds.labels)
    if cfg.get("shap_out"):
        res.shap.save_csv(cfg["shap_out"])
    if cfg.get("model_out"):
        res.forest.save(cfg["model_out"])
    if cfg.get("curves") and res.elbow is not None:
        _write_elbow(cfg["curves"], res.elbow)
    rep = _report("pipeline", cfg, k=res.k, T=len(ds), algorithm="kshap",
                  inertia=res.kmeans.inertia,
                  chosen_k=None if res.elbow is None else res.elbow.chosen_k,
                  elbow=None if res.elbow is None else res.elbow.to_json(),
                  oob_mse=list(res.forest.oob_mse), **_label_scores(res.labels, ds.labels))
    if cfg.get("silhouette"):
        rep["silhouette"] = _silhouette(res.shap.values, res.labels, cfg["silhouette_sample"],
                                        cfg["seed"])
    if cfg.get("with_utility"):
        rep["utility"] = utility(ds.anonymized(), res.labels, seed=cfg["seed"],
                                 threads=_threads(cfg)).value
    if cfg.get("record_timing"):
        rep["timing"] = dict(res.timing, total=elapsed)
    if cfg.get("report"):
        _write_json(cfg["report"], rep)
    print(f"k={res.k} T={len(ds)}" + (f" purity={rep['purity']:.4f} ari={rep['ari']:.4f} "
                                      f"nmi={rep['nmi']:.4f}" if rep["purity"] is not None else ""))
    return 0


def cmd_sweep(cfg):
    ds = load_csv(cfg["data"], cfg["schema"])
    algos = [a.strip() for a in cfg["algorithms"].split(",") if a.strip()]
    bad = [a for a in algos if a not in ALGORITHMS]
    if bad:
        raise UsageError(f"unknown algorithms {bad}; choose from {list(ALGORITHMS)}")
    if not 1 <= cfg["k_min"] <= cfg["k_max"]:
        raise UsageError("need 1 <= --k-min <= --k-max")
    seed = cfg["seed"]
    rows = []
    metrics = [m.strip() for m in cfg["metrics"].split(",") if m.strip()]
    shap = None
    if "kshap" in algos:
        res = kshap_pipeline(ds, k=cfg["k_min"], forest_params=_forest_params(cfg),
                             background_size=cfg["background_size"], seed=seed,
                             threads=_threads(cfg), restarts=cfg["restarts"])
        shap = res.shap
    raw = raw_points(ds.anonymized()) if "kmeans-raw" in algos or "em" in algos else None
    from .clustering import kmeans_fit
    for algo in algos:
        for k in range(cfg["k_min"], cfg["k_max"] + 1):
            if algo == "kshap":
                pred, points = kmeans_fit(shap.values, k, seed=seed,
                                          restarts=cfg["restarts"]).assignments, shap.values
            elif algo == "kmeans-raw":
                pred, points = kmeans_raw(ds, k, seed=seed, restarts=cfg["restarts"]).assignments, raw
            else:
                pred, points = em_baseline(ds, k, seed=seed, restarts=cfg["restarts"]).assignments, raw
            vals = {}
            if ds.labels is not None:
                vals.update(purity=purity(pred, ds.labels), ari=ari(pred, ds.labels),
                            nmi=nmi(pred, ds.labels))
            if "silhouette" in metrics:
                vals["silhouette"] = _silhouette(points, pred, cfg["silhouette_sample"], seed)
            if "utility" in metrics:
                vals["utility"] = utility(ds.anonymized(), pred, seed=seed,
                                          threads=_threads(cfg)).value
            for m in metrics:
                if m in vals and vals[m] is not None:
                    rows.append([algo, k, m, _fmt(vals[m]), seed])
    _write_rows(cfg["out"], ["algorithm", "k", "metric", "value", "seed"], rows)
    return 0


# ------------------------------------------------------------------ parsing

_COMMON = {"seed": 0, "threads": None, "config": None, "schema": "auto"}
_FOREST = {"n_trees": 100, "max_depth": 16, "min_samples_leaf": 5, "max_features": None}

COMMANDS = {
    "simulate": (cmd_simulate, {"out": None, "report": None, "horizon": None}, ["out"]),
    "pd-gen": (cmd_pd_gen, {"scenario": "defect-vs-cooperate", "rounds": 200,
                            "state_mode": "full", "out": None}, ["out"]),
    "train": (cmd_train, dict(_FOREST, data=None, out=None), ["data", "out"]),
    "explain": (cmd_explain, {"model": None, "data": None, "background_size": 100,
                              "background_data": None, "out": None}, ["model", "data", "out"]),
    "cluster": (cmd_cluster, {"shap": None, "k": "auto", "k_min": 2, "k_max": 6, "restarts": 10,
                              "dimension": None, "out": None, "report": None, "curves": None},
                ["shap", "out"]),
    "evaluate": (cmd_evaluate, {"data": None, "labels": None, "points": None, "report": None,
                                "with_utility": False, "silhouette_sample": 0},
                 ["data", "labels", "report"]),
    "pipeline": (cmd_pipeline, dict(_FOREST, data=None, k="auto", k_min=2, k_max=6, restarts=10,
                                    background_size=100, out=None, report=None, curves=None,
                                    shap_out=None, model_out=None, silhouette=False,
                                    silhouette_sample=0, with_utility=False,
                                    record_timing=False), ["data"]),
    "sweep": (cmd_sweep, dict(_FOREST, data=None, k_min=2, k_max=6,
                              algorithms="kshap,kmeans-raw,em", metrics="purity,ari,nmi,silhouette,utility",
                              restarts=10, background_size=100, silhouette_sample=0, out=None),
              ["data", "out"]),
}

_TYPES = {"seed": int, "threads": int, "n_trees": int, "max_depth": int, "min_samples_leaf": int,
          "max_features": int, "rounds": int, "background_size": int, "k_min": int, "k_max": int,
          "restarts": int, "dimension": int, "silhouette_sample": int, "horizon": float}
_BOOLS = {"with_utility", "silhouette", "record_timing"}
_CHOICES = {"scenario": PD_SCENARIOS, "state_mode": ("null", "full")}


def build_parser():
    p = argparse.ArgumentParser(prog="kshap", description="Policy clustering of anonymous "
                                "state-action data through world-policy attributions.")
    p.add_argument("--version", action="store_true", help="print version and schemas, then exit")
    sub = p.add_subparsers(dest="command")
    for name, (_, params, _req) in COMMANDS.items():
        sp = sub.add_parser(name)
        for key in list(_COMMON) + list(params):
            flag = "--" + key.replace("_", "-")
            kw = {"dest": key, "default": None}
            if key in _BOOLS:
                kw["action"] = "store_const"
                kw["const"] = True
            else:
                kw["type"] = _TYPES.get(key, str)
                if key in _CHOICES:
                    kw["choices"] = _CHOICES[key]
            sp.add_argument(flag, **kw)
    return p


def resolve_config(command, args):
    """Defaults, then the optional JSON file, then explicit flags."""
    _, params, required = COMMANDS[command]
    defaults = dict(_COMMON, **params)
    cfg = dict(defaults)
    file_cfg = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read --config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError("--config must hold a JSON object")
    if command == "simulate":
        # a simulate config file describes the market itself
        cfg["config_market"] = {k: v for k, v in file_cfg.items()} if file_cfg else None
    else:
        norm = {k.replace("-", "_"): v for k, v in file_cfg.items()}
        unknown = sorted(set(norm) - set(defaults))
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        cfg.update(norm)
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    cfg["config"] = args.config
    for key in required:
        if cfg.get(key) in (None, ""):
            raise UsageError(f"missing required flag --{key.replace('_', '-')}")
    if cfg.get("threads") is None and os.environ.get("KSHAP_THREADS"):
        try:
            cfg["threads"] = int(os.environ["KSHAP_THREADS"])
        except ValueError:
            raise UsageError("KSHAP_THREADS must be an integer") from None
    return cfg


def version_text():
    return (f"kshap {__version__}\n"
            f"schemas: {', '.join(sorted(SCHEMAS))}\n"
            f"python: {sys.version.split()[0]}, numpy: {np.__version__}")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.version:
        print(version_text())
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = resolve_config(args.command, args)
        return COMMANDS[args.command][0](cfg)
    except (UsageError, InvalidConfig) as exc:
        print(f"kshap {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"kshap {args.command}: {exc}", file=sys.stderr)
        return 1
    except (KShapError, OSError, ValueError) as exc:
        print(f"kshap {args.command}: [{type(exc).__name__}] {exc}", file=sys.stderr)
        return 1


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
