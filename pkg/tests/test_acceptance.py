"""Acceptance suite: one recorded PASS/FAIL line per criterion, with runtime.

Run with ``pytest tests/test_acceptance.py -s`` to see each line as it is
produced; the lines are also repeated in the terminal summary.
"""
import hashlib
import time
from pathlib import Path

import numpy as np
import pytest

from kshap.cli import main
from kshap.clustering import _kmeanspp, _lloyd, elbow_select_k, em_k_clustering, kmeans_fit
from kshap.forest import fit_forest
from kshap.metrics import ari, nmi, purity, utility
from kshap.pipeline import ForestParams, kmeans_raw, kshap_pipeline
from kshap.seeding import stream
from kshap.shapley import draw_background, exact_shap, explain_dataset, tree_shap
from kshap.simulator import pi3_config, run_market, run_prisoners_dilemma

from test_clustering import blobs, planted_policies, relabel_accuracy
from test_metrics import ari_oracle, nmi_oracle, planted_linear, purity_oracle


def test_shap_matches_exact_enumeration(criterion):
    t0 = time.perf_counter()
    worst, n_fixtures = 0.0, 0
    for seed in range(24):
        r = np.random.default_rng(seed)
        F = int(r.integers(2, 11))
        d = 1 + seed % 2
        X = r.normal(size=(60, F)).round(1)
        Y = np.column_stack([np.sin(X @ r.normal(size=F)) + r.normal(scale=0.1, size=60)
                             for _ in range(d)])
        forest = fit_forest((X, Y), n_trees=3, max_depth=int(r.integers(1, 5)),
                            min_samples_leaf=1, max_features=F, seed=seed, compute_oob=False)
        bg = X[r.choice(60, size=int(r.integers(1, 17)), replace=False)]
        for x in X[:3]:
            fast = tree_shap(forest, x, bg)
            slow = exact_shap(forest, x, bg)
            worst = max(worst, float(np.abs(fast.phi - slow.phi).max()),
                        float(np.abs(fast.phi0 - slow.phi0).max()))
        n_fixtures += 1
    dt = time.perf_counter() - t0
    ok = criterion(1, "tree SHAP equals exact enumeration", worst <= 1e-9 and dt < 10,
                   f"{n_fixtures} forests, max |diff| = {worst:.2e}", dt)
    assert ok


@pytest.fixture(scope="module")
def market_forest():
    ds = run_market(pi3_config(seed=0)).anonymized()
    t0 = time.perf_counter()
    forest = fit_forest(ds, seed=0)
    return ds, forest, time.perf_counter() - t0


def test_local_accuracy_on_market_rows(criterion, market_forest):
    ds, forest, fit_time = market_forest
    t0 = time.perf_counter()
    rows = np.sort(stream(0, "accuracy-rows").choice(len(ds), size=1000, replace=False))
    sub = ds.take(rows)
    bg = draw_background(ds, 100, seed=0)
    sm = explain_dataset(forest, sub, bg)
    d = forest.n_dims
    total = sm.phi0[None, :] + sm.values.reshape(len(sub), -1, d).sum(axis=1)
    err = float(np.abs(total - forest.predict(sub.states)).max())
    dt = time.perf_counter() - t0
    ok = criterion(2, "local accuracy on 1,000 market rows", err <= 1e-8 and dt < 60,
                   f"T = {len(ds)}, max residual = {err:.2e}, forest fit {fit_time:.0f} s "
                   "(not timed)", dt)
    assert ok


def test_prisoners_dilemma_recovery(criterion):
    t0 = time.perf_counter()
    full = run_prisoners_dilemma("defect-vs-cooperate", 200, "full", seed=0)
    lab = kshap_pipeline(full, k=2, seed=0).labels
    scores = (purity(lab, full.labels), nmi(lab, full.labels), ari(lab, full.labels))
    full_ok = scores == (1.0, 1.0, 1.0)
    null = []
    for seed in range(10):
        ds = run_prisoners_dilemma("defect-vs-cooperate", 200, "null", seed=seed)
        lab = kshap_pipeline(ds, k=2, seed=seed).labels
        null.append((purity(lab, ds.labels), ari(lab, ds.labels), nmi(lab, ds.labels)))
    p, a, n = np.mean(null, axis=0)
    null_ok = abs(p - 0.5) <= 0.02 and abs(a) <= 0.05 and n <= 0.05
    dt = time.perf_counter() - t0
    ok = criterion(3, "prisoner's dilemma", full_ok and null_ok and dt < 30,
                   f"full purity/nmi/ari = {scores}; null mean purity {p:.3f}, "
                   f"ari {a:.3f}, nmi {n:.3f}", dt)
    assert ok


# desk-scale world-policy for the ten-seed market comparison
DESK_FOREST = ForestParams(n_trees=20, max_depth=10, min_samples_leaf=5)
DESK_BACKGROUND = 50


def test_market_kshap_beats_raw_kmeans(criterion):
    t0 = time.perf_counter()
    rows = []
    for seed in range(10):
        ds = run_market(pi3_config(seed=seed))
        res = kshap_pipeline(ds, k=3, forest_params=DESK_FOREST,
                             background_size=DESK_BACKGROUND, seed=seed)
        raw = kmeans_raw(ds, 3, seed=seed)
        rows.append((len(ds), purity(res.labels, ds.labels), ari(res.labels, ds.labels),
                     ari(raw.assignments, ds.labels)))
    T, pur, ari_k, ari_r = np.array(rows).T
    dt = time.perf_counter() - t0
    ok = (T.min() >= 20000 and ari_k.mean() >= 2 * ari_r.mean() and pur.mean() >= 0.60
          and dt < 900)
    ok = criterion(4, "market K-SHAP vs raw K-Means", ok,
                   f"min T = {int(T.min())}, purity {pur.mean():.3f}+-{pur.std():.3f}, "
                   f"ARI {ari_k.mean():.3f} vs raw {ari_r.mean():.3f}", dt)
    assert ok


def test_metric_oracles(criterion):
    t0 = time.perf_counter()
    r = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        T = int(r.integers(2, 13))
        pred = r.integers(0, int(r.integers(1, 6)), T).tolist()
        truth = r.integers(0, int(r.integers(1, 6)), T).tolist()
        worst = max(worst, abs(purity(pred, truth) - purity_oracle(pred, truth)),
                    abs(ari(pred, truth) - ari_oracle(pred, truth)),
                    abs(nmi(pred, truth) - nmi_oracle(pred, truth)))
    examples = (purity([0, 0, 0, 1, 1], [0, 0, 1, 1, 1]) == 0.8
                and ari([0, 0, 1, 1], [0, 1, 0, 1]) == -0.5)
    dt = time.perf_counter() - t0
    ok = criterion(5, "metric oracles", worst <= 1e-12 and examples and dt < 5,
                   f"200 partitions, max |diff| = {worst:.1e}, worked examples {examples}", dt)
    assert ok


def test_kmeans_properties(criterion):
    t0 = time.perf_counter()
    monotone = True
    for seed in range(50):
        r = np.random.default_rng(seed)
        X = r.normal(size=(80, 3)) * r.uniform(0.1, 5, 3)
        k = 2 + seed % 5
        _, _, trace, _ = _lloyd(X, _kmeanspp(X, k, stream(seed, "sweep")), 300,
                                check_monotone=False)
        monotone &= all(b <= a for a, b in zip(trace, trace[1:]))
    r = np.random.default_rng(1)
    X = r.normal(size=(30, 2))
    one = kmeans_fit(X, 1, seed=0)
    closed = (np.max(np.abs(one.centroids[0] - X.mean(0))) <= 1e-12
              and abs(one.inertia - ((X - X.mean(0)) ** 2).sum()) <= 1e-9
              and kmeans_fit(X, 30, seed=0).inertia == 0.0)
    hits = sum(elbow_select_k(blobs(seed, sigma=1.0)[0], 2, 6, seed=seed).chosen_k == 3
               for seed in range(20))
    dt = time.perf_counter() - t0
    ok = criterion(6, "K-Means properties", monotone and closed and hits >= 19 and dt < 60,
                   f"monotone in 50 runs {monotone}, closed forms {closed}, "
                   f"elbow picks 3 in {hits}/20", dt)
    assert ok


def test_utility_properties(criterion):
    t0 = time.perf_counter()
    ds, lab = planted_linear(0, 600)
    zero = utility(ds, np.zeros(len(ds), dtype=int), seed=0).value
    ds, lab = planted_linear(1)
    planted = utility(ds, lab, seed=1).value
    ds, _ = planted_linear(2, 8000)
    r = np.random.default_rng(5)
    rand = float(np.mean([utility(ds, r.integers(0, 2, len(ds)), seed=s).value
                          for s in range(20)]))
    dt = time.perf_counter() - t0
    ok = criterion(7, "utility properties",
                   zero == 0.0 and planted > 0.3 and abs(rand) <= 0.05 and dt < 120,
                   f"k=1 {zero}, planted {planted:.3f}, random mean {rand:+.3f}", dt)
    assert ok


def test_em_descent_and_recovery(criterion):
    t0 = time.perf_counter()
    monotone, accs = True, []
    for seed in range(5):
        S, A, lab = planted_policies(seed)
        m = em_k_clustering(S, A, k=2, seed=seed, restarts=5)
        tr = m.residual_trace
        monotone &= all(b <= a * (1 + 1e-12) for a, b in zip(tr, tr[1:]))
        accs.append(relabel_accuracy(m.assignments, lab))
    dt = time.perf_counter() - t0
    ok = criterion(8, "EM descent and recovery", monotone and min(accs) >= 0.95 and dt < 60,
                   f"monotone {monotone}, min accuracy {min(accs):.3f} over 5 fixtures", dt)
    assert ok


@pytest.mark.slow
def test_full_scale_pipeline(criterion, tmp_path):
    """Simulate 50k rows, fit 100 trees, explain with B=100, cluster with k=3; twice."""

    def once(out):
        out.mkdir()
        t0 = time.perf_counter()
        assert main(["simulate", "--seed", "11", "--horizon", "14000",
                     "--out", str(out / "market.csv")]) == 0
        assert main(["pipeline", "--data", str(out / "market.csv"), "--k", "3", "--seed", "11",
                     "--n-trees", "100", "--background-size", "100",
                     "--out", str(out / "labels.csv"), "--shap-out", str(out / "shap.csv"),
                     "--model-out", str(out / "forest.json")]) == 0
        dt = time.perf_counter() - t0
        return dt, {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                    for p in sorted(out.iterdir())}

    t1, h1 = once(tmp_path / "a")
    t2, h2 = once(tmp_path / "b")
    rows = sum(1 for _ in open(tmp_path / "a" / "market.csv")) - 1
    same = h1 == h2
    worst = max(t1, t2)
    ok = criterion(9, "full-scale pipeline", rows >= 50000 and same and worst < 600,
                   f"T = {rows}, byte-identical {same}, runs {t1:.0f} s and {t2:.0f} s",
                   t1 + t2)
    assert ok
