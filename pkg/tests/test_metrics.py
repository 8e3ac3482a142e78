import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kshap.dataset import Dataset, Schema
from kshap.errors import LengthMismatch, SingleCluster
from kshap.metrics import ari, contingency, evaluate, nmi, purity, silhouette, utility


# ---------------------------------------------------------------- oracles

def purity_oracle(pred, truth):
    total = 0
    for c in set(pred):
        members = [t for p, t in zip(pred, truth) if p == c]
        total += max(Counter(members).values())
    return total / len(pred)


def ari_oracle(pred, truth):
    n11 = n10 = n01 = n00 = 0
    for i, j in itertools.combinations(range(len(pred)), 2):
        sp, st_ = pred[i] == pred[j], truth[i] == truth[j]
        n11 += sp and st_
        n10 += sp and not st_
        n01 += st_ and not sp
        n00 += not sp and not st_
    den = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00)
    if den == 0:
        return 1.0 if n10 == 0 and n01 == 0 else 0.0
    return 2.0 * (n11 * n00 - n10 * n01) / den


def nmi_oracle(pred, truth):
    T = len(pred)
    cp, ct, cj = Counter(pred), Counter(truth), Counter(zip(pred, truth))
    hp = -sum(v / T * math.log(v / T) for v in cp.values())
    ht = -sum(v / T * math.log(v / T) for v in ct.values())
    same = all(len({t for p2, t in zip(pred, truth) if p2 == p}) == 1 for p in cp) and \
        all(len({p for p, t2 in zip(pred, truth) if t2 == t}) == 1 for t in ct)
    if hp == 0 or ht == 0:
        return 1.0 if same else 0.0
    mi = sum(v / T * math.log((v / T) / (cp[p] / T * ct[t] / T)) for (p, t), v in cj.items())
    return mi / ((hp + ht) / 2)


partitions = st.integers(2, 12).flatmap(
    lambda T: st.tuples(st.lists(st.integers(0, 4), min_size=T, max_size=T),
                        st.lists(st.integers(0, 4), min_size=T, max_size=T)))


@settings(max_examples=200, deadline=None)
@given(partitions)
def test_metrics_match_oracles(pt):
    pred, truth = pt
    assert abs(purity(pred, truth) - purity_oracle(pred, truth)) <= 1e-12
    assert abs(ari(pred, truth) - ari_oracle(pred, truth)) <= 1e-12
    assert abs(nmi(pred, truth) - nmi_oracle(pred, truth)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(partitions, st.permutations(range(5)), st.permutations(range(5)))
def test_relabel_invariance(pt, p1, p2):
    pred, truth = pt
    rp = [p1[v] for v in pred]
    rt = [p2[v] for v in truth]
    for m in (purity, ari, nmi):
        assert m(rp, rt) == pytest.approx(m(pred, truth), abs=1e-12)


def test_worked_examples():
    # clusters {A,A,B} and {B,B}
    assert purity([0, 0, 0, 1, 1], [0, 0, 1, 1, 1]) == 0.8
    assert purity([0, 0, 0, 0], [0, 1, 0, 1]) == 0.5
    assert ari([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    # pair counts: n11=0, n10=2, n01=2, n00=2
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == -0.5
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-15)
    assert nmi([0, 0, 1, 1], [1, 1, 0, 0]) == pytest.approx(1.0, abs=1e-15)
    assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0
    table = contingency([0, 0, 0, 1, 1], [0, 0, 1, 1, 1])
    assert table.tolist() == [[2, 1], [0, 2]]


def test_length_mismatch():
    for m in (purity, ari, nmi):
        with pytest.raises(LengthMismatch):
            m([0, 1], [0, 1, 1])


def test_ari_independent_partitions_average_zero():
    r = np.random.default_rng(0)
    vals = [ari(r.integers(0, 3, 1000), r.integers(0, 3, 1000)) for _ in range(100)]
    assert abs(np.mean(vals)) <= 0.05


def two_blobs(seed, n=30):
    r = np.random.default_rng(seed)
    X = np.vstack([r.normal(scale=0.1, size=(n, 2)), r.normal(scale=0.1, size=(n, 2)) + 10])
    return X, np.repeat([0, 1], n)


def silhouette_oracle(X, lab):
    s = []
    for i in range(len(X)):
        d = np.sqrt(((X - X[i]) ** 2).sum(1))
        own = lab == lab[i]
        if own.sum() == 1:
            s.append(0.0)
            continue
        b = d[own].sum() / (own.sum() - 1)
        c = min(d[lab == c].mean() for c in set(lab) if c != lab[i])
        s.append((c - b) / max(b, c))
    return float(np.mean(s))


def test_silhouette_examples():
    X, lab = two_blobs(0)
    assert silhouette(X, lab) > 0.9
    r = np.random.default_rng(1)
    rand = [silhouette(X, r.integers(0, 2, len(X))) for _ in range(20)]
    assert np.mean(rand) <= 0.05
    assert silhouette(np.array([[0.0], [1.0]]), [0, 1]) == 0.0
    with pytest.raises(SingleCluster):
        silhouette(X, np.zeros(len(X), dtype=int))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 4))
def test_silhouette_matches_oracle_and_isometry(seed, k):
    r = np.random.default_rng(seed)
    X = r.normal(size=(25, 3))
    lab = r.integers(0, k, 25)
    if len(np.unique(lab)) < 2:
        return
    s = silhouette(X, lab)
    assert s == pytest.approx(silhouette_oracle(X, lab), abs=1e-12)
    Q, _ = np.linalg.qr(r.normal(size=(3, 3)))
    assert silhouette(X @ Q + r.normal(size=3), lab) == pytest.approx(s, abs=1e-9)


LINEAR = Schema("linear-test", ("s0", "s1"), ("a",))


def planted_linear(seed, T=1200):
    """Two mirrored linear policies a = +-(3 s0 + 4) plus small noise.

    The offset keeps the pooled model's error away from zero everywhere, so
    the per-row error ratios are well conditioned.
    """
    r = np.random.default_rng(seed)
    S = r.uniform(-1, 1, size=(T, 2))
    lab = r.integers(0, 2, T)
    sign = np.where(lab == 0, 1.0, -1.0)
    a = sign * (3 * S[:, 0] + 4) + r.normal(scale=0.05, size=T)
    return Dataset(S, a[:, None], LINEAR), lab


def test_utility_k1_is_zero():
    ds, _ = planted_linear(0, 400)
    assert utility(ds, np.zeros(len(ds), dtype=int), seed=3).value == 0.0


def test_utility_planted_policies():
    ds, lab = planted_linear(1)
    assert utility(ds, lab, seed=1).value > 0.3


def test_utility_random_clusters_near_zero():
    # per-cluster models see half the rows, so small samples bias this negative;
    # at this size the depth cap keeps leaves large enough for the bias to vanish
    ds, _ = planted_linear(2, 8000)
    r = np.random.default_rng(5)
    vals = [utility(ds, r.integers(0, 2, len(ds)), seed=s).value for s in range(20)]
    assert abs(np.mean(vals)) <= 0.05


def test_utility_fallback_for_tiny_clusters():
    ds, _ = planted_linear(3, 200)
    pred = np.zeros(len(ds), dtype=int)
    pred[:2] = 1
    res = utility(ds, pred, seed=0, n_trees=5)
    assert 1 in res.fallback_clusters


def test_evaluate_report():
    rep = evaluate([0, 0, 1, 1], [0, 0, 1, 1], points=np.array([[0.0], [0.1], [5], [5.1]]),
                   algorithm="kshap", seed=2)
    j = rep.to_json()
    assert j["purity"] == j["ari"] == j["nmi"] == 1.0
    assert j["silhouette"] > 0.9 and j["k"] == 2 and j["T"] == 4
    assert np.array(j["contingency"]).sum() == 4
