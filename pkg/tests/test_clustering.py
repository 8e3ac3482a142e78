import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kshap.clustering import (_assign, _kmeanspp, _lloyd, elbow_select_k, em_k_clustering,
                              inertia_of, kmeans_fit, knee_from_curve)
from kshap.errors import RangeTooSmall, TooFewPoints
from kshap.seeding import stream


def blobs(seed, n=60, centers=((0, 0), (10, 0), (0, 10)), sigma=0.1):
    r = np.random.default_rng(seed)
    X = np.vstack([np.asarray(c) + r.normal(scale=sigma, size=(n, 2)) for c in centers])
    return X, np.repeat(np.arange(len(centers)), n)


def planted_policies(seed, T=400, F=3, d=2, sigma=0.01):
    r = np.random.default_rng(seed)
    S = r.normal(size=(T, F))
    W = r.normal(size=(2, F, d)) * 2
    lab = r.integers(0, 2, T)
    A = np.einsum("tf,tfd->td", S, W[lab]) + r.normal(scale=sigma, size=(T, d))
    return S, A, lab


def relabel_accuracy(pred, truth):
    k = max(pred.max(), truth.max()) + 1
    return max(np.mean(np.array(p)[pred] == truth) for p in itertools.permutations(range(k)))


def test_k1_closed_form(rng):
    X = rng.normal(size=(50, 3))
    m = kmeans_fit(X, 1, seed=0)
    np.testing.assert_allclose(m.centroids[0], X.mean(0), atol=1e-12)
    assert m.inertia == pytest.approx(X.var(0).sum() * len(X), rel=1e-12)


def test_kT_closed_form(rng):
    X = rng.normal(size=(12, 2))
    m = kmeans_fit(X, 12, seed=0)
    assert m.inertia == 0.0
    assert sorted(map(tuple, m.centroids)) == sorted(map(tuple, X))


def test_two_pairs_example():
    X = np.array([[0, 0], [0, 1], [10, 10], [10, 11.0]])
    m = kmeans_fit(X, 2, seed=3)
    assert sorted(map(tuple, m.centroids)) == [(0.0, 0.5), (10.0, 10.5)]
    assert m.inertia == 1.0


def test_errors():
    with pytest.raises(TooFewPoints):
        kmeans_fit(np.zeros((2, 1)), 3)
    with pytest.raises(RangeTooSmall):
        elbow_select_k(np.zeros((10, 1)), 2, 3)


@pytest.mark.parametrize("seed", range(10))
def test_invariants_after_fit(seed):
    X, _ = blobs(seed)
    m = kmeans_fit(X, 4, seed=seed, restarts=3)
    assert np.bincount(m.assignments, minlength=4).min() >= 1
    assert inertia_of(X, m.centroids, m.assignments) == pytest.approx(m.inertia, rel=1e-6)
    lab, _ = _assign(X, m.centroids)
    np.testing.assert_array_equal(lab, m.assignments)
    assert all(b <= a * (1 + 1e-12) for a, b in zip(m.inertia_trace, m.inertia_trace[1:]))


def test_ties_go_to_lowest_index():
    lab, _ = _assign(np.array([[0.5]]), np.array([[0.0], [1.0]]))
    assert lab[0] == 0


def test_empty_cluster_repair():
    # duplicated points force k-means++ to reuse a location
    X = np.array([[0.0], [0.0], [0.0], [5.0]])
    m = kmeans_fit(X, 3, seed=0, restarts=1)
    assert np.bincount(m.assignments, minlength=3).min() >= 1


def test_determinism_and_permutation_equivariance(rng):
    X, _ = blobs(2)
    a, b = kmeans_fit(X, 3, seed=4), kmeans_fit(X, 3, seed=4)
    np.testing.assert_array_equal(a.assignments, b.assignments)
    perm = rng.permutation(len(X))
    c = kmeans_fit(X[perm], 3, seed=4)
    assert relabel_accuracy(c.assignments, a.assignments[perm]) == 1.0
    assert c.inertia == pytest.approx(a.inertia, rel=1e-12)


def test_kmeanspp_not_worse_than_random():
    X, _ = blobs(0, centers=((0, 0), (3, 0), (0, 3), (3, 3), (6, 6)), sigma=0.8)
    pp = [kmeans_fit(X, 5, seed=s, restarts=1).inertia for s in range(50)]
    rnd = [kmeans_fit(X, 5, seed=s, restarts=1, init="random").inertia for s in range(50)]
    assert np.median(pp) <= np.median(rnd)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_lloyd_monotone_property(seed, k):
    r = np.random.default_rng(seed)
    X = r.normal(size=(40, 3)) * r.uniform(0.1, 5, 3)
    centers = _kmeanspp(X, k, stream(seed, "t"))
    _, lab, trace, _ = _lloyd(X, centers, 300, check_monotone=True)
    assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(trace, trace[1:]))


def test_knee_rule_arithmetic():
    k, sd, conf = knee_from_curve((2, 3, 4, 5, 6), (10, 4, 3, 2.8, 2.7))
    assert k == 3
    assert sd == pytest.approx((5.0, 0.8, 0.1))
    # ties go to the smaller k
    assert knee_from_curve((1, 2, 3, 4), (4, 3, 2, 1))[0] == 2


def test_three_blob_elbow():
    X, _ = blobs(1)
    rep = elbow_select_k(X, 2, 6, seed=1)
    assert rep.chosen_k == 3 and not rep.low_confidence
    assert rep.ks == (2, 3, 4, 5, 6) and len(rep.distortions) == 5
    assert not rep.monotone_violations


def test_single_blob_low_confidence(rng):
    X = rng.normal(size=(300, 2))
    rep = elbow_select_k(X, 2, 6, seed=0)
    assert rep.low_confidence and rep.knee_confidence < 2


def test_em_recovers_planted_policies():
    S, A, lab = planted_policies(0)
    m = em_k_clustering(S, A, k=2, seed=0, restarts=5)
    assert relabel_accuracy(m.assignments, lab) >= 0.95
    assert all(b <= a * (1 + 1e-9) for a, b in zip(m.residual_trace, m.residual_trace[1:]))


def test_em_k1_is_global_ridge(rng):
    S, A, _ = planted_policies(1)
    m = em_k_clustering(S, A, k=1, seed=0, restarts=1, standardize=False)
    Z = np.hstack([S, np.ones((len(S), 1))])
    W = np.linalg.solve(Z.T @ Z + 1e-6 * np.eye(Z.shape[1]), Z.T @ A)
    np.testing.assert_allclose(m.coefficients[0], W, atol=1e-10)
    assert np.all(m.assignments == 0)


def test_em_errors():
    with pytest.raises(TooFewPoints):
        em_k_clustering(np.zeros((5, 3)), np.zeros((5, 1)), k=2)
