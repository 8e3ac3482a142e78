"""Compiled CART kernels: regression-tree growth and split search.

Trees are stored as flat node arrays (feature, threshold, left, right, value,
cover). A leaf has ``feature == -1`` and ``left == right == -1``.
"""
import numpy as np
from numba import njit

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(cache=True, nogil=True)
def _splitmix64(state):
    z = state + np.uint64(0x9E3779B97F4A7C15)
    out = z
    out = (out ^ (out >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    out = (out ^ (out >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    out = out ^ (out >> np.uint64(31))
    return z, out


@njit(cache=True, nogil=True)
def best_split(X, y, idx, start, end, features, min_samples_leaf):
    """Exhaustive variance-reduction search over ``features`` (ascending).

    Returns (feature, threshold, score, n_left). ``feature == -1`` when no
    candidate threshold satisfies the leaf-size constraint. ``score`` is
    ``sum_l**2/n_l + sum_r**2/n_r``, which orders splits exactly like the
    reduction in summed squared error.
    """
    n = end - start
    best_f = -1
    best_t = 0.0
    best_score = -np.inf
    best_nl = 0
    vals = np.empty(n)
    ys = np.empty(n)
    total = 0.0
    for i in range(n):
        total += y[idx[start + i]]
    for fi in range(features.shape[0]):
        f = features[fi]
        for i in range(n):
            vals[i] = X[idx[start + i], f]
        order = np.argsort(vals, kind="quicksort")
        sv = vals[order]
        if sv[0] == sv[n - 1]:
            continue
        for i in range(n):
            ys[i] = y[idx[start + order[i]]]
        cum = 0.0
        for i in range(1, n):
            cum += ys[i - 1]
            if i < min_samples_leaf or n - i < min_samples_leaf:
                continue
            if sv[i - 1] == sv[i]:
                continue
            right = total - cum
            score = cum * cum / i + right * right / (n - i)
            if score > best_score:
                best_score = score
                best_f = f
                t = 0.5 * (sv[i - 1] + sv[i])
                if t == sv[i]:
                    t = sv[i - 1]
                best_t = t
                best_nl = i
    return best_f, best_t, best_score, best_nl


@njit(cache=True, nogil=True)
def _is_constant_feature(X, idx, start, end, f):
    v0 = X[idx[start], f]
    for i in range(start + 1, end):
        if X[idx[i], f] != v0:
            return False
    return True


@njit(cache=True, nogil=True)
def grow_tree(X, y, idx, max_depth, min_samples_leaf, max_features, seed):
    """Grow one regression tree on the rows ``idx`` (a bootstrap sample).

    ``idx`` is permuted in place. Candidate features per node come from a
    seeded shuffle; features constant within the node do not count towards
    ``max_features``.
    """
    n = idx.shape[0]
    n_features = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    cover = np.zeros(cap, dtype=np.int64)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    perm = np.arange(n_features)
    chosen = np.empty(n_features, dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    rng = np.uint64(seed)

    n_nodes = 1
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        m = end - start
        s = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(start, end):
            v = y[idx[i]]
            s += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        value[node] = s / m
        cover[node] = m
        if depth >= max_depth or m < 2 * min_samples_leaf or ymin == ymax:
            continue

        # seeded partial Fisher-Yates; skip features constant in this node
        for j in range(n_features):
            perm[j] = j
        n_chosen = 0
        for j in range(n_features):
            rng, r = _splitmix64(rng)
            k = j + np.int64(r % np.uint64(n_features - j))
            tmp = perm[j]
            perm[j] = perm[k]
            perm[k] = tmp
            f = perm[j]
            if not _is_constant_feature(X, idx, start, end, f):
                chosen[n_chosen] = f
                n_chosen += 1
                if n_chosen == max_features:
                    break
        if n_chosen == 0:
            continue
        feats = np.sort(chosen[:n_chosen])
        bf, bt, bscore, bnl = best_split(X, y, idx, start, end, feats, min_samples_leaf)
        if bf < 0:
            continue

        # stable partition of idx[start:end] on the chosen split
        nl = 0
        nr = 0
        for i in range(start, end):
            r0 = idx[i]
            if X[r0, bf] <= bt:
                idx[start + nl] = r0
                nl += 1
            else:
                buf[nr] = r0
                nr += 1
        for i in range(nr):
            idx[start + nl + i] = buf[i]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = bf
        threshold[node] = bt
        left[node] = lc
        right[node] = rc
        # push right first so the left subtree is grown first
        st_node[sp] = rc
        st_start[sp] = start + nl
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lc
        st_start[sp] = start
        st_end[sp] = start + nl
        st_depth[sp] = depth + 1
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), cover[:n_nodes].copy())


@njit(cache=True, nogil=True)
def predict_tree(feature, threshold, left, right, value, X):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while left[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out
