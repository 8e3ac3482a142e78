"""Compiled interventional TreeSHAP kernels.

For a foreground row ``x`` and a background row ``z``, the interventional game
of one tree is a sum of leaf unanimity games. A leaf is reachable when every
split feature on its path can take the value of either x or z consistently.
With X the features forced to x's value (z disagrees) and Z the features
forced to z's value (x disagrees), the leaf value ``v`` splits as

    +v * |X|-1! |Z|! / (|X|+|Z|)!   to each feature in X
    -v * |X|! |Z|-1! / (|X|+|Z|)!   to each feature in Z

``tree_phi_pairwise`` walks that game once per background row and is kept as
the simple reference. ``tree_phi_bits`` walks the tree once per foreground row and
carries all background rows at once as bitsets:

* ``R``: background rows for which the current hybrid path is reachable,
* ``F[f]``: rows that already failed a constraint on feature ``f`` that x
  satisfies (for those rows ``f`` is in X),
* ``k[z]``: |X| of row ``z``; every row in ``R`` shares the same Z, namely
  the path features whose constraints x fails.
"""
import math

import numpy as np
from numba import njit, types
from llvmlite import ir
from numba.extending import intrinsic

_ONE = np.uint64(1)


def weight_table(max_depth):
    """``w[p, q] = p! q! / (p + q + 1)!`` for ``0 <= p, q <= max_depth``."""
    size = max_depth + 1
    w = np.zeros((size, size))
    for p in range(size):
        for q in range(size):
            w[p, q] = math.factorial(p) * math.factorial(q) / math.factorial(p + q + 1)
    return w


def tree_depth(left, right):
    depth = np.zeros(len(left), dtype=np.int64)
    for node in range(len(left)):
        if left[node] >= 0:
            depth[left[node]] = depth[node] + 1
            depth[right[node]] = depth[node] + 1
    return int(depth.max()) if len(depth) else 0


# ---------------------------------------------------------------- reference


@njit(cache=True, nogil=True)
def _walk_pair(node, feature, threshold, left, right, value, x, z, status, xs, zs, nx, nz, w, phi):
    if left[node] < 0:
        v = value[node]
        if nx > 0:
            share = v * w[nx - 1, nz]
            for i in range(nx):
                phi[xs[i]] += share
        if nz > 0:
            share = v * w[nx, nz - 1]
            for i in range(nz):
                phi[zs[i]] -= share
        return 0
    f = feature[node]
    t = threshold[node]
    gx = left[node] if x[f] <= t else right[node]
    gz = left[node] if z[f] <= t else right[node]
    s = status[f]
    if s == 1:
        return _walk_pair(gx, feature, threshold, left, right, value, x, z, status, xs, zs, nx, nz, w, phi)
    if s == 2:
        return _walk_pair(gz, feature, threshold, left, right, value, x, z, status, xs, zs, nx, nz, w, phi)
    if gx == gz:
        return _walk_pair(gx, feature, threshold, left, right, value, x, z, status, xs, zs, nx, nz, w, phi)
    status[f] = 1
    xs[nx] = f
    _walk_pair(gx, feature, threshold, left, right, value, x, z, status, xs, zs, nx + 1, nz, w, phi)
    status[f] = 2
    zs[nz] = f
    _walk_pair(gz, feature, threshold, left, right, value, x, z, status, xs, zs, nx, nz + 1, w, phi)
    status[f] = 0
    return 0


@njit(cache=True, nogil=True)
def tree_phi_pairwise(feature, threshold, left, right, value, x, background, w, phi):
    """Add the background-averaged SHAP of one tree to ``phi`` (pair walk)."""
    n_features = x.shape[0]
    status = np.zeros(n_features, dtype=np.int8)
    xs = np.empty(n_features, dtype=np.int64)
    zs = np.empty(n_features, dtype=np.int64)
    acc = np.zeros(n_features)
    for b in range(background.shape[0]):
        _walk_pair(0, feature, threshold, left, right, value, x, background[b], status, xs, zs,
                   0, 0, w, acc)
    nb = background.shape[0]
    for i in range(n_features):
        phi[i] += acc[i] / nb


# ---------------------------------------------------------------- bitset walk


@intrinsic
def _ctz(typingctx, word):
    """Index of the lowest set bit (LLVM cttz); ``word`` must be nonzero."""
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.cttz(args[0], ir.Constant(ir.IntType(1), 1))

    return sig, codegen


@njit(cache=True, nogil=True)
def goes_left_bits(feature, threshold, left, background):
    """Per internal node, the bitset of background rows sent left."""
    n_nodes = feature.shape[0]
    nb = background.shape[0]
    nw = (nb + 63) // 64
    bits = np.zeros((n_nodes, nw), dtype=np.uint64)
    for node in range(n_nodes):
        if left[node] < 0:
            continue
        f = feature[node]
        t = threshold[node]
        for b in range(nb):
            if background[b, f] <= t:
                bits[node, b >> 6] |= _ONE << np.uint64(b & 63)
    return bits


@njit(cache=True, nogil=True, inline="always")
def _leaf(v, status, R, F, k, pf, npf, nw, u, w, phi):
    # rows in R with their |X| = k; every row shares |Z| = u
    neg = 0.0
    if u > 0:
        for j in range(nw):
            word = R[j]
            while word:
                b = _ctz(word)
                word &= word - _ONE
                neg += w[k[j * 64 + b], u - 1]
    for i in range(npf):
        f = pf[i]
        s = status[f]
        if s == 1:
            acc = 0.0
            for j in range(nw):
                word = R[j] & F[f, j]
                while word:
                    b = _ctz(word)
                    word &= word - _ONE
                    acc += w[k[j * 64 + b] - 1, u]
            phi[f] += v * acc
        elif s == 2:
            phi[f] -= v * neg


@njit(cache=True, nogil=True)
def _walk_bits(feature, threshold, left, right, value, gl, x, valid,
               status, F, R, k, pf, fsave, nsave, node_at, phase, s_at, u_at, w, phi):
    nw = valid.shape[0]
    depth = 0
    npf = 0          # distinct features with a status on the current path, stacked in pf
    node_at[0] = 0
    phase[0] = 0
    u_at[0] = 0
    while depth >= 0:
        node = node_at[depth]
        u = u_at[depth]
        if phase[depth] == 0:
            if left[node] < 0:
                _leaf(value[node], status, R[depth], F, k, pf, npf, nw, u, w, phi)
                depth -= 1
                continue
            f = feature[node]
            x_left = x[f] <= threshold[node]
            s = status[f]
            s_at[depth] = s
            phase[depth] = 1
            gx = left[node] if x_left else right[node]
            # child on x's side
            if s == 2:
                empty = True
                for j in range(nw):
                    same = gl[node, j] if x_left else (~gl[node, j]) & valid[j]
                    R[depth + 1, j] = R[depth, j] & same
                    if R[depth + 1, j]:
                        empty = False
                if empty:
                    continue
            else:
                for j in range(nw):
                    R[depth + 1, j] = R[depth, j]
                    other = (~gl[node, j]) & valid[j] if x_left else gl[node, j]
                    fsave[depth, j] = F[f, j]
                    newly = R[depth, j] & other & ~F[f, j]
                    nsave[depth, j] = newly
                    F[f, j] |= newly
                if s == 0:
                    pf[npf] = f
                    npf += 1
                for j in range(nw):
                    word = nsave[depth, j]
                    while word:
                        b = _ctz(word)
                        word &= word - _ONE
                        k[j * 64 + b] += 1
                status[f] = 1
            depth += 1
            node_at[depth] = gx
            phase[depth] = 0
            u_at[depth] = u
        elif phase[depth] == 1:
            f = feature[node]
            s = s_at[depth]
            x_left = x[f] <= threshold[node]
            if s != 2:
                for j in range(nw):
                    word = nsave[depth, j]
                    while word:
                        b = _ctz(word)
                        word &= word - _ONE
                        k[j * 64 + b] -= 1
                    F[f, j] = fsave[depth, j]
                if s == 0:
                    npf -= 1
                status[f] = s
            phase[depth] = 2
            # child on the other side: f is forced to z's value
            empty = True
            for j in range(nw):
                other = (~gl[node, j]) & valid[j] if x_left else gl[node, j]
                r = R[depth, j] & other
                if s == 1:
                    r &= ~F[f, j]
                R[depth + 1, j] = r
                if r:
                    empty = False
            if empty:
                continue
            go = right[node] if x_left else left[node]
            if s != 2:
                if s == 0:
                    pf[npf] = f
                    npf += 1
                status[f] = 2
                u += 1
            depth += 1
            node_at[depth] = go
            phase[depth] = 0
            u_at[depth] = u
        else:
            s = s_at[depth]
            if s == 0 and status[feature[node]] != 0:
                npf -= 1
            status[feature[node]] = s
            depth -= 1
    return 0


@njit(cache=True, nogil=True)
def tree_phi_bits(feature, threshold, left, right, value, gl, max_depth, x, n_background, w, phi):
    """Add the background-averaged SHAP of one tree to ``phi`` (bitset walk).

    ``gl`` comes from :func:`goes_left_bits` for the same background.
    """
    n_features = x.shape[0]
    nw = (n_background + 63) // 64
    valid = np.zeros(nw, dtype=np.uint64)
    for b in range(n_background):
        valid[b >> 6] |= _ONE << np.uint64(b & 63)
    status = np.zeros(n_features, dtype=np.int8)
    F = np.zeros((n_features, nw), dtype=np.uint64)
    R = np.zeros((max_depth + 2, nw), dtype=np.uint64)
    R[0, :] = valid
    k = np.zeros(nw * 64, dtype=np.int64)
    pf = np.zeros(max_depth + 1, dtype=np.int64)
    fsave = np.zeros((max_depth + 1, nw), dtype=np.uint64)
    nsave = np.zeros((max_depth + 1, nw), dtype=np.uint64)
    node_at = np.zeros(max_depth + 1, dtype=np.int64)
    phase = np.zeros(max_depth + 1, dtype=np.int8)
    s_at = np.zeros(max_depth + 1, dtype=np.int8)
    u_at = np.zeros(max_depth + 1, dtype=np.int64)
    acc = np.zeros(n_features)
    _walk_bits(feature, threshold, left, right, value, gl, x, valid,
               status, F, R, k, pf, fsave, nsave, node_at, phase, s_at, u_at, w, acc)
    for i in range(n_features):
        phi[i] += acc[i] / n_background


@njit(cache=True, nogil=True)
def forest_phi(feature, threshold, left, right, value, gl, offsets, tree_dim, tree_scale,
               max_depth, n_dims, X, n_background, w):
    """SHAP of a packed forest for every row of ``X``; shape (n_rows, n_dims, F).

    Tree ``t`` owns nodes ``offsets[t]:offsets[t+1]`` with child indices local
    to the tree, and contributes ``tree_scale[t]`` times its values to
    dimension ``tree_dim[t]``.
    """
    n_rows, n_features = X.shape
    n_trees = offsets.shape[0] - 1
    nw = (n_background + 63) // 64
    out = np.zeros((n_rows, n_dims, n_features))
    valid = np.zeros(nw, dtype=np.uint64)
    for b in range(n_background):
        valid[b >> 6] |= _ONE << np.uint64(b & 63)
    status = np.zeros(n_features, dtype=np.int8)
    F = np.zeros((n_features, nw), dtype=np.uint64)
    R = np.zeros((max_depth + 2, nw), dtype=np.uint64)
    R[0, :] = valid
    k = np.zeros(nw * 64, dtype=np.int64)
    pf = np.zeros(max_depth + 1, dtype=np.int64)
    fsave = np.zeros((max_depth + 1, nw), dtype=np.uint64)
    nsave = np.zeros((max_depth + 1, nw), dtype=np.uint64)
    node_at = np.zeros(max_depth + 1, dtype=np.int64)
    phase = np.zeros(max_depth + 1, dtype=np.int8)
    s_at = np.zeros(max_depth + 1, dtype=np.int8)
    u_at = np.zeros(max_depth + 1, dtype=np.int64)
    acc = np.zeros(n_features)
    for i in range(n_rows):
        x = X[i]
        for t in range(n_trees):
            a = offsets[t]
            b = offsets[t + 1]
            acc[:] = 0.0
            _walk_bits(feature[a:b], threshold[a:b], left[a:b], right[a:b], value[a:b], gl[a:b],
                       x, valid, status, F, R, k, pf, fsave, nsave, node_at, phase, s_at, u_at, w, acc)
            scale = tree_scale[t] / n_background
            d = tree_dim[t]
            for f in range(n_features):
                out[i, d, f] += acc[f] * scale
    return out
