"""Compiled inner loops for the tree sampler.

Trees live in heap layout: node ``k`` has children ``2k+1`` and ``2k+2``.
``status`` is 0 (absent), 1 (leaf) or 2 (branch). A row goes left at a
branch when its binned value is ``<= cut``, i.e. when ``x < cuts[cut]``.

Random numbers come from numba's internal generator, which must be seeded
with :func:`seed` before a chain starts.
"""

import math

import numpy as np
from numba import njit

LEAF = 1
BRANCH = 2


@njit(cache=True)
def seed(value):
    np.random.seed(value)


@njit(cache=True)
def node_depth(node):
    d = 0
    while node > 0:
        node = (node - 1) // 2
        d += 1
    return d


@njit(cache=True)
def split_prob(depth, alpha, gamma, max_depth):
    if depth >= max_depth:
        return 0.0
    return alpha * (1.0 + depth) ** (-gamma)


@njit(cache=True)
def log_ml(n, s, sigma2, smu2):
    # leaf mean integrated out; constants shared by every partition dropped
    return -0.5 * math.log(1.0 + n * smu2 / sigma2) + 0.5 * (s / sigma2) ** 2 / (
        n / sigma2 + 1.0 / smu2
    )


@njit(cache=True)
def grow_log_prior_ratio(depth, alpha, gamma, max_depth):
    pg = split_prob(depth, alpha, gamma, max_depth)
    if pg <= 0.0:
        return -np.inf
    pgc = split_prob(depth + 1, alpha, gamma, max_depth)
    return math.log(pg) + 2.0 * math.log(1.0 - pgc) - math.log(1.0 - pg)


@njit(cache=True)
def cut_range(var, cut, node, v, ncut_v):
    lo = 0
    hi = ncut_v
    child = node
    while child > 0:
        parent = (child - 1) // 2
        if var[parent] == v:
            if child == 2 * parent + 1:
                if cut[parent] < hi:
                    hi = cut[parent]
            else:
                if cut[parent] + 1 > lo:
                    lo = cut[parent] + 1
        child = parent
    return lo, hi


@njit(cache=True)
def _pick_variable(cum_s):
    u = np.random.random() * cum_s[-1]
    v = np.searchsorted(cum_s, u, side="right")
    if v >= cum_s.shape[0]:
        v = cum_s.shape[0] - 1
    return v


@njit(cache=True)
def mh_step(
    status, var, cut, leaf_of, resid, Xb, ncuts, cum_s,
    alpha, gamma, sigma2, smu2, max_depth, nstat, sstat,
):
    """One GROW/PRUNE Metropolis-Hastings move on a single tree.

    ``nstat``/``sstat`` hold the row count and residual sum of every current
    leaf and are kept consistent on acceptance. Returns 1 if accepted.
    """
    cap = status.shape[0]
    nrow = resid.shape[0]
    nleaves = 0
    nnog = 0
    for k in range(cap):
        if status[k] == LEAF:
            nleaves += 1
        elif status[k] == BRANCH:
            if status[2 * k + 1] == LEAF and status[2 * k + 2] == LEAF:
                nnog += 1

    if nleaves == 1 or np.random.random() < 0.5:
        # GROW
        r = int(np.random.random() * nleaves)
        node = -1
        seen = 0
        for k in range(cap):
            if status[k] == LEAF:
                if seen == r:
                    node = k
                    break
                seen += 1
        d = node_depth(node)
        if d >= max_depth:
            return 0
        v = _pick_variable(cum_s)
        lo, hi = cut_range(var, cut, node, v, ncuts[v])
        if hi <= lo:
            return 0
        c = lo + int(np.random.random() * (hi - lo))
        nl = 0
        sl = 0.0
        nr = 0
        sr = 0.0
        for i in range(nrow):
            if leaf_of[i] == node:
                if Xb[v, i] <= c:
                    nl += 1
                    sl += resid[i]
                else:
                    nr += 1
                    sr += resid[i]
        if nl == 0 or nr == 0:
            return 0
        nnog_new = nnog + 1
        if node > 0:
            sib = node + 1 if node % 2 == 1 else node - 1
            if status[sib] == LEAF:
                nnog_new -= 1
        pgrow = 1.0 if nleaves == 1 else 0.5
        logr = grow_log_prior_ratio(d, alpha, gamma, max_depth)
        logr += log_ml(nl, sl, sigma2, smu2) + log_ml(nr, sr, sigma2, smu2)
        logr -= log_ml(nl + nr, sl + sr, sigma2, smu2)
        logr += math.log(0.5 / nnog_new) - math.log(pgrow / nleaves)
        if math.log(np.random.random()) < logr:
            left = 2 * node + 1
            right = left + 1
            status[node] = BRANCH
            var[node] = v
            cut[node] = c
            status[left] = LEAF
            status[right] = LEAF
            for i in range(nrow):
                if leaf_of[i] == node:
                    leaf_of[i] = left if Xb[v, i] <= c else right
            nstat[left] = nl
            sstat[left] = sl
            nstat[right] = nr
            sstat[right] = sr
            return 1
        return 0

    # PRUNE
    r = int(np.random.random() * nnog)
    node = -1
    seen = 0
    for k in range(cap):
        if status[k] == BRANCH and status[2 * k + 1] == LEAF and status[2 * k + 2] == LEAF:
            if seen == r:
                node = k
                break
            seen += 1
    left = 2 * node + 1
    right = left + 1
    d = node_depth(node)
    nl = nstat[left]
    sl = sstat[left]
    nr = nstat[right]
    sr = sstat[right]
    nleaves_new = nleaves - 1
    pgrow_new = 1.0 if nleaves_new == 1 else 0.5
    logr = grow_log_prior_ratio(d, alpha, gamma, max_depth)
    logr += log_ml(nl, sl, sigma2, smu2) + log_ml(nr, sr, sigma2, smu2)
    logr -= log_ml(nl + nr, sl + sr, sigma2, smu2)
    logr += math.log(0.5 / nnog) - math.log(pgrow_new / nleaves_new)
    if math.log(np.random.random()) < -logr:
        status[node] = LEAF
        var[node] = -1
        cut[node] = -1
        status[left] = 0
        status[right] = 0
        for i in range(nrow):
            if leaf_of[i] == left or leaf_of[i] == right:
                leaf_of[i] = node
        nstat[node] = nl + nr
        sstat[node] = sl + sr
        return 1
    return 0


@njit(cache=True)
def draw_leaves(status, leafv, nstat, sstat, sigma2, smu2):
    for k in range(status.shape[0]):
        if status[k] == LEAF:
            prec = nstat[k] / sigma2 + 1.0 / smu2
            leafv[k] = (sstat[k] / sigma2) / prec + np.random.standard_normal() / math.sqrt(prec)


@njit(cache=True)
def sweep(
    status, var, cut, leafv, leaf_of, fit, target, Xb, ncuts, cum_s,
    alpha, gamma, sigma, smu, max_depth, resid, nstat, sstat,
):
    """Update every tree once (structure move, then leaf values).

    ``fit`` holds the current sum of trees and is updated in place.
    """
    m, cap = status.shape
    nrow = target.shape[0]
    sigma2 = sigma * sigma
    smu2 = smu * smu
    accepted = 0
    for j in range(m):
        st = status[j]
        lo_j = leaf_of[j]
        lv = leafv[j]
        for k in range(cap):
            nstat[k] = 0
            sstat[k] = 0.0
        for i in range(nrow):
            r = target[i] - fit[i] + lv[lo_j[i]]
            resid[i] = r
            nstat[lo_j[i]] += 1
            sstat[lo_j[i]] += r
        accepted += mh_step(
            st, var[j], cut[j], lo_j, resid, Xb, ncuts, cum_s,
            alpha, gamma, sigma2, smu2, max_depth, nstat, sstat,
        )
        draw_leaves(st, lv, nstat, sstat, sigma2, smu2)
        for i in range(nrow):
            fit[i] = target[i] - resid[i] + lv[lo_j[i]]
    return accepted


@njit(cache=True)
def var_counts(status, var, nvars):
    counts = np.zeros(nvars, np.int64)
    m, cap = status.shape
    for j in range(m):
        for k in range(cap):
            if status[j, k] == BRANCH:
                counts[var[j, k]] += 1
    return counts


@njit(cache=True)
def compact(status, var, cut, leafv, thresholds, thr_ptr):
    """Pack heap trees into flat node arrays with local child pointers."""
    m, cap = status.shape
    total = 0
    for j in range(m):
        for k in range(cap):
            if status[j, k] > 0:
                total += 1
    nvar = np.empty(total, np.int32)
    ncut = np.empty(total, np.int32)
    nthr = np.empty(total, np.float64)
    nval = np.empty(total, np.float64)
    nleft = np.empty(total, np.int32)
    nright = np.empty(total, np.int32)
    ptr = np.empty(m + 1, np.int64)
    local = np.empty(cap, np.int64)
    pos = 0
    for j in range(m):
        ptr[j] = pos
        cnt = 0
        for k in range(cap):
            if status[j, k] > 0:
                local[k] = cnt
                cnt += 1
        for k in range(cap):
            if status[j, k] > 0:
                idx = pos + local[k]
                if status[j, k] == BRANCH:
                    v = var[j, k]
                    c = cut[j, k]
                    nvar[idx] = v
                    ncut[idx] = c
                    nthr[idx] = thresholds[thr_ptr[v] + c]
                    nval[idx] = 0.0
                    nleft[idx] = local[2 * k + 1]
                    nright[idx] = local[2 * k + 2]
                else:
                    nvar[idx] = -1
                    ncut[idx] = -1
                    nthr[idx] = 0.0
                    nval[idx] = leafv[j, k]
                    nleft[idx] = -1
                    nright[idx] = -1
        pos += cnt
    ptr[m] = pos
    return nvar, ncut, nthr, nval, nleft, nright, ptr


@njit(cache=True)
def predict_flat(nvar, nthr, nval, nleft, nright, tree_ptr, m, X):
    """Sum-of-trees values, one row per stored ensemble."""
    ndraw = (tree_ptr.shape[0] - 1) // m
    nrow = X.shape[0]
    out = np.zeros((ndraw, nrow))
    for d in range(ndraw):
        for t in range(m):
            base = tree_ptr[d * m + t]
            for i in range(nrow):
                k = 0
                while nvar[base + k] >= 0:
                    if X[i, nvar[base + k]] < nthr[base + k]:
                        k = nleft[base + k]
                    else:
                        k = nright[base + k]
                out[d, i] += nval[base + k]
    return out
