"""Numba kernels for CART tree growing and forest prediction.

Trees are stored in flat arrays (feature, threshold, left, right, leaf
value); feature == -1 marks a leaf. Numeric splits send x <= threshold
left, where thresholds are midpoints between consecutive distinct sorted
values. Categorical splits are one-vs-rest: x == threshold goes left.

Split quality is compared through the sum-of-squares score
sum_children(S_c) with S = sum(counts^2)/n for classification (Gini order)
and S = (sum y)^2 / n for regression (variance order); a split is accepted
only if its score strictly exceeds the parent's, which is exactly "the
split strictly reduces impurity". Ties break on lowest feature index, then
lowest threshold.

Each tree consumes one PCG32 stream (same algorithm and default stream as
:class:`blockedcv.rng.Pcg32`): first the row subsample, then the per-node
feature draws in deterministic traversal order, so results are identical no
matter how trees or cells are scheduled.
"""

from __future__ import annotations

import numpy as np
from numba import njit, types

_PCG_MUL = np.uint64(6364136223846793005)
_PCG_INC = np.uint64(1)  # stream 0, matches rng.Pcg32 default

_JIT = dict(cache=True, nogil=True)

# State must stay uint64 across call boundaries; explicit signatures stop
# numba from re-dispatching a signed specialization on the boxed return.
_U64 = types.uint64
_STATE_U32 = types.Tuple((types.uint64, types.uint32))
_STATE_I64 = types.Tuple((types.uint64, types.int64))


@njit(_U64(_U64), **_JIT)
def pcg32_init(seed):
    state = np.uint64(0)
    state = state * _PCG_MUL + _PCG_INC
    state = state + seed
    state = state * _PCG_MUL + _PCG_INC
    return state


@njit(_STATE_U32(_U64), **_JIT)
def pcg32_next(state):
    old = state
    new_state = old * _PCG_MUL + _PCG_INC
    xorshifted = np.uint32(((old >> np.uint64(18)) ^ old) >> np.uint64(27))
    rot = np.uint32(old >> np.uint64(59))
    out = np.uint32((xorshifted >> rot) | (xorshifted << ((np.uint32(0) - rot) & np.uint32(31))))
    return new_state, out


@njit(_STATE_I64(_U64, types.int64), **_JIT)
def pcg32_below(state, bound):
    # Unbiased bounded draw, threshold rejection.
    threshold = np.uint32((np.uint64(0x100000000) - np.uint64(bound)) % np.uint64(bound))
    while True:
        state, r = pcg32_next(state)
        if r >= threshold:
            return state, np.int64(r % np.uint32(bound))


@njit(_U64(_U64, types.int64, types.int64, types.boolean, types.int64[:]), **_JIT)
def _sample_positions(state, n_avail, n_draw, replace, out):
    """Fill out[:n_draw] with positions in [0, n_avail)."""
    if replace:
        for t in range(n_draw):
            state, v = pcg32_below(state, n_avail)
            out[t] = v
    else:
        scratch = np.empty(n_avail, dtype=np.int64)
        for i in range(n_avail):
            scratch[i] = i
        for t in range(n_draw):
            state, v = pcg32_below(state, n_avail - t)
            j = t + v
            tmp = scratch[t]
            scratch[t] = scratch[j]
            scratch[j] = tmp
            out[t] = scratch[t]
    return state


@njit(_U64(_U64, types.int64, types.int64, types.int64[:]), **_JIT)
def sample_distinct(state, p, m, out):
    """Partial Fisher-Yates: out[:m] = m distinct values from [0, p)."""
    scratch = np.empty(p, dtype=np.int64)
    for i in range(p):
        scratch[i] = i
    for t in range(m):
        state, v = pcg32_below(state, p - t)
        j = t + v
        tmp = scratch[t]
        scratch[t] = scratch[j]
        scratch[j] = tmp
        out[t] = scratch[t]
    return state


@njit(**_JIT)
def _better(score, feat, thr, best_score, best_feat, best_thr):
    """Total order on candidate splits: higher score wins, ties go to the
    lower feature index, then the lower threshold. best_feat < 0 means no
    split accepted yet; then only a strict improvement on the parent
    score (held in best_score) wins."""
    if score > best_score:
        return True
    if score < best_score:
        return False
    if best_feat < 0:
        return False
    if feat < best_feat:
        return True
    if feat > best_feat:
        return False
    return thr < best_thr


@njit(**_JIT)
def _grow_tree(
    X, is_cat, n_cat, max_cat, y_class, y_reg, is_classification, n_labels,
    train_rows, n_sample, mtry, min_node_size, replace, seed,
    feat_arr, thr_arr, left_arr, right_arr, leaf_arr,
):
    """Grow one tree; returns its node count. Output arrays are per-tree."""
    state = pcg32_init(seed)
    n_train = train_rows.shape[0]
    p = X.shape[1]

    idx = np.empty(n_sample, dtype=np.int64)
    state = _sample_positions(state, n_train, n_sample, replace, idx)
    for q in range(n_sample):
        idx[q] = train_rows[idx[q]]

    max_nodes = 2 * n_sample + 1
    stack_node = np.empty(max_nodes, dtype=np.int64)
    stack_lo = np.empty(max_nodes, dtype=np.int64)
    stack_hi = np.empty(max_nodes, dtype=np.int64)
    feat_cand = np.empty(p, dtype=np.int64)
    counts_parent = np.empty(max(n_labels, 1), dtype=np.int64)
    counts_left = np.empty(max(n_labels, 1), dtype=np.int64)
    cat_counts = np.empty((max_cat, max(n_labels, 1)), dtype=np.int64)
    cat_sum = np.empty(max_cat, dtype=np.float64)
    cat_n = np.empty(max_cat, dtype=np.int64)

    n_nodes = 1
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n_sample

    while top >= 0:
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        top -= 1
        size = hi - lo

        pure = True
        parent_score = 0.0
        if is_classification:
            for l in range(n_labels):
                counts_parent[l] = 0
            for q in range(lo, hi):
                counts_parent[y_class[idx[q]]] += 1
            seen = 0
            for l in range(n_labels):
                if counts_parent[l] > 0:
                    seen += 1
                parent_score += counts_parent[l] * counts_parent[l]
            parent_score /= size
            pure = seen <= 1
        else:
            s = 0.0
            first = y_reg[idx[lo]]
            for q in range(lo, hi):
                v = y_reg[idx[q]]
                s += v
                if v != first:
                    pure = False
            parent_score = s * s / size

        make_leaf = pure or size < min_node_size
        best_feat = -1
        best_thr = 0.0
        best_score = parent_score
        if not make_leaf:
            m = min(mtry, p)
            state = sample_distinct(state, p, m, feat_cand)
            for c in range(m):
                f = feat_cand[c]
                if is_cat[f]:
                    ncat = n_cat[f]
                    if is_classification:
                        for v in range(ncat):
                            cat_n[v] = 0
                            for l in range(n_labels):
                                cat_counts[v, l] = 0
                        for q in range(lo, hi):
                            v = np.int64(X[idx[q], f])
                            cat_n[v] += 1
                            cat_counts[v, y_class[idx[q]]] += 1
                        for v in range(ncat):
                            nl = cat_n[v]
                            nr = size - nl
                            if nl == 0 or nr == 0:
                                continue
                            sl = 0.0
                            sr = 0.0
                            for l in range(n_labels):
                                cl = cat_counts[v, l]
                                cr = counts_parent[l] - cl
                                sl += cl * cl
                                sr += cr * cr
                            score = sl / nl + sr / nr
                            if _better(score, f, float(v), best_score, best_feat, best_thr):
                                best_score = score
                                best_feat = f
                                best_thr = float(v)
                    else:
                        total = 0.0
                        for v in range(ncat):
                            cat_n[v] = 0
                            cat_sum[v] = 0.0
                        for q in range(lo, hi):
                            v = np.int64(X[idx[q], f])
                            cat_n[v] += 1
                            cat_sum[v] += y_reg[idx[q]]
                            total += y_reg[idx[q]]
                        for v in range(ncat):
                            nl = cat_n[v]
                            nr = size - nl
                            if nl == 0 or nr == 0:
                                continue
                            sl = cat_sum[v]
                            sr = total - sl
                            score = sl * sl / nl + sr * sr / nr
                            if _better(score, f, float(v), best_score, best_feat, best_thr):
                                best_score = score
                                best_feat = f
                                best_thr = float(v)
                else:
                    vals = np.empty(size, dtype=np.float64)
                    for q in range(size):
                        vals[q] = X[idx[lo + q], f]
                    order = np.argsort(vals)
                    if is_classification:
                        for l in range(n_labels):
                            counts_left[l] = 0
                        sl = 0.0
                        for q in range(size - 1):
                            lab = y_class[idx[lo + order[q]]]
                            # Adding one to count c moves sum(c^2) by 2c+1.
                            sl += 2.0 * counts_left[lab] + 1.0
                            counts_left[lab] += 1
                            a = vals[order[q]]
                            b = vals[order[q + 1]]
                            if a == b:
                                continue
                            nl = q + 1
                            nr = size - nl
                            sr = 0.0
                            for l in range(n_labels):
                                cr = counts_parent[l] - counts_left[l]
                                sr += cr * cr
                            score = sl / nl + sr / nr
                            thr = 0.5 * (a + b)
                            if thr == b:  # midpoint rounded up to b
                                thr = a
                            if _better(score, f, thr, best_score, best_feat, best_thr):
                                best_score = score
                                best_feat = f
                                best_thr = thr
                    else:
                        total = 0.0
                        for q in range(size):
                            total += y_reg[idx[lo + q]]
                        run = 0.0
                        for q in range(size - 1):
                            run += y_reg[idx[lo + order[q]]]
                            a = vals[order[q]]
                            b = vals[order[q + 1]]
                            if a == b:
                                continue
                            nl = q + 1
                            nr = size - nl
                            score = run * run / nl + (total - run) * (total - run) / nr
                            thr = 0.5 * (a + b)
                            if thr == b:
                                thr = a
                            if _better(score, f, thr, best_score, best_feat, best_thr):
                                best_score = score
                                best_feat = f
                                best_thr = thr
            if best_feat < 0:
                make_leaf = True

        if make_leaf:
            feat_arr[node] = -1
            if is_classification:
                best_l = 0
                best_c = counts_parent[0]
                for l in range(1, n_labels):
                    if counts_parent[l] > best_c:
                        best_c = counts_parent[l]
                        best_l = l
                leaf_arr[node] = float(best_l)
            else:
                s = 0.0
                for q in range(lo, hi):
                    s += y_reg[idx[q]]
                leaf_arr[node] = s / size
            continue

        # Partition idx[lo:hi] in place; only membership matters.
        mid = lo
        if is_cat[best_feat]:
            for q in range(lo, hi):
                if X[idx[q], best_feat] == best_thr:
                    tmp = idx[mid]
                    idx[mid] = idx[q]
                    idx[q] = tmp
                    mid += 1
        else:
            for q in range(lo, hi):
                if X[idx[q], best_feat] <= best_thr:
                    tmp = idx[mid]
                    idx[mid] = idx[q]
                    idx[q] = tmp
                    mid += 1

        left = n_nodes
        right = n_nodes + 1
        n_nodes += 2
        feat_arr[node] = best_feat
        thr_arr[node] = best_thr
        left_arr[node] = left
        right_arr[node] = right
        top += 1
        stack_node[top] = left
        stack_lo[top] = lo
        stack_hi[top] = mid
        top += 1
        stack_node[top] = right
        stack_lo[top] = mid
        stack_hi[top] = hi

    return n_nodes


@njit(**_JIT)
def grow_forest(
    X, is_cat, n_cat, max_cat, y_class, y_reg, is_classification, n_labels,
    train_rows, tree_seeds, n_sample, mtry, min_node_size, replace,
):
    """Grow one tree per seed; returns stacked node arrays and node counts."""
    num_trees = tree_seeds.shape[0]
    cap = 2 * n_sample + 1
    feat = np.full((num_trees, cap), -1, dtype=np.int64)
    thr = np.zeros((num_trees, cap), dtype=np.float64)
    left = np.zeros((num_trees, cap), dtype=np.int64)
    right = np.zeros((num_trees, cap), dtype=np.int64)
    leaf = np.zeros((num_trees, cap), dtype=np.float64)
    n_nodes = np.zeros(num_trees, dtype=np.int64)

    for t in range(num_trees):
        n_nodes[t] = _grow_tree(
            X, is_cat, n_cat, max_cat, y_class, y_reg, is_classification, n_labels,
            train_rows, n_sample, mtry, min_node_size, replace, tree_seeds[t],
            feat[t], thr[t], left[t], right[t], leaf[t],
        )
    return feat, thr, left, right, leaf, n_nodes


@njit(**_JIT)
def predict_forest(
    X, is_cat, query_rows, feat, thr, left, right, leaf,
    is_classification, n_labels,
):
    """Aggregate tree outputs: majority vote with ties going to the smallest
    label code, or the mean over trees for regression."""
    num_trees = feat.shape[0]
    nq = query_rows.shape[0]
    out = np.empty(nq, dtype=np.float64)
    votes = np.zeros(max(n_labels, 1), dtype=np.int64)
    for qi in range(nq):
        row = query_rows[qi]
        if is_classification:
            for l in range(n_labels):
                votes[l] = 0
        acc = 0.0
        for t in range(num_trees):
            node = 0
            while feat[t, node] >= 0:
                f = feat[t, node]
                x = X[row, f]
                if is_cat[f]:
                    go_left = x == thr[t, node]
                else:
                    go_left = x <= thr[t, node]
                node = left[t, node] if go_left else right[t, node]
            if is_classification:
                votes[np.int64(leaf[t, node])] += 1
            else:
                acc += leaf[t, node]
        if is_classification:
            best_l = 0
            best_v = votes[0]
            for l in range(1, n_labels):
                if votes[l] > best_v:
                    best_v = votes[l]
                    best_l = l
            out[qi] = float(best_l)
        else:
            out[qi] = acc / num_trees
    return out
