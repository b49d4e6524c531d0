"""Independent exhaustive CART used as an oracle for single-tree forests.

Deliberately written as simple recursive Python over plain lists: every
feature is scanned, every midpoint between consecutive distinct sorted
values (and every one-vs-rest category) is scored, and the best split wins
under the documented total order (higher score, then lower feature index,
then lower threshold). Scores use the same arithmetic definition as the
production kernels - sum over children of (sum counts^2)/size for
classification and (sum y)^2/size for regression - so predictions must
match exactly when the forest degenerates to one deterministic tree
(mtry = p, no resampling).
"""

from __future__ import annotations

from blockedcv.data import CLASSIFICATION, Dataset


class OracleNode:
    def __init__(self):
        self.feature = None
        self.threshold = None
        self.is_categorical = False
        self.left = None
        self.right = None
        self.value = None


def _class_score(counts: dict, size: int) -> float:
    return sum(c * c for c in counts.values()) / size


def _reg_score(total: float, size: int) -> float:
    return total * total / size


def grow_oracle_tree(dataset: Dataset, rows, min_node_size: int = 1) -> OracleNode:
    X = dataset.features
    y = dataset.target
    is_class = dataset.task == CLASSIFICATION
    p = dataset.n_features

    def leaf(rows):
        node = OracleNode()
        if is_class:
            counts = {}
            for r in rows:
                counts[int(y[r])] = counts.get(int(y[r]), 0) + 1
            best_label, best_count = None, -1
            for label in sorted(counts):  # smallest label wins ties
                if counts[label] > best_count:
                    best_label, best_count = label, counts[label]
            node.value = best_label
        else:
            node.value = float(sum(y[r] for r in rows)) / len(rows)
        return node

    def build(rows):
        size = len(rows)
        targets = {float(y[r]) for r in rows}
        if size < min_node_size or len(targets) <= 1:
            return leaf(rows)

        if is_class:
            counts = {}
            for r in rows:
                counts[int(y[r])] = counts.get(int(y[r]), 0) + 1
            parent = _class_score(counts, size)
        else:
            parent = _reg_score(sum(float(y[r]) for r in rows), size)

        best = None  # (score, feature, threshold, is_categorical)
        for f in range(p):
            if dataset.categorical_mask[f]:
                cats = sorted({float(X[r, f]) for r in rows})
                for v in cats:
                    left = [r for r in rows if X[r, f] == v]
                    right = [r for r in rows if X[r, f] != v]
                    if not left or not right:
                        continue
                    score = _split_score(left, right)
                    cand = (score, f, v, True)
                    if _wins(cand, best, parent):
                        best = cand
            else:
                vals = sorted({float(X[r, f]) for r in rows})
                for a, b in zip(vals, vals[1:]):
                    thr = 0.5 * (a + b)
                    if thr == b:  # midpoint rounded up to b
                        thr = a
                    left = [r for r in rows if X[r, f] <= thr]
                    right = [r for r in rows if X[r, f] > thr]
                    score = _split_score(left, right)
                    cand = (score, f, thr, False)
                    if _wins(cand, best, parent):
                        best = cand

        if best is None:
            return leaf(rows)
        score, f, thr, is_cat = best
        node = OracleNode()
        node.feature = f
        node.threshold = thr
        node.is_categorical = is_cat
        if is_cat:
            left_rows = [r for r in rows if X[r, f] == thr]
            right_rows = [r for r in rows if X[r, f] != thr]
        else:
            left_rows = [r for r in rows if X[r, f] <= thr]
            right_rows = [r for r in rows if X[r, f] > thr]
        node.left = build(left_rows)
        node.right = build(right_rows)
        return node

    def _split_score(left, right):
        if is_class:
            lc, rc = {}, {}
            for r in left:
                lc[int(y[r])] = lc.get(int(y[r]), 0) + 1
            for r in right:
                rc[int(y[r])] = rc.get(int(y[r]), 0) + 1
            return _class_score(lc, len(left)) + _class_score(rc, len(right))
        lt = sum(float(y[r]) for r in left)
        rt = sum(float(y[r]) for r in right)
        return _reg_score(lt, len(left)) + _reg_score(rt, len(right))

    def _wins(cand, best, parent):
        score, f, thr, _ = cand
        if best is None:
            return score > parent  # strict impurity reduction required
        bscore, bf, bthr, _ = best
        if score != bscore:
            return score > bscore
        if f != bf:
            return f < bf
        return thr < bthr

    return build(list(rows))


def oracle_predict(node: OracleNode, dataset: Dataset, rows):
    X = dataset.features
    out = []
    for r in rows:
        cur = node
        while cur.feature is not None:
            x = X[r, cur.feature]
            if cur.is_categorical:
                cur = cur.left if x == cur.threshold else cur.right
            else:
                cur = cur.left if x <= cur.threshold else cur.right
        out.append(cur.value)
    return out
