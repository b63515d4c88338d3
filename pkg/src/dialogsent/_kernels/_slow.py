"""Pure numpy versions of the tree kernels.

Both backends must return bit-identical results: scores are built from integer
class counts and the scan order (feature order, then ascending threshold, first
maximum wins) is the same.
"""

import numpy as np

NUM_CLASSES = 3


def _node_score(counts):
    n = counts.sum()
    return float((counts.astype(np.int64) ** 2).sum()) / n


def best_split(X, y, idx, features, min_samples_leaf):
    """Find the best Gini split of the samples ``idx`` over ``features``.

    Returns ``(feature, threshold, score)``; ``feature`` is -1 when no split
    improves on the parent. ``score`` is ``sum(cl**2)/nl + sum(cr**2)/nr``,
    which is maximised exactly where the weighted child Gini is minimised.
    """
    idx = np.asarray(idx, dtype=np.intp)
    m = idx.shape[0]
    ysub = y[idx]
    total = np.bincount(ysub, minlength=NUM_CLASSES).astype(np.int64)
    parent = _node_score(total)
    best_f, best_t, best_s = -1, 0.0, parent + 1e-12 * m
    if m < 2 * min_samples_leaf:
        return best_f, best_t, best_s

    onehot = np.zeros((m, NUM_CLASSES), dtype=np.int64)
    nl = np.arange(1, m, dtype=np.int64)
    nr = m - nl
    size_ok = (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
    for f in features:
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        onehot[:] = 0
        onehot[np.arange(m), ysub[order]] = 1
        left = np.cumsum(onehot, axis=0)[:-1]
        right = total - left
        valid = size_ok & (vs[:-1] != vs[1:])
        if not valid.any():
            continue
        sl = (left * left).sum(axis=1)
        sr = (right * right).sum(axis=1)
        score = sl.astype(np.float64) / nl + sr.astype(np.float64) / nr
        score[~valid] = -np.inf
        i = int(np.argmax(score))
        if score[i] > best_s:
            lo, hi = vs[i], vs[i + 1]
            t = (lo + hi) / 2.0
            if t == hi:
                t = lo
            best_f, best_t, best_s = int(f), float(t), float(score[i])
    return best_f, best_t, best_s


def apply_tree(feature, threshold, left, right, X):
    """Leaf node index reached by every row of ``X``."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.intp)
    active = feature[node] >= 0
    while active.any():
        rows = np.nonzero(active)[0]
        cur = node[rows]
        go_left = X[rows, feature[cur]] <= threshold[cur]
        node[rows] = np.where(go_left, left[cur], right[cur])
        active = feature[node] >= 0
    return node
