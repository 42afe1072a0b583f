"""Slow, direct reference implementations.

These follow the definitions literally (rescanning, explicit loops, normal
equations) and are used to produce the expected outputs stored with the
regression fixtures. They are too slow for real analyses.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from .core import RngStream, kfold_split

__all__ = [
    "reference_cpi",
    "reference_conserve",
    "reference_hierarchical_adjust",
    "reference_select",
    "reference_ward",
]


def reference_ward(X):
    """Ward merges by rescanning every active pair at every step.

    Columns are standardized (ddof 1) and clustered as points in R^n. The
    merge cost of clusters A and B is ``2 |A||B| / (|A|+|B|) ||c_A - c_B||^2``
    (the squared linkage height). Ties go to the lexicographically smallest
    pair of cluster ids.

    Returns
    -------
    list of (left_id, right_id, height)
        New clusters get ids ``p, p+1, ...`` in merge order.
    """
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0, ddof=1)
    Z = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    p = X.shape[1]
    clusters = {j: [j] for j in range(p)}
    merges = []
    next_id = p
    while len(clusters) > 1:
        best = None
        ids = sorted(clusters)
        for a_pos, a in enumerate(ids):
            for b in ids[a_pos + 1:]:
                ca = Z[:, clusters[a]].mean(axis=1)
                cb = Z[:, clusters[b]].mean(axis=1)
                na, nb = len(clusters[a]), len(clusters[b])
                cost = 2.0 * na * nb / (na + nb) * float(np.sum((ca - cb) ** 2))
                if best is None or cost < best[0]:
                    best = (cost, a, b)
        cost, a, b = best
        merges.append((a, b, cost))
        clusters[next_id] = clusters.pop(a) + clusters.pop(b)
        next_id += 1
    return merges


def reference_hierarchical_adjust(tree, p_raw):
    """``max`` of a node's p-value and those of all its ancestors, by enumeration."""
    return np.array(
        [max([p_raw[nid]] + [p_raw[a] for a in tree.ancestors(nid)]) for nid in range(tree.n_nodes)]
    )


def reference_select(tree, psi, alpha=0.05, hierarchical=True):
    """Selected node ids from a ``(nodes, K)`` importance table.

    One-sided t-test from ``scipy.stats``, ancestor enumeration and
    Bonferroni with ``C = p``.
    """
    psi = np.asarray(psi, dtype=float)
    p_raw = np.empty(psi.shape[0])
    for i, row in enumerate(psi):
        if np.ptp(row) == 0:
            p_raw[i] = 0.0 if row[0] > 0 else 1.0
        else:
            p_raw[i] = stats.ttest_1samp(row, 0.0, alternative="greater").pvalue
    p_h = reference_hierarchical_adjust(tree, p_raw) if hierarchical else p_raw
    p_tilde = np.minimum(1.0, tree.p * p_h)
    return sorted(int(i) for i in np.flatnonzero(p_tilde <= alpha)), p_raw


def _allocate_scalar(parent, l, r, il, ir, guard):
    if il and ir:
        half = (parent - l - r) / 2.0
        return l + half, r + half
    if il:
        return l, parent - l
    if ir:
        return parent - r, r
    if l + r <= guard or l < 0 or r < 0:
        return parent / 2.0, parent / 2.0
    ratio = min(max(l / (l + r), 0.0), 1.0)
    return parent * ratio, parent - parent * ratio


def reference_conserve(tree, psi, epsilon, guard=1e-12):
    """Recursive, fold-by-fold, scalar conservation pass."""
    psi = np.asarray(psi, dtype=float)
    K = psi.shape[1]
    ind = []
    for row in psi:
        m, s = row.mean(), row.std(ddof=1)
        ind.append(int(m > 0) if s == 0 else int(m / s >= epsilon))
    out = np.full_like(psi, np.nan)

    def visit(nid, k):
        kids = tree.children(nid)
        if not kids:
            return
        left, right = kids
        out[left, k], out[right, k] = _allocate_scalar(
            out[nid, k], psi[left, k], psi[right, k], ind[left], ind[right], guard
        )
        visit(left, k)
        visit(right, k)

    for k in range(K):
        out[tree.root, k] = psi[tree.root, k]
        visit(tree.root, k)
    return out


def _ridge_normal_equations(X, y, lam):
    """Standardized ridge by solving ``(Z'Z + lam I) w = Z'(y - mean)``."""
    means = X.mean(axis=0)
    sds = X.std(axis=0, ddof=1)
    Z = (X - means) / sds
    yc = y - y.mean(axis=0)
    w = np.linalg.solve(Z.T @ Z + lam * np.eye(Z.shape[1]), Z.T @ yc)
    return means, sds, w, y.mean(axis=0)


def reference_cpi(dataset, tree, K, n_perm, seed, model_lambda, imputer_lambda):
    """RMSE conditional importance of every node, one permutation at a time.

    Uses fixed ridge penalties for the model and the imputers and the same
    fold plan and permutation streams as the fast engine, so results agree
    to rounding.
    """
    X, y = dataset.X, dataset.y
    n, p = X.shape
    root = RngStream(seed)
    plan = kfold_split(n, K, rng=root.derive(0))
    psi = np.zeros((tree.n_nodes, K))
    for k in range(K):
        tr, te = plan.train_indices(k), plan.test_indices(k)
        m_means, m_sds, w, b = _ridge_normal_equations(X[tr], y[tr], model_lambda)

        def rmse(A):
            pred = ((A - m_means) / m_sds) @ w + b
            return np.sqrt(np.mean((y[te] - pred) ** 2))

        reference = rmse(X[te])
        for nid in range(tree.n_nodes):
            G = np.array(tree.members(nid))
            C = np.setdiff1d(np.arange(p), G)
            if C.size == 0:
                pred_te = np.tile(X[tr].mean(axis=0), (te.size, 1))
            else:
                means, sds, coef, intercept = _ridge_normal_equations(X[tr][:, C], X[tr][:, G], imputer_lambda)
                pred_te = ((X[te][:, C] - means) / sds) @ coef + intercept
            resid = X[te][:, G] - pred_te
            gen = root.derive(2).derive(k).derive(int(nid)).generator()
            perms = gen.permuted(np.broadcast_to(np.arange(te.size), (n_perm, te.size)), axis=1)
            total = 0.0
            for perm in perms:
                Xt = X[te].copy()
                Xt[:, G] = pred_te + resid[perm]
                total += rmse(Xt) - reference
            psi[nid, k] = total / n_perm
    return psi
