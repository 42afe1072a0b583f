"""p-values over folds, hierarchical adjustment and Bonferroni selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

__all__ = [
    "InferenceResult",
    "bonferroni_select",
    "hierarchical_adjust",
    "infer",
    "t_cdf",
    "t_sf",
    "t_test_one_sided",
]


def t_sf(t, df):
    """Upper tail ``1 - F(t)`` of Student's t with ``df`` degrees of freedom."""
    t = np.asarray(t, dtype=float)
    if np.any(np.asarray(df) < 1):
        raise ValueError("df must be at least 1")
    x = df / (df + t**2)
    half = 0.5 * betainc(0.5 * df, 0.5, x)
    out = np.where(t >= 0, half, 1.0 - half)
    out = np.where(np.isposinf(t), 0.0, np.where(np.isneginf(t), 1.0, out))
    return out if out.ndim else float(out)


def t_cdf(t, df):
    """Student-t distribution function via the regularized incomplete beta.

    For ``t >= 0``, ``F(t) = 1 - I_x(df/2, 1/2) / 2`` with ``x = df / (df + t^2)``.
    """
    return t_sf(-np.asarray(t, dtype=float), df)


def t_test_one_sided(psi):
    """p-value of ``H0: mean <= 0`` against ``H1: mean > 0`` over folds.

    Zero spread is decided directly: ``p = 0`` if the mean is positive,
    ``p = 1`` otherwise.
    """
    psi = np.asarray(psi, dtype=float)
    K = psi.shape[-1]
    if K < 2:
        raise ValueError("the t-test needs at least 2 folds")
    mean = psi.mean(axis=-1)
    sd = psi.std(axis=-1, ddof=1)
    scale = np.maximum(np.abs(mean), np.max(np.abs(psi), axis=-1))
    degenerate = sd <= 1e-14 * np.maximum(scale, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = mean / (sd / np.sqrt(K))
    p = np.asarray(t_sf(np.where(degenerate, 0.0, t), K - 1), dtype=float)
    p = np.where(degenerate, np.where(mean > 0, 0.0, 1.0), p)
    return float(p) if p.ndim == 0 else p


def hierarchical_adjust(tree, p_raw):
    """Raise each node's p-value to the largest p-value among its ancestors.

    ``p_raw`` is indexed by node id. One top-down pass over the tree.
    """
    p_raw = np.asarray(p_raw, dtype=float)
    if p_raw.shape != (tree.n_nodes,):
        raise ValueError(f"expected {tree.n_nodes} p-values, got {p_raw.shape}")
    p_h = p_raw.copy()
    for nid in tree.top_down():
        for child in tree.children(nid):
            p_h[child] = max(p_raw[child], p_h[nid])
    return p_h


@dataclass
class InferenceResult:
    """Per-node inference, aligned with ``node_ids``."""

    node_ids: np.ndarray
    members: list
    psi_mean: np.ndarray
    psi_sd: np.ndarray
    p_raw: np.ndarray
    p_h: np.ndarray
    p_tilde: np.ndarray
    selected: np.ndarray
    frontier: list
    alpha: float
    C: int
    corrected: bool = False

    def selected_nodes(self):
        return [int(n) for n in self.node_ids[self.selected]]

    def leaf_p(self, p, which="p_h"):
        """Per-variable vector of ``which`` from the leaf rows."""
        vals = getattr(self, which)
        out = np.full(p, np.nan)
        for nid, v in zip(self.node_ids, vals):
            if nid < p:
                out[nid] = v
        return out

    def selected_leaves(self, p):
        return sorted(int(n) for n in self.node_ids[self.selected] if n < p)

    def records(self):
        return [
            {
                "id": int(nid),
                "members": [int(m) for m in self.members[i]],
                "psi_mean": float(self.psi_mean[i]),
                "psi_sd": float(self.psi_sd[i]),
                "p_raw": float(self.p_raw[i]),
                "p_h": float(self.p_h[i]),
                "p_tilde": float(self.p_tilde[i]),
                "selected": bool(self.selected[i]),
            }
            for i, nid in enumerate(self.node_ids)
        ]

    def to_dict(self):
        return {
            "nodes": self.records(),
            "frontier": [int(n) for n in self.frontier],
            "alpha": self.alpha,
            "C": self.C,
            "corrected": self.corrected,
        }


def bonferroni_select(tree, p_h, alpha=0.05, node_ids=None, C=None):
    """Multiplicity correction ``min(1, C * p_h)`` with ``C = p``.

    Returns the corrected p-values, the selection mask at ``alpha`` and the
    significance frontier (selected nodes with no selected child).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    p_h = np.asarray(p_h, dtype=float)
    node_ids = np.arange(tree.n_nodes) if node_ids is None else np.asarray(node_ids, dtype=int)
    C = tree.p if C is None else C
    p_tilde = np.minimum(1.0, C * p_h)
    selected = p_tilde <= alpha
    chosen = set(int(n) for n in node_ids[selected])
    frontier = [n for n in sorted(chosen) if not any(c in chosen for c in tree.children(n))]
    return p_tilde, selected, frontier


def infer(tree, table, alpha=0.05, corrected=False):
    """t-test per node, hierarchical adjustment and Bonferroni selection.

    When the table covers only some nodes (e.g. leaves for flat CPI) the
    hierarchical step is skipped and ``p_h == p_raw``.
    """
    psi = table.values(corrected)
    node_ids = np.asarray(table.node_ids, dtype=int)
    p_raw = t_test_one_sided(psi)
    if node_ids.size == tree.n_nodes and np.array_equal(node_ids, np.arange(tree.n_nodes)):
        p_h = hierarchical_adjust(tree, p_raw)
    else:
        p_h = p_raw.copy()
    p_tilde, selected, frontier = bonferroni_select(tree, p_h, alpha, node_ids)
    return InferenceResult(
        node_ids=node_ids,
        members=[tree.members(n) for n in node_ids],
        psi_mean=psi.mean(axis=1),
        psi_sd=psi.std(axis=1, ddof=1),
        p_raw=p_raw,
        p_h=p_h,
        p_tilde=p_tilde,
        selected=selected,
        frontier=frontier,
        alpha=alpha,
        C=tree.p,
        corrected=corrected,
    )
