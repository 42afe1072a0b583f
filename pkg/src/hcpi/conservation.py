"""Top-down importance allocation that keeps parent = left + right.

Strongly correlated siblings cancel each other's conditional importance, so
a parent can be important while neither child is. The allocation pass
redistributes each parent's (corrected) importance to its two children,
fold by fold, starting from the untouched root.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .engine import ImportanceTable
from .inference import infer

__all__ = ["ConservationConfig", "allocate", "conserve", "indicator", "infer_with_conservation"]

DEFAULT_EPSILON = float(norm.ppf(0.95))


@dataclass(frozen=True)
class ConservationConfig:
    """
    Parameters
    ----------
    epsilon : float
        Transmission threshold on ``mean / sd`` of a node's fold importances.
    ratio_guard : float
        Below this summed child importance the proportional split is
        replaced by an equal split.
    """

    epsilon: float = DEFAULT_EPSILON
    ratio_guard: float = 1e-12

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.ratio_guard > 0:
            raise ValueError("ratio_guard must be positive")


def indicator(psi_mean, psi_sd, epsilon=DEFAULT_EPSILON):
    """1 if the standardized importance ``psi_mean / psi_sd`` reaches ``epsilon``.

    With zero spread the standardized importance is infinite for a positive
    mean, so the indicator is 1 exactly when ``psi_mean > 0``.
    """
    if psi_sd < 0:
        raise ValueError("psi_sd must be non-negative")
    if psi_sd == 0:
        return int(psi_mean > 0)
    return int(psi_mean / psi_sd >= epsilon)


def allocate(parent, psi_l, psi_r, ind_l, ind_r, ratio_guard=1e-12):
    """Split ``parent`` between two children.

    Works elementwise on fold vectors. Returns ``(left, right)`` with
    ``left + right == parent``.
    """
    parent = np.asarray(parent, dtype=float)
    psi_l = np.asarray(psi_l, dtype=float)
    psi_r = np.asarray(psi_r, dtype=float)
    if ind_l and ind_r:
        half = 0.5 * (parent - psi_l - psi_r)
        return psi_l + half, psi_r + half
    if ind_l:
        return psi_l.copy(), parent - psi_l
    if ind_r:
        return parent - psi_r, psi_r.copy()
    total = psi_l + psi_r
    equal = (total <= ratio_guard) | (psi_l < 0) | (psi_r < 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(equal, 0.5, np.clip(psi_l / np.where(equal, 1.0, total), 0.0, 1.0))
    left = parent * ratio
    return left, parent - left


def conserve(tree, table, cfg=None):
    """Return a copy of ``table`` with ``psi_corrected`` filled in.

    Indicators use the fold mean and fold standard deviation of the raw
    importances; the root keeps its raw values.

    The returned table also carries ``indicators`` (one flag per node) and
    ``unchanged_alternative``: for a sub-threshold child whose sibling is
    supra-threshold it holds the child's raw importances (the reading in
    which such a child "remains unchanged"), and NaN elsewhere. The
    allocation itself always uses ``parent - sibling`` so that
    ``parent == left + right`` holds.
    """
    cfg = cfg if cfg is not None else ConservationConfig()
    node_ids = np.asarray(table.node_ids, dtype=int)
    if node_ids.size != tree.n_nodes or not np.array_equal(node_ids, np.arange(tree.n_nodes)):
        raise ValueError("conservation needs importances for every node of the tree")
    psi = table.psi
    means = psi.mean(axis=1)
    sds = psi.std(axis=1, ddof=1)
    ind = np.array([indicator(m, s, cfg.epsilon) for m, s in zip(means, sds)])
    corrected = np.empty_like(psi)
    alternative = np.full_like(psi, np.nan)
    corrected[tree.root] = psi[tree.root]
    for nid in tree.top_down():
        children = tree.children(nid)
        if not children:
            continue
        left, right = children
        corrected[left], corrected[right] = allocate(
            corrected[nid], psi[left], psi[right], ind[left], ind[right], cfg.ratio_guard
        )
        if ind[left] != ind[right]:
            sub = right if ind[left] else left
            alternative[sub] = psi[sub]
    config = dict(table.config, epsilon=cfg.epsilon, ratio_guard=cfg.ratio_guard)
    out = replace(table, psi_corrected=corrected, config=config)
    out.indicators = ind
    out.unchanged_alternative = alternative
    return out


def infer_with_conservation(tree, table, cfg=None, alpha=0.05):
    """Inference pipeline run on the conserved importances."""
    if table.psi_corrected is None:
        table = conserve(tree, table, cfg)
    return infer(tree, table, alpha=alpha, corrected=True)
