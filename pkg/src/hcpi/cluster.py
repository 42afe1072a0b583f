"""Ward agglomerative clustering of variables and dendrogram navigation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import standardize

__all__ = ["DendrogramTree", "Node", "TreeCut", "cut_at_count", "traversal", "ward_cluster"]


@dataclass(frozen=True)
class Node:
    id: int
    left: int | None
    right: int | None
    height: float
    members: tuple

    @property
    def is_leaf(self):
        return self.left is None


class DendrogramTree:
    """Binary merge tree over ``p`` variables with ``2p - 1`` nodes.

    Leaves have ids ``0 .. p-1`` (``members == (j,)``); internal nodes have
    ids ``p .. 2p-2`` in merge order, so the root is ``2p - 2``.

    Parameters
    ----------
    p : int
    merges : array-like of shape (p - 1, 2)
        Child ids of internal nodes ``p, p+1, ...``.
    heights : array-like of shape (p - 1,)
    """

    def __init__(self, p, merges, heights):
        self.p = int(p)
        merges = np.asarray(merges, dtype=int).reshape(-1, 2)
        heights = np.asarray(heights, dtype=float).ravel()
        if self.p < 2:
            raise ValueError("a tree needs at least 2 leaves")
        if merges.shape[0] != self.p - 1 or heights.shape[0] != self.p - 1:
            raise ValueError(f"expected {self.p - 1} merges")
        self.merges = merges
        self.heights = heights
        n_nodes = 2 * self.p - 1
        members = [(j,) for j in range(self.p)]
        parent = np.full(n_nodes, -1, dtype=int)
        for i, (a, b) in enumerate(merges):
            nid = self.p + i
            if not (0 <= a < nid and 0 <= b < nid) or a == b:
                raise ValueError(f"merge {i} references invalid children {a}, {b}")
            if parent[a] >= 0 or parent[b] >= 0:
                raise ValueError(f"merge {i} reuses an already merged node")
            parent[a] = parent[b] = nid
            members.append(tuple(sorted(members[a] + members[b])))
        self._members = members
        self.parent = parent
        self.nodes = []
        for nid in range(n_nodes):
            if nid < self.p:
                self.nodes.append(Node(nid, None, None, 0.0, members[nid]))
            else:
                a, b = merges[nid - self.p]
                self.nodes.append(
                    Node(nid, int(a), int(b), float(heights[nid - self.p]), members[nid])
                )

    @property
    def n_nodes(self):
        return 2 * self.p - 1

    @property
    def root(self):
        return 2 * self.p - 2

    def members(self, node_id):
        return self._members[self._check(node_id)]

    def children(self, node_id):
        node = self.nodes[self._check(node_id)]
        return () if node.is_leaf else (node.left, node.right)

    def ancestors(self, node_id):
        """Ancestors of ``node_id`` from its parent up to the root."""
        out = []
        a = self.parent[self._check(node_id)]
        while a >= 0:
            out.append(int(a))
            a = self.parent[a]
        return out

    def top_down(self):
        """Node ids ordered so that every parent precedes its children."""
        return list(range(self.n_nodes - 1, -1, -1))

    def leaf_order(self):
        """Left-to-right leaf order for drawing the dendrogram."""
        order, stack = [], [self.root]
        while stack:
            nid = stack.pop()
            node = self.nodes[nid]
            if node.is_leaf:
                order.append(nid)
            else:
                stack.extend([node.right, node.left])
        return order

    def _check(self, node_id):
        nid = int(node_id)
        if not 0 <= nid < self.n_nodes:
            raise ValueError(f"unknown node id {node_id} (tree has {self.n_nodes} nodes)")
        return nid

    def to_dict(self):
        return {
            "p": self.p,
            "nodes": [
                {
                    "id": nd.id,
                    "left": nd.left,
                    "right": nd.right,
                    "height": nd.height,
                    "members": list(nd.members),
                }
                for nd in self.nodes
            ],
        }

    @classmethod
    def from_dict(cls, d):
        p = int(d["p"])
        nodes = sorted(d["nodes"], key=lambda nd: nd["id"])
        if len(nodes) != 2 * p - 1:
            raise ValueError(f"tree with p={p} must list {2 * p - 1} nodes")
        internal = nodes[p:]
        merges = [(nd["left"], nd["right"]) for nd in internal]
        heights = [nd["height"] for nd in internal]
        return cls(p, merges, heights)

    def to_linkage(self):
        """scipy-style linkage matrix (heights converted to Euclidean units)."""
        Z = np.empty((self.p - 1, 4))
        Z[:, :2] = self.merges
        Z[:, 2] = np.sqrt(np.maximum(self.heights, 0.0))
        Z[:, 3] = [len(self._members[self.p + i]) for i in range(self.p - 1)]
        return Z

    def __repr__(self):
        return f"DendrogramTree(p={self.p})"


@dataclass(frozen=True)
class TreeCut:
    node_ids: tuple

    def member_sets(self, tree):
        return [tree.members(nid) for nid in self.node_ids]


def _nearest(D, i, active, prefer):
    """Nearest active neighbour of slot ``i``; ties go to ``prefer`` then lowest id."""
    row = np.where(active, D[i], np.inf)
    row[i] = np.inf
    best = row.min()
    if prefer is not None and row[prefer] == best:
        return prefer
    return int(np.flatnonzero(row == best)[0])


def ward_cluster(X):
    """Cluster the columns of ``X`` with Ward's minimum-variance linkage.

    Columns are standardized, then agglomerated with the nearest-neighbour
    chain algorithm on squared Euclidean distances updated by the
    Lance-Williams recurrence. A merge height is the Lance-Williams distance
    between the two merged clusters; for two singletons it equals the squared
    Euclidean distance ``2 (n - 1) (1 - r)`` between standardized columns.
    Constant columns are placed at the origin.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("need a 2-D matrix with at least 2 columns")
    p = X.shape[1]
    Z, _, _, _ = standardize(X)
    sq = np.sum(Z**2, axis=0)
    D = np.maximum(sq[:, None] + sq[None, :] - 2.0 * Z.T @ Z, 0.0)
    np.fill_diagonal(D, 0.0)

    # slot i holds the cluster currently stored in row i; its node id
    # is node_of[i], which is also the tie-breaking key
    node_of = np.arange(p)
    size = np.ones(p)
    active = np.ones(p, dtype=bool)
    raw_merges = []  # (slot_a, slot_b, node_a, node_b, height) in creation order
    chain = []
    n_active = p
    next_label = p
    while n_active > 1:
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        while True:
            a = chain[-1]
            prev = chain[-2] if len(chain) > 1 else None
            b = _nearest(D, a, active, prev)
            if b == prev:
                break
            chain.append(b)
        chain.pop()
        chain.pop()
        a, b = (a, b) if node_of[a] < node_of[b] else (b, a)
        h = D[a, b]
        raw_merges.append((node_of[a], node_of[b], h))
        # Lance-Williams update for Ward on squared distances; merged cluster lives in slot a
        sa, sb = size[a], size[b]
        sk = size
        Dak, Dbk = D[a], D[b]
        new = ((sa + sk) * Dak + (sb + sk) * Dbk - sk * h) / (sa + sb + sk)
        new[~active] = np.inf
        D[a, :] = new
        D[:, a] = new
        D[a, a] = 0.0
        active[b] = False
        D[b, :] = np.inf
        D[:, b] = np.inf
        size[a] = sa + sb
        node_of[a] = next_label
        next_label += 1
        n_active -= 1

    return _sorted_tree(p, raw_merges)


def _sorted_tree(p, raw_merges):
    """Relabel chain-order merges into height order (stable)."""
    heights = np.array([m[2] for m in raw_merges], dtype=float)
    # a parent is never lower than its children; absorb rounding drift
    for i, (a, b, _) in enumerate(raw_merges):
        for c in (a, b):
            if c >= p:
                heights[i] = max(heights[i], heights[c - p])
    order = np.argsort(heights, kind="stable")
    new_id = {}
    for rank, i in enumerate(order):
        new_id[p + i] = p + rank
    merges = []
    for i in order:
        a, b, _ = raw_merges[i]
        a, b = new_id.get(a, a), new_id.get(b, b)
        merges.append((min(a, b), max(a, b)))
    return DendrogramTree(p, merges, heights[order])


def traversal(tree, node_id):
    """Sorted variable indices below ``node_id``."""
    return np.asarray(tree.members(node_id), dtype=int)


def cut_at_count(tree, k):
    """The ``k`` clusters left after undoing the last ``k - 1`` merges."""
    k = int(k)
    if not 1 <= k <= tree.p:
        raise ValueError(f"k must lie in [1, {tree.p}], got {k}")
    # internal nodes created by the last k-1 merges are undone
    undone = set(range(tree.n_nodes - (k - 1), tree.n_nodes))
    cut = []
    for nid in range(tree.n_nodes):
        if nid in undone:
            continue
        parent = tree.parent[nid]
        if parent < 0 or parent in undone:
            cut.append(nid)
    return TreeCut(tuple(sorted(cut)))
