"""Exact-stability pipeline: minimize the diameter-to-separation ratio beta.

beta(C) is the cluster's diameter divided by its minimum distance to the
rest of the space (0 for C = X); every clustering is beta-stable for the
average objective.  When some clustering with beta < 1 exists, each of its
clusters appears as a node of the tree built by recursively deleting the
longest MST edge, so a dynamic program over that tree recovers a
k-clustering of minimum beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .clustering import Clustering
from .metric import MetricSpace

__all__ = [
    "beta",
    "beta_clustering",
    "mst",
    "TreeNode",
    "create_tree",
    "dp_min_beta",
    "stable_cluster",
    "brute_force_min_beta",
]

BRUTE_FORCE_LIMIT = 10


def beta(space: MetricSpace, C) -> float:
    """diameter(C) / min distance from C to X \\ C; 0 for C = X, 0/0 -> 0."""
    C = np.asarray(C, dtype=np.intp)
    if len(C) == 0:
        raise ValueError("cluster must be non-empty")
    if len(C) == space.n:
        return 0.0
    inside = np.zeros(space.n, dtype=bool)
    inside[C] = True
    outside = np.nonzero(~inside)[0]
    diam = float(space.block(C, C).max()) if len(C) > 1 else 0.0
    sep = float(space.block(C, outside).min())
    if sep == 0.0:
        return 0.0 if diam == 0.0 else math.inf
    return diam / sep


def beta_clustering(space: MetricSpace, clustering: Clustering) -> float:
    return max(beta(space, m) for m in clustering.members())


def mst(space: MetricSpace) -> list[tuple[int, int, float]]:
    """Minimum spanning tree edges; ties resolved by (weight, min endpoint, max endpoint)."""
    n = space.n
    if n == 1:
        return []
    D = space.full()
    iu, ju = np.triu_indices(n, k=1)
    w = D[iu, ju]
    order = np.lexsort((ju, iu, w))
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for e in order:
        a, b = int(iu[e]), int(ju[e])
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            edges.append((a, b, float(w[e])))
            if len(edges) == n - 1:
                break
    return edges


@dataclass
class TreeNode:
    """Node of the recursive max-edge split tree; ``points`` is the represented set."""

    points: np.ndarray
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def nodes(self) -> list["TreeNode"]:
        out, stack = [], [self]
        while stack:
            u = stack.pop()
            out.append(u)
            if not u.is_leaf:
                stack.extend((u.left, u.right))
        return out


def create_tree(space: MetricSpace, mst_edges) -> TreeNode:
    """Recursively delete the longest remaining MST edge; children are the
    two components.  Ties go to the edge with the smallest (min, max) endpoints."""
    root = TreeNode(np.arange(space.n))
    stack = [(root, list(mst_edges))]
    while stack:
        node, edges = stack.pop()
        if len(node.points) == 1:
            continue
        cut = max(range(len(edges)), key=lambda e: (edges[e][2], -edges[e][0], -edges[e][1]))
        adj = {int(p): [] for p in node.points}
        for idx, (a, b, _) in enumerate(edges):
            if idx != cut:
                adj[a].append(b)
                adj[b].append(a)
        seen = {edges[cut][0]}
        frontier = [edges[cut][0]]
        while frontier:
            x = frontier.pop()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    frontier.append(y)
        side_a = np.array(sorted(seen), dtype=np.intp)
        side_b = np.array(sorted(set(int(p) for p in node.points) - seen), dtype=np.intp)
        node.left = TreeNode(side_a)
        node.right = TreeNode(side_b)
        edges_a = [e for i, e in enumerate(edges) if i != cut and e[0] in seen]
        edges_b = [e for i, e in enumerate(edges) if i != cut and e[0] not in seen]
        stack.append((node.left, edges_a))
        stack.append((node.right, edges_b))
    return root


def dp_min_beta(space: MetricSpace, tree: TreeNode, k: int) -> Clustering:
    """Minimum-beta k-clustering among those induced by the tree.

    DP over (node, parts): a node is either kept whole (one cluster, its own
    beta) or split along its children; candidate scores combine by max.
    Ties break toward the smallest right-child part count.
    """
    if not 1 <= k <= space.n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={space.n}")
    nodes = tree.nodes()
    node_beta = {id(u): beta(space, u.points) for u in nodes}
    # bottom-up order: children before parents
    order = sorted(nodes, key=lambda u: len(u.points))
    table: dict[int, list] = {}  # id(node) -> [None | (beta, i_right)] indexed by parts-1
    for u in order:
        row = [None] * k
        row[0] = (node_beta[id(u)], 0)
        if not u.is_leaf:
            right, left = table[id(u.right)], table[id(u.left)]
            for parts in range(2, k + 1):
                best = None
                for i in range(1, parts):
                    r, l = right[i - 1], left[parts - i - 1]
                    if r is None or l is None:
                        continue
                    score = max(r[0], l[0])
                    if best is None or score < best[0]:
                        best = (score, i)
                row[parts - 1] = best
        table[id(u)] = row
    if table[id(tree)][k - 1] is None:
        raise AssertionError("tree with n leaves must admit every 1 <= k <= n")

    clusters: list[np.ndarray] = []
    stack = [(tree, k)]
    while stack:
        u, parts = stack.pop()
        if parts == 1:
            clusters.append(u.points)
            continue
        _, i = table[id(u)][parts - 1]
        stack.append((u.right, i))
        stack.append((u.left, parts - i))
    assignment = np.empty(space.n, dtype=np.intp)
    for cid, pts in enumerate(clusters):
        assignment[pts] = cid
    return Clustering(assignment, k)


def stable_cluster(space: MetricSpace, k: int) -> Clustering:
    """MST -> split tree -> DP.  If any clustering with beta < 1 exists, the
    output's beta matches the best achievable, hence the output is that
    beta-stable for avg."""
    if not 2 <= k <= space.n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={space.n}")
    return dp_min_beta(space, create_tree(space, mst(space)), k)


@lru_cache(maxsize=32)
def _all_partitions(n: int, k: int) -> np.ndarray:
    """Every assignment of n items into exactly k non-empty blocks
    (restricted-growth strings), as a (#partitions, n) array."""
    out = []
    a = [0] * n

    def rec(i, used):
        if n - i < k - used:
            return
        if i == n:
            if used == k:
                out.append(tuple(a))
            return
        for c in range(min(used, k - 1) + 1):
            a[i] = c
            rec(i + 1, max(used, c + 1))

    rec(1, 1)
    return np.array(out, dtype=np.intp)


def brute_force_min_beta(space: MetricSpace, k: int) -> tuple[Clustering, float]:
    """Test oracle: enumerate every k-partition and keep the beta minimizer.

    beta of a partition is the max over clusters of diameter / separation,
    evaluated per cluster (not global max-diameter over global min-gap).
    """
    n = space.n
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force capped at n={BRUTE_FORCE_LIMIT}, got {n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}")
    if k == 1:
        return Clustering(np.zeros(n, dtype=np.intp), 1), 0.0
    parts = _all_partitions(n, k)
    D = space.full()
    iu, ju = np.triu_indices(n, k=1)
    dpair = D[iu, ju]
    left, right = parts[:, iu], parts[:, ju]
    worst = np.zeros(len(parts))
    for c in range(k):
        in_left, in_right = left == c, right == c
        same = in_left & in_right
        cross = in_left ^ in_right
        diam = np.where(same, dpair, 0.0).max(axis=1)
        sep = np.where(cross, dpair, np.inf).min(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            bc = np.where(sep == 0, np.where(diam == 0, 0.0, np.inf), diam / np.where(sep == 0, 1.0, sep))
        worst = np.maximum(worst, bc)
    best = int(np.argmin(worst))
    return Clustering(parts[best], k), float(worst[best])
