"""Median-stable clustering through the square-root-median potential.

The search certifies progress against the max-TSP potential under sqrt
distances without ever computing it: a swap of a point whose sqrt-median
envy exceeds c*alpha_base shrinks the potential by at least half the
removed term, and a merge-and-split step pays a merge cost bounded by
``median_merge_bound`` while the split recovers at least
sqrt(d_max/2), where d_max is the largest intra-cluster distance.
Squaring the final guarantee turns (c*alpha_base)-stability for
sqrt(median) into (c*alpha_base)^2-stability for median.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .clustering import Clustering
from .local_search import CAP_EXCEEDED, CONVERGED, LsTrace
from .merge_split import MsStep, SplitResult, kcenter_init
from .metric import MetricSpace
from .potential import SQRT_MEDIAN_SCALE

__all__ = ["MedianConfig", "median_split", "median_merge_bound", "median_ip_cluster", "merge_bound_factor"]


@dataclass(frozen=True)
class MedianConfig:
    """c is the framework multiplier; alpha_base the sqrt-median sandwich
    constant (validated by the brute-force sweep before being frozen).
    The output targets (c*alpha_base)-stability for sqrt(median), hence
    (c*alpha_base)^2 for median."""

    c: float = 2.0
    alpha_base: float = 10.25
    max_steps: int = 10**6
    seed: int = 0

    def __post_init__(self):
        if self.c <= 1:
            raise ValueError("c must exceed 1")

    @property
    def sqrt_alpha(self) -> float:
        return self.c * self.alpha_base

    @property
    def median_alpha(self) -> float:
        return self.sqrt_alpha**2


def merge_bound_factor(n: int) -> float:
    """poly(n) factor of the merge bound, from the tour-surgery constants."""
    return (4.0 * n + 4.0) * SQRT_MEDIAN_SCALE


def _median_of_row(vals: np.ndarray) -> float:
    kth = (len(vals) + 1) // 2 - 1
    return float(np.partition(vals, kth)[kth])


def median_merge_bound(space: MetricSpace, C, C_other, p: int) -> float:
    """Computable upper bound on the sqrt-median potential increase of
    merging two disjoint clusters."""
    C = np.asarray(C, dtype=np.intp)
    C_other = np.asarray(C_other, dtype=np.intp)
    if len(C) == 0 or len(C_other) == 0:
        raise ValueError("clusters must be non-empty")
    med_a = _median_of_row(space.row(p, C))
    med_b = _median_of_row(space.row(p, C_other))
    return merge_bound_factor(space.n) * (math.sqrt(med_a) + math.sqrt(med_b))


def _farthest_pair(block: np.ndarray, members: np.ndarray) -> tuple[int, int, float]:
    """Max-distance pair in a sorted member block; ties to smallest indices."""
    flat = int(np.argmax(block))
    i, j = divmod(flat, block.shape[1])
    if i > j:
        i, j = j, i
    return int(members[i]), int(members[j]), float(block[i, j])


def median_split(space: MetricSpace, clustering: Clustering) -> SplitResult:
    """Detach the endpoint of the globally farthest intra-cluster pair with the
    larger median distance to the rest of its cluster.

    The returned halves are (cluster minus one point, singleton); potentials
    are sqrt-diameter surrogates.
    """
    best = None
    for cid, m in enumerate(clustering.members()):
        if len(m) < 2:
            continue
        block = space.block(m, m)
        i, j, d = _farthest_pair(block, m)
        if best is None or d > best[0]:
            best = (d, cid, m, i, j)
    if best is None:
        raise ValueError("no cluster with more than one point to split")
    d, cid, members, i, j = best
    med_i = _median_of_row(space.row(i, members[members != i]))
    med_j = _median_of_row(space.row(j, members[members != j]))
    detach = i if med_i >= med_j else j  # i < j, so ties go to the smaller index
    rest = members[members != detach]
    phi_star = math.sqrt(d)
    rest_block = space.block(rest, rest)
    phi_a = math.sqrt(float(rest_block.max())) if len(rest) > 1 else 0.0
    return SplitResult(cid, members, rest, np.array([detach], dtype=np.intp), phi_star, phi_a, 0.0, 1)


class _MedState:
    """Cached per-cluster median columns, own-exclusion medians, and diameters."""

    def __init__(self, space: MetricSpace, clustering: Clustering):
        self.D = space.full()
        self.n = clustering.n
        self.assign = clustering.assignment.copy()
        self.members: dict[int, np.ndarray] = {}
        self.med: dict[int, np.ndarray] = {}       # median(p, C) over all p, self included
        self.own_excl: dict[int, np.ndarray] = {}  # members only: median(p, C\{p})
        self.diam: dict[int, tuple] = {}           # (d, i, j) farthest pair
        self.next_cid = clustering.k
        for cid, m in enumerate(clustering.members()):
            self.members[cid] = np.sort(m)
            self._rebuild(cid)

    def _rebuild(self, cid: int) -> None:
        m = self.members[cid]
        size = len(m)
        block_all = self.D[:, m]
        kth = (size + 1) // 2 - 1
        self.med[cid] = np.partition(block_all, kth, axis=1)[:, kth]
        own = np.zeros(self.n)
        if size > 1:
            # the self-distance 0 ranks first, shifting the target rank by one
            idx = size // 2
            own[m] = np.partition(block_all[m], idx, axis=1)[:, idx]
            i, j, d = _farthest_pair(self.D[np.ix_(m, m)], m)
            self.diam[cid] = (d, i, j)
        else:
            self.diam[cid] = (0.0, int(m[0]), int(m[0]))
        self.own_excl[cid] = own

    def cids(self) -> list[int]:
        return sorted(self.members)

    def swap(self, p: int, src: int, dst: int) -> None:
        self.members[src] = self.members[src][self.members[src] != p]
        self.members[dst] = np.sort(np.append(self.members[dst], p))
        self.assign[p] = dst
        self._rebuild(src)
        self._rebuild(dst)

    def merge(self, a: int, b: int) -> int:
        cid = self.next_cid
        self.next_cid += 1
        self.members[cid] = np.sort(np.concatenate([self.members[a], self.members[b]]))
        self.assign[self.members[cid]] = cid
        for old in (a, b):
            for d in (self.members, self.med, self.own_excl, self.diam):
                d.pop(old, None)
        self._rebuild(cid)
        return cid

    def split_sharpest(self) -> None:
        """Apply the deterministic one-point split to the widest cluster."""
        best = max(
            (c for c in self.members if len(self.members[c]) > 1),
            key=lambda c: (self.diam[c][0], -c),
        )
        _, i, j = self.diam[best]
        m = self.members[best]
        med_i = _median_of_row(self.D[i, m[m != i]])
        med_j = _median_of_row(self.D[j, m[m != j]])
        detach = i if med_i >= med_j else j
        rest = m[m != detach]
        ca, cb = self.next_cid, self.next_cid + 1
        self.next_cid += 2
        for d in (self.members, self.med, self.own_excl, self.diam):
            d.pop(best, None)
        self.members[ca] = rest
        self.members[cb] = np.array([detach], dtype=np.intp)
        self.assign[rest] = ca
        self.assign[detach] = cb
        self._rebuild(ca)
        self._rebuild(cb)

    def surrogate_phi(self) -> float:
        return sum(math.sqrt(self.diam[c][0]) for c in self.members if len(self.members[c]) > 1)

    def clustering(self) -> Clustering:
        remap = {cid: i for i, cid in enumerate(self.cids())}
        dense = np.array([remap[c] for c in self.assign], dtype=np.intp)
        return Clustering(dense, len(self.members))


def median_ip_cluster(
    space: MetricSpace,
    k: int,
    config: MedianConfig = MedianConfig(),
    initial: Clustering | None = None,
) -> tuple[Clustering, LsTrace]:
    """Merge-and-split local search for the median objective.

    Starts from the greedy k-center clustering unless ``initial`` overrides it.
    """
    n = space.n
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    if initial is not None and (initial.n != n or initial.k != k):
        raise ValueError("initial clustering does not match the space or k")
    state = _MedState(space, initial if initial is not None else kcenter_init(space, k, config.seed))
    tau = config.median_alpha  # violation threshold in (un-rooted) median space
    factor = merge_bound_factor(n)
    trace = LsTrace(status=CONVERGED)
    n_swap = n_ms = 0

    for _ in range(config.max_steps):
        cids = state.cids()
        med_mat = np.stack([state.med[c] for c in cids], axis=1)
        col_of = {c: i for i, c in enumerate(cids)}
        assign_cols = np.array([col_of[c] for c in state.assign], dtype=np.intp)
        own = np.zeros(n)
        for c in cids:
            mm = state.members[c]
            own[mm] = state.own_excl[c][mm]
        masked = med_mat.copy()
        masked[np.arange(n), assign_cols] = np.inf
        best_col = np.argmin(masked, axis=1)
        foreign = masked[np.arange(n), best_col]
        sizes = np.array([len(state.members[c]) for c in cids])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(foreign == 0, np.where(own > 0, np.inf, 0.0), own / np.where(foreign == 0, 1.0, foreign))
        ratio[sizes[assign_cols] == 1] = 0.0
        p = int(np.argmax(ratio))
        if not ratio[p] > tau:
            break
        src, dst = cids[assign_cols[p]], cids[best_col[p]]
        phi_before = state.surrogate_phi()

        d_max = max(state.diam[c][0] for c in cids if len(state.members[c]) > 1)
        gain = math.sqrt(d_max / 2.0) * SQRT_MEDIAN_SCALE
        med_src = _median_of_row(state.D[p, state.members[src]])
        med_dst = _median_of_row(state.D[p, state.members[dst]])
        cost = factor * (math.sqrt(med_src) + math.sqrt(med_dst))
        if cost < gain / 2.0:
            state.merge(src, dst)
            state.split_sharpest()
            rec = MsStep("merge_split", p, src, dst, phi_before, state.surrogate_phi(), gain / 2.0)
            n_ms += 1
        else:
            state.swap(p, src, dst)
            rec = MsStep("swap", p, src, dst, phi_before, state.surrogate_phi(), gain / 2.0)
            n_swap += 1
        trace.steps.append(rec)
    else:
        trace.status = CAP_EXCEEDED

    trace.counts = {"swap": n_swap, "merge_split": n_ms}
    return state.clustering(), trace
