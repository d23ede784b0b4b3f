"""Greedy k-center seeding, the randomized cluster split, and merge-and-split search.

The search keeps exact avg(p, C) sums for every point and cluster.  When the
most envious point sits far from its cluster it swaps as in the natural
local search; when every violator is close to its cluster (envy below the
threshold T = Phi/(4*k*log2(n))/(5*n*log2(n))), swapping makes too little
progress, so the two involved clusters are merged and a high-potential
cluster is split instead.  Either step cuts the potential by a fixed
fraction, which bounds the total step count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .clustering import Clustering
from .local_search import CAP_EXCEEDED, CONVERGED, DEFAULT_SLACK, LsTrace, _most_envious
from .metric import MetricSpace, rng_from_seed

__all__ = ["SplitResult", "MsStep", "kcenter_init", "split", "merge_split_ls"]


def split_accept_factor(n: int) -> float:
    """Accepted splits must shed at least this fraction of the cluster potential."""
    return 1.0 / (4.0 * math.log2(max(n, 2)))


def default_split_attempts(n: int) -> int:
    return 64 * max(1, math.ceil(math.log2(max(n, 2))))


@dataclass
class SplitResult:
    cluster_id: int
    cluster: np.ndarray
    half_a: np.ndarray  # size ceil(|C*|/2)
    half_b: np.ndarray
    phi_cluster: float
    phi_a: float
    phi_b: float
    attempts: int


@dataclass
class MsStep:
    kind: str  # "swap" or "merge_split"
    point: int
    source: int
    target: int
    phi_before: float
    phi_after: float
    threshold: float
    split_size: int = 0


def kcenter_init(space: MetricSpace, k: int, seed: int = 0) -> Clustering:
    """Gonzalez greedy 2-approximation; deterministic (seed is unused).

    The first center is point 0; each next center is the point farthest from
    the chosen ones (ties to the smallest index); points go to their nearest
    center (ties to the smallest center index).  O(nk) distance queries.
    """
    n = space.n
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    centers = [0]
    rows = [space.row(0)]
    mind = rows[0].copy()
    for _ in range(1, k):
        mind[centers] = -np.inf
        nxt = int(np.argmax(mind))
        centers.append(nxt)
        rows.append(space.row(nxt))
        mind = np.minimum(mind, rows[-1])
    assignment = np.argmin(np.stack(rows), axis=0)
    for j, c in enumerate(centers):
        assignment[c] = j  # duplicates must not leave a center's cluster empty
    return Clustering(assignment, k)


class _MsState:
    """Cluster membership plus exact per-(point, cluster) distance sums."""

    def __init__(self, space: MetricSpace, clustering: Clustering):
        self.D = space.full()
        self.n = clustering.n
        self.members: dict[int, np.ndarray] = {}
        self.sums: dict[int, np.ndarray] = {}
        self.assign = clustering.assignment.copy()
        for cid, m in enumerate(clustering.members()):
            self.members[cid] = m.copy()
            self.sums[cid] = self.D[:, m].sum(axis=1)
        self.next_cid = clustering.k

    @property
    def k(self) -> int:
        return len(self.members)

    def cids(self) -> list[int]:
        return sorted(self.members)

    def phi_of(self, cid: int) -> float:
        m = len(self.members[cid])
        if m <= 1:
            return 0.0
        return math.log2(m) / m * float(self.sums[cid][self.members[cid]].sum())

    def phi(self) -> float:
        return sum(self.phi_of(c) for c in self.members)

    def pair_sum(self, idx: np.ndarray) -> float:
        return float(self.D[np.ix_(idx, idx)].sum())

    def swap(self, p: int, src: int, dst: int) -> None:
        row = self.D[p]
        self.sums[src] = self.sums[src] - row
        self.sums[dst] = self.sums[dst] + row
        self.members[src] = self.members[src][self.members[src] != p]
        self.members[dst] = np.append(self.members[dst], p)
        self.assign[p] = dst

    def merge(self, a: int, b: int) -> int:
        cid = self.next_cid
        self.next_cid += 1
        self.members[cid] = np.concatenate([self.members[a], self.members[b]])
        self.sums[cid] = self.sums[a] + self.sums[b]
        self.assign[self.members[cid]] = cid
        for old in (a, b):
            del self.members[old], self.sums[old]
        return cid

    def replace_with_halves(self, cid: int, half_a: np.ndarray, half_b: np.ndarray) -> tuple[int, int]:
        ca, cb = self.next_cid, self.next_cid + 1
        self.next_cid += 2
        for new_cid, half in ((ca, half_a), (cb, half_b)):
            self.members[new_cid] = half.copy()
            self.sums[new_cid] = self.D[:, half].sum(axis=1)
            self.assign[half] = new_cid
        del self.members[cid], self.sums[cid]
        return ca, cb

    def clustering(self) -> Clustering:
        remap = {cid: i for i, cid in enumerate(self.cids())}
        dense = np.array([remap[c] for c in self.assign], dtype=np.intp)
        return Clustering(dense, self.k)


def _split_core(
    n: int,
    candidates: list[tuple[int, np.ndarray, float]],
    pair_sum: Callable[[np.ndarray], float],
    rng: np.random.Generator,
    max_attempts: Optional[int],
) -> SplitResult:
    """Pick the max-potential splittable cluster and resample random halves
    until the two halves shed a 1/(4*log2(n)) fraction of its potential."""
    splittable = [(cid, m, phi) for cid, m, phi in candidates if len(m) > 1]
    if not splittable:
        raise ValueError("no cluster with more than one point to split")
    cid, members, phi_star = max(splittable, key=lambda t: (t[2], -t[0]))
    target = phi_star * (1.0 - split_accept_factor(n))
    cap = max_attempts if max_attempts is not None else default_split_attempts(n)
    m = len(members)
    half = (m + 1) // 2
    for attempt in range(1, cap + 1):
        perm = rng.permutation(m)
        ha, hb = members[perm[:half]], members[perm[half:]]
        phi_a = math.log2(len(ha)) / len(ha) * pair_sum(ha) if len(ha) > 1 else 0.0
        phi_b = math.log2(len(hb)) / len(hb) * pair_sum(hb) if len(hb) > 1 else 0.0
        if phi_a + phi_b <= target:
            return SplitResult(cid, members, ha, hb, phi_star, phi_a, phi_b, attempt)
    raise RuntimeError(
        f"split did not find an acceptable partition in {cap} attempts "
        "(probability polynomially small; indicates a bug or adversarial input)"
    )


def split(
    space: MetricSpace,
    clustering: Clustering,
    rng: np.random.Generator,
    max_attempts: Optional[int] = None,
) -> SplitResult:
    """Randomized split of the highest-potential cluster (exact potentials)."""
    candidates = []
    for cid, m in enumerate(clustering.members()):
        phi = 0.0
        if len(m) > 1:
            phi = math.log2(len(m)) / len(m) * float(space.block(m, m).sum())
        candidates.append((cid, m, phi))
    return _split_core(space.n, candidates, lambda idx: float(space.block(idx, idx).sum()), rng, max_attempts)


def merge_split_ls(
    space: MetricSpace,
    k: int,
    seed: int = 0,
    max_rounds: int = 10**6,
    on_step: Optional[Callable] = None,
    initial: Optional[Clustering] = None,
) -> tuple[Clustering, LsTrace]:
    """Merge-and-split local search; returns a 4*log2(n)-stable clustering for avg.

    Starts from the greedy k-center clustering unless ``initial`` overrides it.
    """
    n = space.n
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    if initial is not None and (initial.n != n or initial.k != k):
        raise ValueError("initial clustering does not match the space or k")
    rng = rng_from_seed(seed)
    alpha = 4.0 * math.log2(n)
    state = _MsState(space, initial if initial is not None else kcenter_init(space, k, seed))
    trace = LsTrace(status=CONVERGED)
    n_swap = n_ms = 0

    for _ in range(max_rounds):
        cids = state.cids()
        sums_mat = np.stack([state.sums[c] for c in cids], axis=1)
        sizes = np.array([len(state.members[c]) for c in cids], dtype=np.int64)
        col_of = {c: i for i, c in enumerate(cids)}
        assign_cols = np.array([col_of[c] for c in state.assign], dtype=np.intp)
        own_sums = sums_mat[np.arange(n), assign_cols]
        own_sizes = sizes[assign_cols]
        own_excl = np.zeros(n)
        multi = own_sizes > 1
        own_excl[multi] = own_sums[multi] / (own_sizes[multi] - 1)
        p, target_col, ratio = _most_envious(own_excl, sums_mat / sizes, assign_cols, sizes)
        if not ratio > alpha * DEFAULT_SLACK:
            break

        phi_before = state.phi()
        threshold = phi_before / (4.0 * k * math.log2(n)) / (5.0 * n * math.log2(n))
        src_cid, dst_cid = cids[assign_cols[p]], cids[target_col]
        if own_excl[p] >= threshold:
            state.swap(p, src_cid, dst_cid)
            rec = MsStep("swap", p, src_cid, dst_cid, phi_before, state.phi(), threshold)
            n_swap += 1
        else:
            state.merge(src_cid, dst_cid)
            candidates = [(c, state.members[c], state.phi_of(c)) for c in state.cids()]
            result = _split_core(n, candidates, state.pair_sum, rng, None)
            state.replace_with_halves(result.cluster_id, result.half_a, result.half_b)
            rec = MsStep(
                "merge_split", p, src_cid, dst_cid, phi_before, state.phi(), threshold,
                split_size=len(result.cluster),
            )
            n_ms += 1
        trace.steps.append(rec)
        if on_step is not None:
            on_step(state, rec)
    else:
        trace.status = CAP_EXCEEDED

    trace.counts = {"swap": n_swap, "merge_split": n_ms}
    return state.clustering(), trace
