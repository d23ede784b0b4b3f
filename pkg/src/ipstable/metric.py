"""Metric spaces with a counted distance oracle, plus synthetic instance generators.

Every algorithm in this package accesses distances exclusively through a
:class:`MetricSpace`, whose query counter tallies how many distance
evaluations the algorithm requested.  Batched accessors charge the counter
by the number of evaluations in the batch; repeated requests for the same
pair count every time, because the counter measures oracle traffic, not
distinct pairs.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import shortest_path

__all__ = [
    "MetricSpace",
    "GenSpec",
    "Generated",
    "generate",
    "load_matrix_csv",
    "load_points_csv",
]

# Relative slack used when validating symmetry / triangle inequality.
TRIANGLE_RTOL = 1e-9

_TRIANGLE_EXHAUSTIVE_LIMIT = 64
_TRIANGLE_SAMPLED_TRIPLES = 100_000


class MetricSpace:
    """Immutable point set with a distance oracle and a query counter.

    Backed either by an explicit symmetric distance table or by a coordinate
    array with an L2/L1 norm.  The instance is safe to share across threads;
    the query counter is updated under a lock.
    """

    def __init__(self, *, matrix=None, coords=None, norm="l2", validate=True):
        if (matrix is None) == (coords is None):
            raise ValueError("provide exactly one of matrix= or coords=")
        self._lock = threading.Lock()
        self._queries = 0
        if matrix is not None:
            mat = np.asarray(matrix, dtype=np.float64)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError(f"distance table must be square, got {mat.shape}")
            if validate:
                _validate_table(mat)
            mat = mat.copy()
            mat.flags.writeable = False
            self._matrix = mat
            self._coords = None
            self.n = mat.shape[0]
        else:
            pts = np.asarray(coords, dtype=np.float64)
            if pts.ndim != 2:
                raise ValueError("coords must be a 2-D array (n, dim)")
            if norm not in ("l2", "l1"):
                raise ValueError(f"unknown norm {norm!r}")
            pts = pts.copy()
            pts.flags.writeable = False
            self._matrix = None
            self._coords = pts
            self.norm = norm
            self.n = pts.shape[0]
        if self.n < 1:
            raise ValueError("a metric space needs at least one point")

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_matrix(cls, matrix, validate=True) -> "MetricSpace":
        return cls(matrix=matrix, validate=validate)

    @classmethod
    def from_points(cls, coords, norm="l2") -> "MetricSpace":
        return cls(coords=coords, norm=norm)

    @property
    def coords(self):
        """Coordinate backing, or None for table-backed spaces."""
        return self._coords

    # -- query counting -------------------------------------------------------

    @property
    def query_counter(self) -> int:
        return self._queries

    def charge(self, m: int) -> None:
        """Add ``m`` distance evaluations to the counter.

        Used by samplers that evaluate the same pair with multiplicity: the
        counter reflects every evaluation the algorithm requests, even when
        the backing value is fetched once.
        """
        if m < 0:
            raise ValueError("charge must be non-negative")
        with self._lock:
            self._queries += m

    # -- distance access ------------------------------------------------------

    def distance(self, i: int, j: int) -> float:
        """d(i, j); one query."""
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IndexError(f"point index out of range: ({i}, {j}) with n={self.n}")
        self.charge(1)
        return self._eval_one(i, j)

    def row(self, i: int, idx=None) -> np.ndarray:
        """Distances from point i to idx (default: all points); one query each."""
        if idx is None:
            idx = np.arange(self.n)
        else:
            idx = np.asarray(idx, dtype=np.intp)
        self.charge(len(idx))
        return self._eval_row(i, idx)

    def block(self, rows, cols) -> np.ndarray:
        """|rows| x |cols| distance block; charges |rows|*|cols| queries."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        self.charge(len(rows) * len(cols))
        if self._matrix is not None:
            return self._matrix[np.ix_(rows, cols)]
        return np.stack([self._eval_row(int(i), cols) for i in rows]) if len(rows) else np.zeros((0, len(cols)))

    def full(self) -> np.ndarray:
        """The complete n x n table; charges n^2 queries."""
        idx = np.arange(self.n)
        return self.block(idx, idx)

    def peek_block(self, rows, cols) -> np.ndarray:
        """Distance block without touching the counter.

        For samplers that evaluate pairs with multiplicity: they call
        :meth:`charge` with the number of sampled evaluations and fetch the
        distinct values here, so the counter reflects the sampling algorithm
        rather than the deduplicated physical reads.
        """
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        if self._matrix is not None:
            return self._matrix[np.ix_(rows, cols)]
        if len(rows) == 0:
            return np.zeros((0, len(cols)))
        return np.stack([self._eval_row(int(i), cols) for i in rows])

    def _eval_one(self, i, j):
        if self._matrix is not None:
            return float(self._matrix[i, j])
        diff = self._coords[i] - self._coords[j]
        if self.norm == "l2":
            return float(np.sqrt(np.dot(diff, diff)))
        return float(np.abs(diff).sum())

    def _eval_row(self, i, idx):
        if self._matrix is not None:
            return self._matrix[i, idx].copy()
        diff = self._coords[idx] - self._coords[i]
        if self.norm == "l2":
            return np.sqrt((diff * diff).sum(axis=1))
        return np.abs(diff).sum(axis=1)


def _validate_table(mat: np.ndarray) -> None:
    """Reject tables that are not symmetric non-negative metrics."""
    n = mat.shape[0]
    if np.any(~np.isfinite(mat)):
        raise ValueError("distance table contains non-finite values")
    if np.any(mat < 0):
        raise ValueError("distance table contains negative values")
    if np.any(np.diag(mat) != 0):
        raise ValueError("distance table has non-zero diagonal entries")
    scale = np.maximum(np.abs(mat), np.abs(mat.T))
    if np.any(np.abs(mat - mat.T) > TRIANGLE_RTOL * scale):
        raise ValueError("distance table is not symmetric")
    if n <= _TRIANGLE_EXHAUSTIVE_LIMIT:
        for x in range(n):
            through = mat[:, x : x + 1] + mat[x : x + 1, :]
            if np.any(mat > through * (1.0 + TRIANGLE_RTOL)):
                raise ValueError(f"triangle inequality violated via point {x}")
    else:
        rng = np.random.Generator(np.random.Philox(0))
        triples = rng.integers(0, n, size=(_TRIANGLE_SAMPLED_TRIPLES, 3))
        i, x, j = triples.T
        lhs = mat[i, j]
        rhs = mat[i, x] + mat[x, j]
        if np.any(lhs > rhs * (1.0 + TRIANGLE_RTOL)):
            raise ValueError("triangle inequality violated (sampled check)")


# -- generators ---------------------------------------------------------------

_KINDS = ("euclidean_mixture", "random_shortest_path", "planted_separated")


@dataclass(frozen=True)
class GenSpec:
    """Parameters for a synthetic instance."""

    kind: str
    n: int
    k: int = 1
    dim: int = 2
    separation: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.kind == "euclidean_mixture":
            if self.k < 1 or self.dim < 1:
                raise ValueError("euclidean_mixture needs k >= 1 and dim >= 1")
        if self.kind == "planted_separated":
            if self.separation <= 0:
                raise ValueError("planted_separated needs separation > 0")
            if self.k < 2:
                raise ValueError("planted_separated needs k >= 2")
            if self.n < self.k:
                raise ValueError("planted_separated needs n >= k")


@dataclass
class Generated:
    """Output of :func:`generate`; ``planted`` is set only for planted_separated."""

    space: MetricSpace
    planted: "object | None" = field(default=None)


def rng_from_seed(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; splittable via ``.spawn()``."""
    return np.random.Generator(np.random.Philox(seed))


def generate(spec: GenSpec) -> Generated:
    """Build a synthetic metric space; deterministic for a fixed seed."""
    rng = rng_from_seed(spec.seed)
    if spec.kind == "euclidean_mixture":
        centers = rng.normal(0.0, 4.0, size=(spec.k, spec.dim))
        labels = rng.integers(0, spec.k, size=spec.n)
        coords = centers[labels] + rng.normal(0.0, 1.0, size=(spec.n, spec.dim))
        return Generated(MetricSpace.from_points(coords, norm="l2"))

    if spec.kind == "random_shortest_path":
        n = spec.n
        upper = 1.0 - rng.random((n, n))  # values in (0, 1]
        table = np.triu(upper, 1)
        table = table + table.T
        closed = shortest_path(table, method="FW", directed=False)
        np.fill_diagonal(closed, 0.0)
        return Generated(MetricSpace.from_matrix(closed, validate=False))

    # planted_separated: k groups of intra diameter <= 1 spaced so that the
    # inter-group minimum distance is 1/separation, hence beta <= separation.
    from .clustering import Clustering

    n, k = spec.n, spec.k
    gap = 1.0 / spec.separation
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    xs = []
    assignment = np.empty(n, dtype=np.intp)
    pos = 0
    for j in range(k):
        center = j * (gap + 1.0)
        xs.append(center + rng.uniform(-0.5, 0.5, size=sizes[j]))
        assignment[pos : pos + sizes[j]] = j
        pos += sizes[j]
    coords = np.concatenate(xs).reshape(-1, 1)
    space = MetricSpace.from_points(coords, norm="l2")
    return Generated(space, Clustering(assignment, k))


# -- file formats -------------------------------------------------------------


def load_matrix_csv(path) -> MetricSpace:
    """Header-free n x n CSV distance table; validated on load."""
    mat = np.loadtxt(path, delimiter=",", ndmin=2)
    return MetricSpace.from_matrix(mat)


def load_points_csv(path, norm="l2") -> MetricSpace:
    """Points CSV with a header row x0..x{dim-1}."""
    coords = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return MetricSpace.from_points(coords, norm=norm)


def save_matrix_csv(path, space: MetricSpace) -> None:
    np.savetxt(path, space.full(), delimiter=",", fmt="%.17g")


def save_points_csv(path, coords: np.ndarray) -> None:
    header = ",".join(f"x{i}" for i in range(coords.shape[1]))
    np.savetxt(path, coords, delimiter=",", fmt="%.17g", header=header, comments="")
