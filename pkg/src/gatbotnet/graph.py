"""k-nearest-neighbour graphs over reduced flow instances, stored in CSR form."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigError, DataError, DegenerateVectorError, DimensionError
from .validation import check_features

MAGIC = b"KNNG"
VERSION = 1
_HEADER = struct.Struct("<4sHQQBBB")
NORM_FLOOR = 1e-12


class Metric(str, Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"

    @classmethod
    def parse(cls, value) -> "Metric":
        try:
            return cls(value.value if isinstance(value, cls) else str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown metric {value!r}; choose euclidean or cosine") from None


_METRIC_CODES = {Metric.EUCLIDEAN: 0, Metric.COSINE: 1}


@dataclass(frozen=True)
class KnnGraph:
    node_count: int
    offsets: np.ndarray
    neighbors: np.ndarray
    metric: Metric = Metric.EUCLIDEAN
    k: int = 0
    symmetrized: bool = True

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.int64)
        neighbors = np.asarray(self.neighbors, dtype=np.int64)
        if offsets.shape != (self.node_count + 1,):
            raise DimensionError(f"offsets must have {self.node_count + 1} entries, got {offsets.shape}")
        if offsets[0] != 0 or offsets[-1] != neighbors.size or np.any(np.diff(offsets) < 0):
            raise DataError("offsets must start at 0, be non-decreasing and end at len(neighbors)")
        if neighbors.size and (neighbors.min() < 0 or neighbors.max() >= self.node_count):
            raise DataError("neighbor index out of range")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "neighbors", neighbors)
        object.__setattr__(self, "metric", Metric.parse(self.metric))

    @classmethod
    def from_edges(cls, node_count: int, edges, metric=Metric.EUCLIDEAN, k: int = 0,
                   symmetrize: bool = True) -> "KnnGraph":
        """Build from (u, v) pairs; self-edges and duplicates are discarded."""
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if symmetrize:
            edges = np.vstack([edges, edges[:, ::-1]])
        edges = edges[edges[:, 0] != edges[:, 1]]
        edges = np.unique(edges, axis=0)
        counts = np.bincount(edges[:, 0], minlength=node_count)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        return cls(node_count, offsets, edges[:, 1], metric, k, symmetrize)

    def neighbors_of(self, node: int) -> np.ndarray:
        return self.neighbors[self.offsets[node]:self.offsets[node + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def directed_edges(self) -> np.ndarray:
        src = np.repeat(np.arange(self.node_count), self.degrees())
        return np.column_stack([src, self.neighbors])

    def undirected_edges(self) -> set[tuple[int, int]]:
        return {(min(u, v), max(u, v)) for u, v in self.directed_edges().tolist()}

    def to_scipy(self) -> sp.csr_matrix:
        data = np.ones(self.neighbors.size)
        return sp.csr_matrix((data, self.neighbors, self.offsets), shape=(self.node_count,) * 2)

    def permute(self, perm) -> "KnnGraph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        e = self.directed_edges()
        return KnnGraph.from_edges(self.node_count, perm[e], self.metric, self.k, symmetrize=False)

    # file formats -----------------------------------------------------------

    def save(self, path) -> None:
        header = _HEADER.pack(MAGIC, VERSION, self.node_count, self.neighbors.size,
                              _METRIC_CODES[self.metric], self.k, int(self.symmetrized))
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.offsets.astype("<u8").tobytes())
            fh.write(self.neighbors.astype("<u8").tobytes())

    @classmethod
    def load(cls, path) -> "KnnGraph":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise DataError(f"{path} is too short to be a graph file")
        magic, version, n, e, metric, k, sym = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise DataError(f"{path} is not a KNNG graph file")
        if version != VERSION:
            raise DataError(f"{path} has unsupported graph version {version}")
        expected = _HEADER.size + 8 * (n + 1) + 8 * e
        if len(raw) != expected:
            raise DataError(f"{path} has {len(raw)} bytes, expected {expected}")
        pos = _HEADER.size
        offsets = np.frombuffer(raw, dtype="<u8", count=n + 1, offset=pos).astype(np.int64)
        neighbors = np.frombuffer(raw, dtype="<u8", count=e, offset=pos + 8 * (n + 1)).astype(np.int64)
        codes = {v: m for m, v in _METRIC_CODES.items()}
        return cls(int(n), offsets, neighbors, codes[metric], int(k), bool(sym))

    def to_edge_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("u,v\n")
            for u, v in sorted(self.undirected_edges()):
                fh.write(f"{u},{v}\n")


def pairwise_distance(a, b, metric=Metric.EUCLIDEAN) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"vectors differ in shape: {a.shape} vs {b.shape}")
    metric = Metric.parse(metric)
    if metric is Metric.EUCLIDEAN:
        return float(np.sqrt(np.sum((a - b) ** 2)))
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    bad = [i for i, n in enumerate((na, nb)) if n <= NORM_FLOOR]
    if bad:
        raise DegenerateVectorError(bad)
    return float(1.0 - np.dot(a, b) / (na * nb))


def _screen_block(block: np.ndarray, points: np.ndarray, metric: Metric, sq_norms, norms) -> np.ndarray:
    """Cheap BLAS-based distance surrogate used only to shortlist candidates."""
    if metric is Metric.EUCLIDEAN:
        return sq_norms[1][:, None] + sq_norms[0][None, :] - 2.0 * (block @ points.T)
    return 1.0 - (block @ points.T) / (norms[1][:, None] * norms[0][None, :])


def _exact_distances(row: np.ndarray, cand: np.ndarray, metric: Metric, norms, i: int) -> np.ndarray:
    if metric is Metric.EUCLIDEAN:
        return np.sqrt(np.sum((cand - row) ** 2, axis=1))
    return 1.0 - (cand @ row) / (norms[1] * norms[0][i])


def knn_indices(points, k: int, metric=Metric.EUCLIDEAN, block_size: int | None = None) -> np.ndarray:
    """Directed k nearest distinct neighbours of every row, ties to the lower index.

    Distances are screened blockwise with a matrix product, then every
    candidate within a rounding margin of the k-th screened value is re-scored
    with the exact per-pair formula, so the result equals an all-pairs search.
    """
    X = check_features(points, "points")
    metric = Metric.parse(metric)
    n = X.shape[0]
    if k < 1 or n <= k:
        raise ConfigError(f"k must satisfy 1 <= k < N, got k={k} with N={n}")
    norms = np.linalg.norm(X, axis=1)
    if metric is Metric.COSINE:
        bad = np.flatnonzero(norms <= NORM_FLOOR)
        if bad.size:
            raise DegenerateVectorError(bad)
    sq = np.einsum("ij,ij->i", X, X)
    if block_size is None:
        # keep each (block, N) distance slab near 16 MB
        block_size = max(1, min(n, 2_000_000 // n))
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, block_size):
        stop = min(n, start + block_size)
        block = X[start:stop]
        screen = _screen_block(block, X, metric, (sq, sq[start:stop]), (norms, norms[start:stop]))
        rows = np.arange(stop - start)
        screen[rows, rows + start] = np.inf
        kth = np.partition(screen, k - 1, axis=1)[:, k - 1]
        if metric is Metric.EUCLIDEAN:
            slack = 1e-9 * (sq[start:stop] + sq.max()) + 1e-300
        else:
            slack = np.full(stop - start, 1e-9)
        for r in rows:
            i = start + r
            cand = np.flatnonzero(screen[r] <= kth[r] + slack[r])
            d = _exact_distances(X[i], X[cand], metric, (norms, norms[cand]), i)
            order = np.lexsort((cand, d))
            out[i] = cand[order[:k]]
    return out


def build_knn_graph(points, k: int, metric=Metric.EUCLIDEAN, symmetrize: bool = True) -> KnnGraph:
    """Exact kNN graph, symmetrised by union of the directed edges."""
    metric = Metric.parse(metric)
    idx = knn_indices(points, k, metric)
    n = idx.shape[0]
    src = np.repeat(np.arange(n), k)
    edges = np.column_stack([src, idx.ravel()])
    return KnnGraph.from_edges(n, edges, metric=metric, k=k, symmetrize=symmetrize)


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    min_degree: int
    max_degree: int
    mean_degree: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def graph_stats(graph: KnnGraph) -> GraphStats:
    deg = graph.degrees()
    edge_count = len(graph.undirected_edges()) if not graph.symmetrized else graph.neighbors.size // 2
    if graph.node_count == 0:
        return GraphStats(0, 0, 0, 0, 0.0)
    return GraphStats(graph.node_count, int(edge_count), int(deg.min()), int(deg.max()), float(deg.mean()))

