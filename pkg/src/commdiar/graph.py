"""Weighted undirected similarity graphs over embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .core import DataError, EmbeddingSet, ParameterError

DEFAULT_K = 30
_ROW_BLOCK = 1024


@dataclass(frozen=True)
class SparseGraph:
    """Symmetric CSR adjacency without self-loops.

    ``indptr``/``indices``/``weights`` store every undirected edge twice, once
    per endpoint.  ``degrees[i]`` is the weighted degree and
    ``total_edge_weight`` is m, the sum over undirected edges.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    degrees: np.ndarray
    total_edge_weight: float

    @classmethod
    def from_scipy(cls, mat: sp.spmatrix, check: bool = True) -> "SparseGraph":
        csr = sp.csr_matrix(mat, dtype=np.float64, copy=True)
        csr.setdiag(0)
        csr.eliminate_zeros()
        csr.sort_indices()
        n = csr.shape[0]
        if csr.shape != (n, n):
            raise DataError(f"adjacency must be square, got {csr.shape}")
        if check:
            if csr.nnz and (not np.isfinite(csr.data).all() or (csr.data < 0).any()):
                raise DataError("edge weights must be finite and non-negative")
            if csr.nnz and abs(csr - csr.T).max() > 0:
                raise DataError("adjacency is not symmetric")
        deg = np.asarray(csr.sum(axis=1)).ravel()
        g = cls(
            n,
            csr.indptr.astype(np.int64),
            csr.indices.astype(np.int64),
            csr.data.astype(np.float64),
            deg,
            float(deg.sum() / 2.0),
        )
        for a in (g.indptr, g.indices, g.weights, g.degrees):
            a.setflags(write=False)
        return g

    @classmethod
    def from_edges(cls, num_nodes: int, edges) -> "SparseGraph":
        """Build from (i, j, w) undirected edges; duplicates are summed."""
        edges = list(edges)
        if not edges:
            return cls.from_scipy(sp.csr_matrix((num_nodes, num_nodes)))
        i, j, w = (np.asarray(x) for x in zip(*edges))
        if (i == j).any():
            raise DataError("self-loops are not allowed")
        mat = sp.coo_matrix((w.astype(float), (i, j)), shape=(num_nodes, num_nodes))
        return cls.from_scipy(mat + mat.T)

    @classmethod
    def from_dense(cls, adj: np.ndarray) -> "SparseGraph":
        return cls.from_scipy(sp.csr_matrix(np.asarray(adj, dtype=float)))

    @property
    def num_edges(self) -> int:
        return self.indices.size // 2

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.weights, self.indices, self.indptr), shape=(self.num_nodes, self.num_nodes))

    def neighbors(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.weights[lo:hi]

    def edge_list(self) -> list[tuple[int, int, float]]:
        """Undirected edges with i < j."""
        coo = sp.triu(self.to_scipy(), k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(int(coo.row[t]), int(coo.col[t]), float(coo.data[t])) for t in order]

    def connected_components(self) -> tuple[int, np.ndarray]:
        return connected_components(self.to_scipy(), directed=False)


def write_edgelist(graph: SparseGraph, path) -> None:
    """Debug dump: one ``i j w`` line per undirected edge, i < j."""
    Path(path).write_text("".join(f"{i} {j} {w:.17g}\n" for i, j, w in graph.edge_list()))


def _as_matrix(embeddings) -> np.ndarray:
    if isinstance(embeddings, EmbeddingSet):
        return np.asarray(embeddings.vectors, dtype=np.float64)
    return np.asarray(embeddings, dtype=np.float64)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    if (norms == 0).any():
        raise DataError(f"all-zero embedding in row {int(np.argmax(norms == 0)) + 1}; cosine undefined")
    return x / norms[:, None]


def exact_knn(embeddings, k: int, metric: str = "euclidean") -> tuple[np.ndarray, np.ndarray]:
    """Brute-force k nearest neighbours, excluding the point itself.

    Returns ``(indices, distances)``, both N x k, distances ascending per row.
    Equal distances are ordered by lower neighbour index.  ``metric`` is
    ``"euclidean"`` or ``"cosine"`` (distance 1 - cos).
    """
    x = _as_matrix(embeddings)
    n = x.shape[0]
    if not 1 <= k < n:
        raise ParameterError(f"need 1 <= k < N, got k={k}, N={n}")
    if metric == "cosine":
        x = _unit_rows(x)
    elif metric != "euclidean":
        raise ParameterError(f"unknown metric {metric!r}")
    sq = np.einsum("ij,ij->i", x, x)

    out_idx = np.empty((n, k), dtype=np.int64)
    out_dist = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, _ROW_BLOCK):
        stop = min(start + _ROW_BLOCK, n)
        gram = x[start:stop] @ x.T
        if metric == "cosine":
            block = np.maximum(1.0 - gram, 0.0)
        else:
            block = np.sqrt(np.maximum(sq[start:stop, None] + sq[None, :] - 2.0 * gram, 0.0))
        rows = np.arange(start, stop)
        block[rows - start, rows] = np.inf
        kth = np.partition(block, k - 1, axis=1)[:, k - 1]
        for r in range(stop - start):
            row = block[r]
            cand = np.flatnonzero(row <= kth[r])
            cand = cand[np.argsort(row[cand], kind="stable")][:k]
            out_idx[start + r] = cand
            out_dist[start + r] = row[cand]
    return out_idx, out_dist


def knn_similarity_graph(
    embeddings,
    k: int = DEFAULT_K,
    metric: str = "cosine",
    sim_threshold: float | None = None,
) -> SparseGraph:
    """Union-symmetrized kNN graph weighted by similarity.

    ``cosine`` weights are max(cos, 0); ``euclidean-gaussian`` weights are
    exp(-d^2 / s^2) with s the median kNN distance.  When directions disagree
    the larger weight is kept.  Edges with weight 0 (or below
    ``sim_threshold``) are dropped.
    """
    x = _as_matrix(embeddings)
    n = x.shape[0]
    if not 1 <= k < n:
        raise ParameterError(f"need 1 <= k < N, got k={k}, N={n}")
    if metric == "cosine":
        idx, dist = exact_knn(x, k, "cosine")
        w = np.maximum(1.0 - dist, 0.0)
    elif metric == "euclidean-gaussian":
        idx, dist = exact_knn(x, k, "euclidean")
        scale = float(np.median(dist))
        if scale <= 0:
            pos = dist[dist > 0]
            scale = float(pos.mean()) if pos.size else 1.0
        w = np.exp(-(dist / scale) ** 2)
    else:
        raise ParameterError(f"unknown graph metric {metric!r}")
    if sim_threshold is not None:
        w = np.where(w >= sim_threshold, w, 0.0)

    rows = np.repeat(np.arange(n), k)
    directed = sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n))
    directed.eliminate_zeros()
    return SparseGraph.from_scipy(directed.maximum(directed.T), check=False)
