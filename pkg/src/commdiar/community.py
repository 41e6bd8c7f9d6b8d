"""Modularity and its optimization with Louvain and Leiden."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import _kernels as K
from .core import DataError, EmbeddingSet, ParameterError, Partition, make_rng
from .graph import SparseGraph

log = logging.getLogger(__name__)

# improvement threshold on m * dQ; keeps float noise from producing moves
_TOL = 1e-12


@dataclass(frozen=True)
class ModularityParams:
    resolution: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.resolution) and self.resolution > 0):
            raise ParameterError(f"resolution must be finite and > 0, got {self.resolution}")


@dataclass(frozen=True)
class LeidenParams:
    """Shared by :func:`leiden` and :func:`louvain` (louvain ignores ``theta``).

    ``theta`` is the refinement temperature applied to gains measured in edge
    weight units; 0 makes refinement pick the best merge deterministically.
    """

    resolution: float = 1.0
    theta: float = 0.01
    max_iterations: int = 100
    seed: int = 0
    debug: bool = False

    def __post_init__(self):
        ModularityParams(self.resolution)
        if not (self.theta >= 0 and math.isfinite(self.theta)):
            raise ParameterError(f"theta must be >= 0, got {self.theta}")
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be >= 1")


def modularity(graph: SparseGraph, partition, params: ModularityParams | float = ModularityParams()) -> float:
    """Q = sum_c [e_c / m - gamma * (d_c / 2m)^2]."""
    gamma = params.resolution if isinstance(params, ModularityParams) else float(params)
    labels = _labels(partition, graph.num_nodes)
    m = graph.total_edge_weight
    if m <= 0:
        raise DataError("modularity is undefined on a graph without edges")
    rows = np.repeat(np.arange(graph.num_nodes), np.diff(graph.indptr))
    same = labels[rows] == labels[graph.indices]
    k = labels.max() + 1
    intra = np.bincount(labels[rows[same]], weights=graph.weights[same], minlength=k) / 2.0
    tot = np.bincount(labels, weights=graph.degrees, minlength=k)
    return float(np.sum(intra) / m - gamma * np.sum((tot / (2.0 * m)) ** 2))


def _labels(partition, n: int) -> np.ndarray:
    labels = np.asarray(partition.assignment if isinstance(partition, Partition) else partition, dtype=np.int64)
    if labels.shape != (n,):
        raise DataError(f"partition covers {labels.size} nodes, graph has {n}")
    if labels.min() < 0:
        raise DataError("negative community index")
    return labels


def _check_graph(graph: SparseGraph) -> None:
    if graph.num_edges == 0 or graph.total_edge_weight <= 0:
        raise DataError("community detection needs a graph with at least one edge")


def _arrays(graph: SparseGraph):
    return (
        np.ascontiguousarray(graph.indptr, dtype=np.int64),
        np.ascontiguousarray(graph.indices, dtype=np.int64),
        np.ascontiguousarray(graph.weights, dtype=np.float64),
        np.array(graph.degrees, dtype=np.float64),
    )


def louvain(graph: SparseGraph, params: LeidenParams = LeidenParams()) -> Partition:
    """Classic Louvain: full-sweep local moving, then aggregation, repeated."""
    _check_graph(graph)
    rng = make_rng(params.seed)
    gamma, inv_2m = params.resolution, 1.0 / (2.0 * graph.total_edge_weight)
    indptr, indices, weights, deg = _arrays(graph)
    membership = np.arange(graph.num_nodes)
    converged = False
    for _ in range(params.max_iterations):
        n = deg.size
        comm = np.arange(n)
        order = rng.permutation(n)
        moves, _ = K.move_nodes_full(indptr, indices, weights, deg, comm, order, gamma, inv_2m, _TOL)
        comm, k = K.relabel(comm)
        membership = comm[membership]
        if moves == 0 or k == n:
            converged = True
            break
        indptr, indices, weights, deg = K.aggregate(indptr, indices, weights, deg, comm, k)
    return _finish(graph, membership, params, converged)


def leiden(graph: SparseGraph, params: LeidenParams = LeidenParams()) -> Partition:
    """Leiden: fast local moving, refinement, aggregation on the refined partition.

    Passes over the full multilevel scheme repeat, each starting from the
    previous result, until a pass no longer raises modularity.  Every
    returned community induces a connected subgraph.
    """
    _check_graph(graph)
    rng = make_rng(params.seed)
    mparams = ModularityParams(params.resolution)
    labels = np.arange(graph.num_nodes)
    quality = -np.inf
    budget = params.max_iterations
    converged = False
    while budget > 0:
        new, used, finished = _leiden_pass(graph, labels, rng, params, budget)
        budget -= used
        q = modularity(graph, new, mparams)
        if q > quality + _TOL:
            labels, quality = new, q
        else:
            converged = finished
            break
    else:
        converged = False
    return _finish(graph, labels, params, converged)


def _leiden_pass(graph: SparseGraph, initial: np.ndarray, rng, params: LeidenParams, budget: int):
    """One multilevel pass from ``initial``; returns (labels, levels used, converged)."""
    gamma, inv_2m = params.resolution, 1.0 / (2.0 * graph.total_edge_weight)
    indptr, indices, weights, deg = _arrays(graph)
    comm, _ = K.relabel(np.asarray(initial, dtype=np.int64))
    membership = np.arange(graph.num_nodes)  # original node -> aggregate node
    converged = stalled = False
    levels = 0
    while levels < budget:
        levels += 1
        n = deg.size
        order = rng.permutation(n)
        K.move_nodes_fast(indptr, indices, weights, deg, comm, order, gamma, inv_2m, _TOL)
        comm, k = K.relabel(comm)
        if k == n:
            converged = True
            break
        uniforms = rng.random(n)
        refined = K.refine(indptr, indices, weights, deg, comm, order, uniforms, gamma, inv_2m, params.theta, _TOL)
        refined, k_ref = K.relabel(refined)
        if k_ref == n:
            # refinement merged nothing, so aggregation cannot make progress
            converged = stalled = True
            break
        parent = np.empty(k_ref, dtype=np.int64)
        parent[refined] = comm
        indptr, indices, weights, deg = K.aggregate(indptr, indices, weights, deg, refined, k_ref)
        membership = refined[membership]
        comm = parent
    labels = comm[membership]
    if stalled or not converged:
        # communities of several aggregate nodes carry no connectivity guarantee
        labels = _split_disconnected(graph, labels)
    elif params.debug:
        _assert_connected(graph, labels)
    return labels, levels, converged


def _split_disconnected(graph: SparseGraph, labels: np.ndarray) -> np.ndarray:
    """Give each connected piece of a community its own label.

    Splitting a community with no internal path between its pieces always
    raises modularity, so this never lowers quality.
    """
    adj = graph.to_scipy().tocoo()
    keep = labels[adj.row] == labels[adj.col]
    intra = sp.csr_matrix((adj.data[keep], (adj.row[keep], adj.col[keep])), shape=adj.shape)
    _, comp = connected_components(intra, directed=False)
    if np.unique(comp).size == np.unique(labels).size:
        return labels
    return comp


def _assert_connected(graph: SparseGraph, labels: np.ndarray) -> None:
    bad = disconnected_communities(graph, labels)
    if bad:
        raise AssertionError(f"communities {bad} are not connected")


def disconnected_communities(graph: SparseGraph, partition) -> list[int]:
    """Community indices whose induced subgraph is not connected (BFS per community)."""
    labels = _labels(partition, graph.num_nodes)
    bad = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size == 1:
            continue
        inside = np.zeros(graph.num_nodes, dtype=bool)
        inside[members] = True
        seen = {int(members[0])}
        stack = [int(members[0])]
        while stack:
            v = stack.pop()
            for u in graph.indices[graph.indptr[v]:graph.indptr[v + 1]]:
                u = int(u)
                if inside[u] and u not in seen:
                    seen.add(u)
                    stack.append(u)
        if len(seen) != members.size:
            bad.append(int(c))
    return bad


def _finish(graph: SparseGraph, labels: np.ndarray, params: LeidenParams, converged: bool) -> Partition:
    labels, k = K.relabel(np.asarray(labels, dtype=np.int64))
    if not converged:
        log.warning("optimizer hit max_iterations=%d; returning best partition so far", params.max_iterations)
    q = modularity(graph, labels, ModularityParams(params.resolution))
    return Partition(labels, k, q, converged)


def community_means(embeddings: EmbeddingSet | np.ndarray, partition: Partition) -> np.ndarray:
    """K x D matrix whose row c is the mean embedding of community c."""
    x = np.asarray(embeddings.vectors if isinstance(embeddings, EmbeddingSet) else embeddings, dtype=np.float64)
    labels = _labels(partition, x.shape[0])
    k = partition.num_communities if isinstance(partition, Partition) else labels.max() + 1
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    return sums / np.bincount(labels, minlength=k)[:, None]


def delta_modularity_full(graph: SparseGraph, labels: np.ndarray, v: int, target: int, gamma: float = 1.0) -> float:
    """Debug cross-check: Q after moving ``v`` to ``target`` minus Q before, by recomputation."""
    moved = np.array(labels, copy=True)
    moved[v] = target
    return modularity(graph, moved, gamma) - modularity(graph, labels, gamma)


def delta_modularity(graph: SparseGraph, labels: np.ndarray, v: int, target: int, gamma: float = 1.0) -> float:
    """Incremental dQ of moving ``v`` to ``target`` from cached community degrees."""
    labels = np.asarray(labels)
    m = graph.total_edge_weight
    nbrs, w = graph.neighbors(v)
    kv = graph.degrees[v]
    own = labels[v]
    tot = np.bincount(labels, weights=graph.degrees, minlength=max(labels.max(), target) + 1)
    tot[own] -= kv
    w_own = w[(labels[nbrs] == own) & (nbrs != v)].sum()
    w_tgt = w[(labels[nbrs] == target) & (nbrs != v)].sum()
    if target == own:
        return 0.0
    gain = lambda wc, dc: wc / m - gamma * kv * dc / (2.0 * m * m)
    return gain(w_tgt, tot[target]) - gain(w_own, tot[own])
