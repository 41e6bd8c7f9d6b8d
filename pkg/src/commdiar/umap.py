"""Uniform manifold approximation and projection (fit only).

A calibrated fuzzy k-neighbour graph is built in the input space and laid out
in ``target_dim`` dimensions by stochastic descent on the fuzzy set cross
entropy, using low-dimensional memberships ``1 / (1 + a * d^(2b))``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.optimize import curve_fit
from scipy.sparse.csgraph import connected_components

from .core import EmbeddingSet, ParameterError, make_rng
from .graph import exact_knn

log = logging.getLogger(__name__)

CALIBRATION_TOL = 1e-5
CALIBRATION_ITERS = 64
MIN_SIGMA_SCALE = 1e-3
CLIP = 4.0
# keeps the repulsive coefficient finite for coincident points
REPULSION_EPS = 1e-3
CE_CLAMP = 1e-12
EXACT_CE_LIMIT = 2000


@dataclass(frozen=True)
class UmapParams:
    n_neighbors: int = 15
    target_dim: int = 8
    min_dist: float = 0.0
    n_epochs: int = 200
    negative_sample_rate: int = 5
    learning_rate: float = 1.0
    seed: int = 0
    metric: str = "euclidean"
    spread: float = 1.0

    def __post_init__(self):
        if self.n_neighbors < 2:
            raise ParameterError("n_neighbors must be >= 2")
        if self.target_dim < 1:
            raise ParameterError("target_dim must be >= 1")
        if not self.min_dist >= 0:
            raise ParameterError("min_dist must be >= 0")
        if self.n_epochs < 1 or self.negative_sample_rate < 0:
            raise ParameterError("n_epochs must be >= 1 and negative_sample_rate >= 0")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be > 0")


class Calibration(NamedTuple):
    rho: np.ndarray
    sigma: np.ndarray
    degenerate: np.ndarray  # rows where the target sum could not be met


@dataclass(frozen=True)
class FuzzyGraph:
    """Symmetrized membership graph plus the per-node calibration.

    ``membership`` is symmetric CSR with weights in (0, 1]; ``directed`` keeps
    the pre-symmetrization weights w(i -> j).
    """

    membership: sp.csr_matrix
    directed: sp.csr_matrix
    rho: np.ndarray
    sigma: np.ndarray
    degenerate: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.membership.shape[0]


# ---------------------------------------------------------------------------
# Fuzzy graph
# ---------------------------------------------------------------------------

@njit(cache=True)
def _calibrate(distances, target, n_iter, tol, min_scale):
    n, k = distances.shape
    rho = np.zeros(n)
    sigma = np.zeros(n)
    degenerate = np.zeros(n, dtype=np.bool_)
    global_mean = distances.mean()
    for i in range(n):
        for j in range(k):
            if distances[i, j] > 0.0:
                rho[i] = distances[i, j]
                break
        floor = min_scale * (distances[i].mean() if rho[i] > 0.0 else global_mean)
        n_unit = 0
        for j in range(k):
            if distances[i, j] <= rho[i]:
                n_unit += 1
        if n_unit >= target:
            # the unit terms alone reach the target; only sigma -> 0 meets it
            sigma[i] = floor
            degenerate[i] = True
            continue
        lo = 0.0
        hi = np.inf
        mid = 1.0
        resid = np.inf
        for _ in range(n_iter):
            psum = 0.0
            for j in range(k):
                d = distances[i, j] - rho[i]
                psum += np.exp(-d / mid) if d > 0.0 else 1.0
            resid = psum - target
            if abs(resid) < tol:
                break
            if psum > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
        if mid < floor:
            mid = floor
        sigma[i] = mid
        if abs(resid) >= tol:
            degenerate[i] = True
    return rho, sigma, degenerate


def smooth_knn_calibrate(distances: np.ndarray, k: int | None = None) -> Calibration:
    """Per-row rho (nearest positive distance) and sigma solving sum_j w_ij = log2(k).

    Rows where no sigma meets the target (e.g. all distances equal) keep the
    floored sigma and are flagged in ``degenerate``.
    """
    d = np.ascontiguousarray(distances, dtype=np.float64)
    if d.ndim != 2:
        raise ParameterError("distances must be N x k")
    k = d.shape[1] if k is None else int(k)
    if k < 2:
        raise ParameterError("calibration needs k >= 2")
    if d.shape[1] != k:
        raise ParameterError(f"distance table has {d.shape[1]} columns, k={k}")
    if (d < 0).any() or (np.diff(d, axis=1) < 0).any():
        raise ParameterError("distance rows must be non-negative and ascending")
    return Calibration(*_calibrate(d, math.log2(k), CALIBRATION_ITERS, CALIBRATION_TOL, MIN_SIGMA_SCALE))


def membership_weights(distances: np.ndarray, rho: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """w(i -> j) = exp(-max(0, d_ij - rho_i) / sigma_i)."""
    d = np.asarray(distances, dtype=np.float64)
    return np.exp(-np.maximum(0.0, d - rho[:, None]) / sigma[:, None])


def fuzzy_union(directed: sp.spmatrix) -> sp.csr_matrix:
    """Probabilistic t-conorm B = W + W^T - W o W^T."""
    w = sp.csr_matrix(directed)
    wt = w.T.tocsr()
    out = (w + wt - w.multiply(wt)).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def fuzzy_graph(embeddings, params: UmapParams = UmapParams()) -> FuzzyGraph:
    x = embeddings.vectors if isinstance(embeddings, EmbeddingSet) else np.asarray(embeddings)
    n = x.shape[0]
    k = params.n_neighbors
    if k >= n:
        raise ParameterError(f"n_neighbors={k} must be < N={n}")
    idx, dist = exact_knn(x, k, params.metric)
    cal = smooth_knn_calibrate(dist, k)
    w = membership_weights(dist, cal.rho, cal.sigma)
    directed = sp.csr_matrix((w.ravel(), (np.repeat(np.arange(n), k), idx.ravel())), shape=(n, n))
    directed.eliminate_zeros()
    return FuzzyGraph(fuzzy_union(directed), directed, cal.rho, cal.sigma, cal.degenerate)


# ---------------------------------------------------------------------------
# Low-dimensional membership and its gradients
# ---------------------------------------------------------------------------

def find_ab_params(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    """Least-squares fit of 1 / (1 + a x^(2b)) to the offset exponential target curve."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    (a, b), _ = curve_fit(curve, xv, yv)
    return float(a), float(b)


def low_dim_membership(dist_sq, a: float, b: float):
    return 1.0 / (1.0 + a * np.power(dist_sq, b))


@njit(cache=True)
def attractive_coeff(dist_sq, a, b):
    """Scalar c with d(-log nu)/dy_i = -c * (y_i - y_j)."""
    if dist_sq <= 0.0:
        return 0.0
    return -2.0 * a * b * dist_sq ** (b - 1.0) / (a * dist_sq ** b + 1.0)


@njit(cache=True)
def repulsive_coeff(dist_sq, a, b, eps):
    """Scalar c with d(-log(1 - nu))/dy_i = -c * (y_i - y_j) when eps = 0."""
    if dist_sq <= 0.0 and eps == 0.0:
        return 0.0
    return 2.0 * b / ((eps + dist_sq) * (a * dist_sq ** b + 1.0))


def edge_loss(yi: np.ndarray, yj: np.ndarray, a: float, b: float, attractive: bool) -> float:
    """-log nu (attractive) or -log(1 - nu) (repulsive) for one pair."""
    nu = low_dim_membership(float(np.sum((yi - yj) ** 2)), a, b)
    return -math.log(nu) if attractive else -math.log1p(-nu)


def edge_gradient(yi: np.ndarray, yj: np.ndarray, a: float, b: float, attractive: bool, eps: float = 0.0) -> np.ndarray:
    """Gradient of :func:`edge_loss` w.r.t. ``yi`` as the SGD step uses it (unclipped)."""
    diff = yi - yj
    d2 = float(diff @ diff)
    c = attractive_coeff(d2, a, b) if attractive else repulsive_coeff(d2, a, b, eps)
    return -c * diff


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

@njit(cache=True)
def _clip(v):
    if v > CLIP:
        return CLIP
    if v < -CLIP:
        return -CLIP
    return v


@njit(cache=True)
def _sgd_epoch(y, head, tail, epochs_per_sample, next_sample, epochs_per_neg, next_neg,
               epoch, alpha, a, b, rng, eps):
    n, dim = y.shape
    for e in range(head.size):
        if next_sample[e] > epoch:
            continue
        i = head[e]
        j = tail[e]
        d2 = 0.0
        for c in range(dim):
            diff = y[i, c] - y[j, c]
            d2 += diff * diff
        coef = attractive_coeff(d2, a, b)
        for c in range(dim):
            g = _clip(coef * (y[i, c] - y[j, c]))
            y[i, c] += g * alpha
            y[j, c] -= g * alpha
        next_sample[e] += epochs_per_sample[e]

        n_neg = int((epoch - next_neg[e]) / epochs_per_neg[e])
        for _ in range(n_neg):
            k = rng.integers(0, n)
            if k == i:
                continue
            d2 = 0.0
            for c in range(dim):
                diff = y[i, c] - y[k, c]
                d2 += diff * diff
            coef = repulsive_coeff(d2, a, b, eps)
            for c in range(dim):
                g = _clip(coef * (y[i, c] - y[k, c])) if coef > 0.0 else CLIP
                y[i, c] += g * alpha
        next_neg[e] += n_neg * epochs_per_neg[e]


def spectral_init(membership: sp.csr_matrix, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Eigenvectors 2..dim+1 of the normalized Laplacian, scaled to [-10, 10] plus tiny noise.

    Falls back to a seeded Gaussian of scale 1e-4 when the eigensolve cannot
    produce ``dim`` informative vectors.
    """
    n = membership.shape[0]
    try:
        if dim + 1 >= n:
            raise np.linalg.LinAlgError("too few points for a spectral layout")
        deg = np.asarray(membership.sum(axis=1)).ravel()
        inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
        lap = sp.identity(n) - sp.diags(inv) @ membership @ sp.diags(inv)
        if n <= 2000:
            _, vecs = np.linalg.eigh(lap.toarray())
        else:
            from scipy.sparse.linalg import eigsh

            k = dim + 1
            _, vecs = eigsh(lap, k, which="SM", ncv=max(2 * k + 1, int(math.sqrt(n))), tol=1e-4,
                            v0=np.ones(n), maxiter=n * 5)
            vecs = vecs[:, np.argsort(_)]
        coords = vecs[:, 1:dim + 1]
        if not np.isfinite(coords).all():
            raise np.linalg.LinAlgError("non-finite eigenvectors")
    except (np.linalg.LinAlgError, ArithmeticError, RuntimeError) as exc:
        log.debug("spectral init failed (%s); using random init", exc)
        return rng.normal(scale=1e-4, size=(n, dim))
    span = np.abs(coords).max()
    coords = coords * (10.0 / span) if span > 0 else coords
    return coords + rng.normal(scale=1e-4, size=coords.shape)


def _epochs_per_sample(weights: np.ndarray, n_epochs: int) -> np.ndarray:
    out = np.full(weights.shape[0], -1.0)
    n_samples = n_epochs * (weights / weights.max())
    out[n_samples > 0] = float(n_epochs) / n_samples[n_samples > 0]
    return out


def optimize_embedding(fuzzy: FuzzyGraph, params: UmapParams = UmapParams(), init: np.ndarray | None = None) -> np.ndarray:
    """N x target_dim layout minimizing the fuzzy set cross entropy by per-edge SGD."""
    rng = make_rng(params.seed)
    graph = fuzzy.membership.tocoo()
    n_comp, _ = connected_components(fuzzy.membership, directed=False)
    if n_comp > 1:
        warnings.warn(f"fuzzy graph has {n_comp} connected components; they are embedded independently",
                      RuntimeWarning, stacklevel=2)
    a, b = find_ab_params(params.min_dist, params.spread)
    y = spectral_init(fuzzy.membership, params.target_dim, rng) if init is None else np.array(init, dtype=np.float64)
    y = np.ascontiguousarray(y)

    keep = graph.data >= graph.data.max() / params.n_epochs
    head = graph.row[keep].astype(np.int64)
    tail = graph.col[keep].astype(np.int64)
    eps = _epochs_per_sample(graph.data[keep], params.n_epochs)
    eps_neg = eps / max(params.negative_sample_rate, 1e-12) if params.negative_sample_rate > 0 else np.full_like(eps, np.inf)
    next_sample = eps.copy()
    next_neg = eps_neg.copy()
    for epoch in range(params.n_epochs):
        alpha = params.learning_rate * (1.0 - epoch / params.n_epochs)
        _sgd_epoch(y, head, tail, eps, next_sample, eps_neg, next_neg, float(epoch), alpha, a, b, rng, REPULSION_EPS)
    return y


def reduce(embeddings: EmbeddingSet, params: UmapParams = UmapParams()) -> EmbeddingSet:
    """Fuzzy graph plus layout; keeps segment ids and times."""
    if params.target_dim >= embeddings.dim:
        raise ParameterError(f"target_dim={params.target_dim} must be < D={embeddings.dim}")
    fuzzy = fuzzy_graph(embeddings, params)
    return embeddings.with_vectors(optimize_embedding(fuzzy, params))


# ---------------------------------------------------------------------------
# Cross entropy
# ---------------------------------------------------------------------------

def fuzzy_cross_entropy_terms(mu, nu):
    """mu log(mu/nu) + (1-mu) log((1-mu)/(1-nu)) elementwise, clamped away from 0 and 1."""
    mu = np.clip(np.asarray(mu, dtype=np.float64), CE_CLAMP, 1.0 - CE_CLAMP)
    nu = np.clip(np.asarray(nu, dtype=np.float64), CE_CLAMP, 1.0 - CE_CLAMP)
    return mu * np.log(mu / nu) + (1.0 - mu) * np.log((1.0 - mu) / (1.0 - nu))


def cross_entropy(fuzzy: FuzzyGraph, coords, params: UmapParams = UmapParams(), exact: bool | None = None,
                  n_samples: int = 200_000) -> float:
    """Cross entropy over unordered pairs i < j.

    Exact over all pairs when N <= 2000 (or ``exact=True``); otherwise edges
    are summed exactly and the non-edge repulsion is estimated from uniform
    random pairs.
    """
    y = np.asarray(coords.vectors if isinstance(coords, EmbeddingSet) else coords, dtype=np.float64)
    n = fuzzy.num_nodes
    if y.shape[0] != n:
        raise ParameterError(f"coords have {y.shape[0]} rows, graph has {n} nodes")
    a, b = find_ab_params(params.min_dist, params.spread)
    if exact is None:
        exact = n <= EXACT_CE_LIMIT
    if exact:
        iu, ju = np.triu_indices(n, k=1)
        mu = np.asarray(fuzzy.membership[iu, ju]).ravel()
        d2 = np.sum((y[iu] - y[ju]) ** 2, axis=1)
        return float(fuzzy_cross_entropy_terms(mu, low_dim_membership(d2, a, b)).sum())

    upper = sp.triu(fuzzy.membership, k=1).tocoo()
    d2 = np.sum((y[upper.row] - y[upper.col]) ** 2, axis=1)
    edge_part = fuzzy_cross_entropy_terms(upper.data, low_dim_membership(d2, a, b)).sum()
    rng = make_rng(params.seed)
    i = rng.integers(0, n, n_samples)
    j = rng.integers(0, n, n_samples)
    ok = i < j
    i, j = i[ok], j[ok]
    mu = np.asarray(fuzzy.membership[i, j]).ravel()
    d2 = np.sum((y[i] - y[j]) ** 2, axis=1)
    nonedge = mu == 0
    total_pairs = n * (n - 1) / 2
    n_nonedge_pairs = total_pairs - upper.nnz
    rep = fuzzy_cross_entropy_terms(0.0, low_dim_membership(d2[nonedge], a, b))
    est = rep.mean() * n_nonedge_pairs if rep.size else 0.0
    return float(edge_part + est)
