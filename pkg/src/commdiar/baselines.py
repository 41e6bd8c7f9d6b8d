"""Comparison clusterers (k-means, spectral, AHC) and winner-takes-all frame pooling."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist

from .core import DataError, EmbeddingSet, ParameterError, Partition, make_rng, relabel_first_seen

log = logging.getLogger(__name__)

DEFAULT_K_MAX = 15
# chosen by maximizing pairwise F on held-out simulated trials (see bench.tune_ahc_threshold)
DEFAULT_AHC_THRESHOLD = 0.45


def _matrix(embeddings) -> np.ndarray:
    x = embeddings.vectors if isinstance(embeddings, EmbeddingSet) else embeddings
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ParameterError("expected a non-empty N x D matrix")
    return x


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KMeansParams:
    k: int
    max_iters: int = 300
    n_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if self.max_iters < 1 or self.n_restarts < 1:
            raise ParameterError("max_iters and n_restarts must be >= 1")


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    wcss: float
    converged: bool
    # WCSS after each assignment step of the winning restart
    history: tuple = field(default=())


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [int(rng.integers(n))]
    closest = _sq_dists(x, x[centers])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            nxt = int(rng.integers(n))
        centers.append(nxt)
        closest = np.minimum(closest, _sq_dists(x, x[nxt:nxt + 1])[:, 0])
    return x[centers].copy()


def _repair_empty(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray, k: int) -> None:
    """Refill each empty cluster with the point of the largest cluster farthest from its centroid."""
    counts = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(counts == 0):
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        far = members[np.argmax(((x[members] - centroids[big]) ** 2).sum(1))]
        labels[far] = c
        counts[big] -= 1
        counts[c] = 1
        centroids[c] = x[far]
        centroids[big] = x[labels == big].mean(0)


def _lloyd(x: np.ndarray, centroids: np.ndarray, max_iters: int):
    k = centroids.shape[0]
    labels = np.full(x.shape[0], -1)
    history = []
    converged = False
    for _ in range(max_iters):
        d = _sq_dists(x, centroids)
        new = np.argmin(d, axis=1)
        history.append(float(d[np.arange(x.shape[0]), new].sum()))
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
        _repair_empty(x, labels, centroids, k)
        for c in range(k):
            centroids[c] = x[labels == c].mean(0)
    wcss = float(((x - centroids[labels]) ** 2).sum())
    return labels, centroids, wcss, converged, tuple(history)


def kmeans_fit(embeddings, params: KMeansParams) -> KMeansResult:
    x = _matrix(embeddings)
    if params.k > x.shape[0]:
        raise ParameterError(f"k={params.k} exceeds N={x.shape[0]}")
    rng = make_rng(params.seed)
    best = None
    for _ in range(params.n_restarts):
        res = _lloyd(x, _plus_plus(x, params.k, rng), params.max_iters)
        if best is None or res[2] < best[2]:
            best = res
    labels, centroids, wcss, converged, history = best
    return KMeansResult(labels, centroids, wcss, converged, history)


def kmeans(embeddings, params: KMeansParams) -> Partition:
    """Lloyd's algorithm from k-means++ seeds, best of ``n_restarts`` by WCSS."""
    res = kmeans_fit(embeddings, params)
    return Partition.from_labels(relabel_first_seen(res.labels), quality=None, converged=res.converged)


# ---------------------------------------------------------------------------
# Spectral
# ---------------------------------------------------------------------------

def cosine_affinity(embeddings) -> np.ndarray:
    """max(cos, 0) with a zero diagonal."""
    x = _matrix(embeddings)
    norms = np.linalg.norm(x, axis=1)
    if (norms == 0).any():
        raise DataError(f"all-zero embedding in row {int(np.argmax(norms == 0)) + 1}; cosine undefined")
    u = x / norms[:, None]
    a = np.maximum(u @ u.T, 0.0)
    np.fill_diagonal(a, 0.0)
    return a


def normalized_laplacian(affinity: np.ndarray) -> np.ndarray:
    """I - D^-1/2 A D^-1/2; isolated nodes keep a unit diagonal."""
    a = np.asarray(affinity, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError("affinity must be square")
    if not np.any(a > 0):
        raise DataError("affinity matrix is all zero")
    deg = a.sum(1)
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return np.eye(a.shape[0]) - inv[:, None] * a * inv[None, :]


def eigengap_from_affinity(affinity: np.ndarray, k_max: int = DEFAULT_K_MAX) -> int:
    """argmax_j (lambda_{j+1} - lambda_j) over 1 <= j < k_max on ascending Laplacian eigenvalues."""
    lap = normalized_laplacian(affinity)
    n = lap.shape[0]
    if k_max < 1:
        raise ParameterError("k_max must be >= 1")
    k_max = min(k_max, n)
    if k_max < 2:
        return 1
    lam = np.linalg.eigvalsh(lap)[:k_max]
    return int(np.argmax(np.diff(lam))) + 1


def estimate_k_eigengap(embeddings, k_max: int = DEFAULT_K_MAX) -> int:
    """Speaker count from the largest gap in the normalized-Laplacian spectrum of the cosine affinity.

    ``k_max`` is clamped to N.
    """
    return eigengap_from_affinity(cosine_affinity(embeddings), k_max)


def spectral_embedding(affinity: np.ndarray, k: int) -> np.ndarray:
    """Row-normalized eigenvectors of the k smallest Laplacian eigenvalues."""
    lap = normalized_laplacian(affinity)
    _, vecs = np.linalg.eigh(lap)
    u = vecs[:, :k]
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    return np.divide(u, norms, out=np.zeros_like(u), where=norms > 0)


def spectral_cluster(embeddings, k: int | str = "auto", seed: int = 0, k_max: int = DEFAULT_K_MAX,
                     affinity: np.ndarray | None = None) -> Partition:
    """Normalized spectral clustering; ``k="auto"`` takes the eigengap estimate."""
    a = cosine_affinity(embeddings) if affinity is None else np.asarray(affinity, dtype=np.float64)
    n = a.shape[0]
    if k == "auto":
        k = eigengap_from_affinity(a, k_max)
    k = int(k)
    if not 1 <= k <= n:
        raise ParameterError(f"k={k} must be in [1, {n}]")
    u = spectral_embedding(a, k)
    return kmeans(u, KMeansParams(k, n_restarts=10, seed=seed))


# ---------------------------------------------------------------------------
# AHC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AhcParams:
    linkage: str = "average"
    stop_threshold: float = DEFAULT_AHC_THRESHOLD

    def __post_init__(self):
        if self.linkage != "average":
            raise ParameterError(f"unsupported linkage {self.linkage!r}")
        if not np.isfinite(self.stop_threshold):
            raise ParameterError("stop_threshold must be finite")


def ahc(embeddings, params: AhcParams = AhcParams()) -> Partition:
    """Average-linkage agglomeration on cosine similarity.

    Clusters merge while the best average similarity is >= ``stop_threshold``.
    Average linkage never inverts, so cutting the dendrogram at distance
    1 - threshold stops at exactly that point.
    """
    x = _matrix(embeddings)
    n = x.shape[0]
    if n == 1:
        return Partition.from_labels([0])
    if (np.linalg.norm(x, axis=1) == 0).any():
        raise DataError("all-zero embedding; cosine undefined")
    dist = np.clip(pdist(x, metric="cosine"), 0.0, 2.0)
    tree = linkage(dist, method="average")
    labels = fcluster(tree, t=1.0 - params.stop_threshold, criterion="distance") - 1
    return Partition.from_labels(relabel_first_seen(labels))


# ---------------------------------------------------------------------------
# Winner-takes-all pooling
# ---------------------------------------------------------------------------

class PooledFrames(NamedTuple):
    target: np.ndarray
    dominant_fraction: float
    degenerate: bool


def wta_pool(frames: np.ndarray, seed: int = 0) -> PooledFrames:
    """Mean of the larger of two k-means classes over frame features.

    Ties go to the class containing frame 0.  A single frame, or frames that
    are all identical, come back unchanged with fraction 1.0; the single
    frame case is flagged ``degenerate``.
    """
    f = np.asarray(frames, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1:
        raise ParameterError("frames must be a non-empty T x D matrix")
    if f.shape[0] == 1:
        warnings.warn("wta_pool on a single frame", RuntimeWarning, stacklevel=2)
        return PooledFrames(f[0].copy(), 1.0, True)
    if np.all(f == f[0]):
        return PooledFrames(f[0].copy(), 1.0, False)
    labels = kmeans_fit(f, KMeansParams(2, n_restarts=5, seed=seed)).labels
    counts = np.bincount(labels, minlength=2)
    dom = labels[0] if counts[0] == counts[1] else int(np.argmax(counts))
    mask = labels == dom
    return PooledFrames(f[mask].mean(0), float(mask.mean()), False)
