"""Clustering pipelines: optional frame pooling, optional UMAP, then one clusterer."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import umap as umap_mod
from .baselines import AhcParams, KMeansParams, ahc, estimate_k_eigengap, kmeans, spectral_cluster, wta_pool
from .community import LeidenParams, leiden, louvain
from .core import CommDiarError, EmbeddingSet, ParameterError, Partition, derive_seed
from .graph import DEFAULT_K, SparseGraph, knn_similarity_graph

log = logging.getLogger(__name__)

STAGES = ("wta-pool", "umap", "cluster")
METHODS = ("kmeans", "spectral", "ahc", "louvain", "leiden", "umap-leiden")
GRAPH_SOURCES = ("recomputed", "umap-fuzzy")


class ConfigError(ParameterError):
    pass


class StageError(CommDiarError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class GraphParams:
    k: int = DEFAULT_K
    # metric for graphs built on raw embeddings
    metric: str = "cosine"
    # metric for graphs rebuilt on UMAP output; cosine there depends on where the layout's origin falls
    reduced_metric: str = "euclidean-gaussian"
    source: str = "recomputed"
    sim_threshold: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("graph k must be >= 1")
        if self.source not in GRAPH_SOURCES:
            raise ConfigError(f"graph source must be one of {GRAPH_SOURCES}")


@dataclass(frozen=True)
class PipelineConfig:
    stages: tuple[str, ...] = ("cluster",)
    method: str = "leiden"
    k: int | str = "auto"
    k_max: int = 15
    kmeans: KMeansParams = field(default_factory=lambda: KMeansParams(k=1))
    umap: umap_mod.UmapParams = field(default_factory=umap_mod.UmapParams)
    # resolution picked by the cluster-study sweep over {0.5, 1, 2}
    leiden: LeidenParams = field(default_factory=lambda: LeidenParams(resolution=0.5))
    graph: GraphParams = field(default_factory=GraphParams)
    ahc: AhcParams = field(default_factory=AhcParams)
    seed: int = 0

    def __post_init__(self):
        stages = tuple(self.stages)
        if "cluster" not in stages:
            raise ConfigError("the cluster stage is mandatory")
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stage(s) {unknown}")
        if len(set(stages)) != len(stages) or list(stages) != sorted(stages, key=STAGES.index):
            raise ConfigError(f"stages must appear once each in the order {STAGES}, got {stages}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.k != "auto" and (not isinstance(self.k, int) or self.k < 1):
            raise ConfigError("k must be a positive integer or 'auto'")
        object.__setattr__(self, "stages", stages)

    @property
    def effective_stages(self) -> tuple[str, ...]:
        """``umap-leiden`` implies the umap stage."""
        if self.method == "umap-leiden" and "umap" not in self.stages:
            return tuple(s for s in STAGES if s in self.stages or s == "umap")
        return self.stages

    @property
    def clusterer(self) -> str:
        return "leiden" if self.method == "umap-leiden" else self.method

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stages"] = list(self.stages)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PipelineConfig":
        d = dict(d)
        nested = {"kmeans": KMeansParams, "umap": umap_mod.UmapParams, "leiden": LeidenParams,
                  "graph": GraphParams, "ahc": AhcParams}
        base = cls()
        for key, typ in nested.items():
            if key in d:
                sub = dataclasses.asdict(getattr(base, key))
                extra = set(d[key]) - set(sub)
                if extra:
                    raise ConfigError(f"unknown {key} option(s) {sorted(extra)}")
                sub.update(d[key])
                d[key] = typ(**sub)
        extra = set(d) - {f.name for f in dataclasses.fields(cls)}
        if extra:
            raise ConfigError(f"unknown config key(s) {sorted(extra)}")
        if "stages" in d:
            d["stages"] = tuple(d["stages"])
        return cls(**d)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class PipelineResult:
    partition: Partition
    embeddings: EmbeddingSet  # what the clusterer saw
    info: dict


def merge_config(base: dict, overrides: dict) -> dict:
    """Recursive dict update; None values in ``overrides`` are ignored."""
    out = dict(base)
    for key, val in overrides.items():
        if val is None:
            continue
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], val)
        else:
            out[key] = val
    return out


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def pool_segments(frames: np.ndarray, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Winner-takes-all target per segment from an N x T x D frame tensor.

    Returns (N x D targets, N dominant fractions).
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ParameterError("frames must be N x T x D")
    out = np.empty((frames.shape[0], frames.shape[2]))
    frac = np.empty(frames.shape[0])
    for i, f in enumerate(frames):
        pooled = wta_pool(f, derive_seed(seed, i))
        out[i] = pooled.target
        frac[i] = pooled.dominant_fraction
    return out, frac


def mean_segments(frames: np.ndarray) -> np.ndarray:
    """Plain average over all frames of each segment."""
    return np.asarray(frames, dtype=np.float64).mean(axis=1)


def reduce_embeddings(emb: EmbeddingSet, params: umap_mod.UmapParams):
    """UMAP with n_neighbors clamped to N - 1; returns (reduced set, fuzzy graph or None)."""
    if emb.n <= 2:
        return emb, None
    params = dataclasses.replace(params, n_neighbors=min(params.n_neighbors, emb.n - 1))
    fuzzy = umap_mod.fuzzy_graph(emb, params)
    if params.target_dim >= emb.dim:
        raise ParameterError(f"target_dim={params.target_dim} must be < D={emb.dim}")
    return emb.with_vectors(umap_mod.optimize_embedding(fuzzy, params)), fuzzy


def community_graph(emb: EmbeddingSet, graph: GraphParams, reduced: bool, fuzzy=None) -> SparseGraph:
    if fuzzy is not None and graph.source == "umap-fuzzy":
        return SparseGraph.from_scipy(fuzzy.membership, check=False)
    k = min(graph.k, emb.n - 1)
    metric = graph.reduced_metric if reduced else graph.metric
    return knn_similarity_graph(emb, k, metric, graph.sim_threshold)


def _resolve_k(config: PipelineConfig, emb: EmbeddingSet) -> int:
    if config.k != "auto":
        return min(int(config.k), emb.n)
    if emb.n == 1:
        return 1
    return estimate_k_eigengap(emb, config.k_max)


def cluster_embeddings(emb: EmbeddingSet, config: PipelineConfig, fuzzy=None, reduced: bool = False) -> tuple[Partition, dict]:
    method = config.clusterer
    seed = derive_seed(config.seed, 3)
    info: dict = {"method": config.method}
    if emb.n == 1:
        return Partition.from_labels([0]), info
    if method in ("kmeans", "spectral"):
        k = _resolve_k(config, emb)
        info["k_requested"] = config.k
        if method == "kmeans":
            part = kmeans(emb, dataclasses.replace(config.kmeans, k=k, seed=seed))
        else:
            part = spectral_cluster(emb, k, seed=seed, k_max=config.k_max)
    elif method == "ahc":
        part = ahc(emb, config.ahc)
    else:
        g = community_graph(emb, config.graph, reduced, fuzzy)
        info["graph_edges"] = g.num_edges
        if g.num_edges == 0:
            part = Partition.from_labels(np.arange(emb.n))
        else:
            params = dataclasses.replace(config.leiden, seed=seed)
            part = leiden(g, params) if method == "leiden" else louvain(g, params)
            info["modularity"] = part.quality
            info["converged"] = part.converged
    info["num_communities"] = part.num_communities
    return part, info


def run_pipeline(config: PipelineConfig, embeddings: EmbeddingSet | None = None,
                 frames: np.ndarray | None = None) -> PipelineResult:
    """Run the configured stages.

    ``frames`` (N x T x D) feed the wta-pool stage; without that stage they
    are mean-pooled.  ``embeddings`` supplies ids and times, and the vectors
    when no frames are given.
    """
    stages = config.effective_stages
    if frames is None and embeddings is None:
        raise ConfigError("need embeddings or frames")
    if "wta-pool" in stages and frames is None:
        raise ConfigError("the wta-pool stage needs frame features")
    info: dict = {"stages": list(stages), "seed": config.seed}
    emb = embeddings
    if frames is not None:
        try:
            if "wta-pool" in stages:
                vecs, frac = pool_segments(frames, derive_seed(config.seed, 1))
                info["mean_dominant_fraction"] = float(frac.mean())
            else:
                vecs = mean_segments(frames)
        except CommDiarError as exc:
            raise StageError("wta-pool", exc) from exc
        emb = EmbeddingSet(vecs) if embeddings is None else embeddings.with_vectors(vecs)

    fuzzy = None
    reduced = False
    if "umap" in stages:
        try:
            params = dataclasses.replace(config.umap, seed=derive_seed(config.seed, 2))
            emb, fuzzy = reduce_embeddings(emb, params)
            reduced = fuzzy is not None
        except CommDiarError as exc:
            raise StageError("umap", exc) from exc
    try:
        part, cinfo = cluster_embeddings(emb, config, fuzzy, reduced)
    except CommDiarError as exc:
        raise StageError("cluster", exc) from exc
    info.update(cinfo)
    return PipelineResult(part, emb, info)


def partition_turns(partition: Partition, embeddings: EmbeddingSet) -> list[tuple[str, float, float]]:
    """Hypothesis turns (spk<c>, onset, duration), one per segment."""
    if embeddings.times is None:
        raise ParameterError("embeddings carry no segment times")
    return [(f"spk{c}", float(t0), float(d)) for (t0, d), c in zip(embeddings.times, partition.assignment)]
