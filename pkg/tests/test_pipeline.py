import numpy as np
import pytest

from commdiar.core import EmbeddingSet, derive_seed
from commdiar.pipeline import (ConfigError, GraphParams, PipelineConfig, StageError, merge_config, partition_turns,
                               pool_segments, run_pipeline)
from commdiar.simdata import sample_cluster_trial
from commdiar.umap import UmapParams


def blob_set(seed=0, n_per=30, dim=32):
    emb, labels = sample_cluster_trial(2, n_per, seed=seed, dim=dim)
    return emb, labels


def test_kmeans_two_speakers():
    emb, labels = blob_set()
    res = run_pipeline(PipelineConfig(method="kmeans", k=2), emb)
    assert res.partition.num_communities == 2
    assert len({s for s, _, _ in partition_turns(res.partition, res.embeddings)}) == 2


def test_umap_leiden_two_speakers():
    emb, labels = blob_set(1)
    res = run_pipeline(PipelineConfig(stages=("umap", "cluster"), method="leiden"), emb)
    assert res.partition.num_communities == 2
    assert res.embeddings.dim == 8
    assert res.info["num_communities"] == 2 and "modularity" in res.info


@pytest.mark.parametrize("method", ["kmeans", "spectral", "ahc", "louvain", "leiden", "umap-leiden"])
def test_every_method_runs(method):
    emb, labels = blob_set(2)
    part = run_pipeline(PipelineConfig(method=method), emb).partition
    assert len(set(zip(part.assignment, labels))) == part.num_communities == 2


def test_stage_order_validated():
    with pytest.raises(ConfigError):
        PipelineConfig(stages=("cluster", "umap"))
    with pytest.raises(ConfigError):
        PipelineConfig(stages=("umap",))
    with pytest.raises(ConfigError):
        PipelineConfig(stages=("cluster", "cluster"))
    with pytest.raises(ConfigError):
        PipelineConfig(method="dbscan")
    with pytest.raises(ConfigError):
        GraphParams(source="other")


def test_umap_leiden_implies_umap():
    assert PipelineConfig(method="umap-leiden").effective_stages == ("umap", "cluster")
    assert PipelineConfig(stages=("wta-pool", "cluster"), method="umap-leiden").effective_stages == \
        ("wta-pool", "umap", "cluster")


def test_wta_needs_frames():
    emb, _ = blob_set()
    with pytest.raises(ConfigError):
        run_pipeline(PipelineConfig(stages=("wta-pool", "cluster")), emb)


def test_stage_error_names_stage():
    emb, _ = blob_set(dim=6)
    cfg = PipelineConfig(stages=("umap", "cluster"), umap=UmapParams(target_dim=6))
    with pytest.raises(StageError) as info:
        run_pipeline(cfg, emb)
    assert info.value.stage == "umap"


def test_frames_pooled_or_averaged():
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(4, 6, 3))
    emb = EmbeddingSet(np.zeros((4, 1)), times=[(i, 1.0) for i in range(4)])
    res = run_pipeline(PipelineConfig(method="kmeans", k=2), emb, frames)
    np.testing.assert_allclose(res.embeddings.vectors, frames.mean(1))
    res = run_pipeline(PipelineConfig(stages=("wta-pool", "cluster"), method="kmeans", k=2, seed=3), emb, frames)
    pooled, _ = pool_segments(frames, derive_seed(3, 1))
    np.testing.assert_allclose(res.embeddings.vectors, pooled)
    assert 0.5 <= res.info["mean_dominant_fraction"] <= 1.0


def test_single_segment():
    emb = EmbeddingSet(np.ones((1, 4)), times=[(0, 1)])
    assert run_pipeline(PipelineConfig(method="umap-leiden"), emb).partition.num_communities == 1


def test_edgeless_graph_gives_singletons():
    emb = EmbeddingSet(np.eye(3))
    assert run_pipeline(PipelineConfig(method="leiden"), emb).partition.num_communities == 3


def test_fuzzy_graph_source():
    emb, labels = blob_set(4)
    cfg = PipelineConfig(method="umap-leiden", graph=GraphParams(source="umap-fuzzy"))
    assert run_pipeline(cfg, emb).partition.num_communities == 2


def test_config_dict_round_trip():
    cfg = PipelineConfig(stages=("umap", "cluster"), method="louvain", k=3, seed=9)
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"umap": {"bogus": 1}})


def test_merge_config_ignores_none():
    assert merge_config({"a": 1, "b": {"c": 2, "d": 3}}, {"a": None, "b": {"c": 5, "d": None}}) == \
        {"a": 1, "b": {"c": 5, "d": 3}}


def test_pipeline_deterministic():
    emb, _ = blob_set(5)
    cfg = PipelineConfig(method="umap-leiden", seed=4)
    a, b = run_pipeline(cfg, emb), run_pipeline(cfg, emb)
    assert a.embeddings.vectors.tobytes() == b.embeddings.vectors.tobytes()
    assert np.array_equal(a.partition.assignment, b.partition.assignment)
