"""Double-run hashing of every seeded operation."""

import hashlib
import warnings

import numpy as np
import pytest

from commdiar.baselines import KMeansParams, kmeans_fit, spectral_cluster, wta_pool
from commdiar.bench import BenchConfig, DerStudyConfig, run_cluster_study, run_der_study
from commdiar.community import LeidenParams, leiden, louvain
from commdiar.graph import knn_similarity_graph
from commdiar.pipeline import PipelineConfig, run_pipeline
from commdiar.simdata import (MeetingSimConfig, sample_cluster_trial, sample_frames, sample_speakers,
                              segment_frames, segment_windows, simulate_meeting, simulate_script)
from commdiar.umap import UmapParams, fuzzy_graph, optimize_embedding


def digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(str(p.dtype).encode() + str(p.shape).encode())
            h.update(np.ascontiguousarray(p).tobytes())
        else:
            h.update(repr(p).encode())
    return h.hexdigest()


def blob_points(seed=0):
    emb, _ = sample_cluster_trial(3, 30, seed=seed, dim=32)
    return emb


def op_kmeans():
    r = kmeans_fit(blob_points().vectors, KMeansParams(3, seed=5))
    return digest(r.labels, r.centroids)


def op_spectral():
    return digest(spectral_cluster(blob_points().vectors, "auto", seed=5).assignment)


def op_wta():
    a, b = sample_speakers(2, seed=1)
    f = sample_frames(a, b, 0.25, 40, seed=2)
    r = wta_pool(f, seed=3)
    return digest(r.target, r.dominant_fraction)


def op_umap():
    x = blob_points().vectors
    params = UmapParams(seed=4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return digest(optimize_embedding(fuzzy_graph(x, params), params))


def op_leiden_random():
    g = knn_similarity_graph(blob_points(), 10)
    p = leiden(g, LeidenParams(theta=0.05, seed=8))
    return digest(p.assignment, p.quality)


def op_louvain():
    g = knn_similarity_graph(blob_points(), 10)
    p = louvain(g, LeidenParams(seed=8))
    return digest(p.assignment, p.quality)


def op_simdata():
    sp_ = sample_speakers(3, seed=2)
    emb, labels = sample_cluster_trial(3, 10, seed=6)
    cfg = MeetingSimConfig(num_speakers=3, seed=7)
    script = simulate_script(cfg)
    _, memb = simulate_meeting(cfg, sp_)
    windows = segment_windows(script, cfg.segment_seconds)
    frames = segment_frames(script, windows[:10], sp_, 6, seed=1)
    return digest(np.stack([s.centroid for s in sp_]), emb.vectors, labels, script.to_json(), memb.vectors, frames)


def op_pipeline():
    emb = blob_points(2)
    parts = []
    for method in ("kmeans", "spectral", "leiden", "umap-leiden"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_pipeline(PipelineConfig(method=method, seed=3), emb)
        parts += [res.partition.assignment, res.embeddings.vectors]
    return digest(*parts)


def op_cluster_study():
    cfg = BenchConfig(methods=("kmeans", "spectral", "umap-leiden"), speaker_counts=(2, 3), trials_per_count=2,
                      segments_per_speaker=8)
    return digest(run_cluster_study(cfg).to_json())


def op_der_study():
    return digest(run_der_study(DerStudyConfig(speaker_counts=(2,), meetings_per_count=1,
                                               frames_per_segment=6)).to_json())


OPS = {f.__name__[3:]: f for f in (op_kmeans, op_spectral, op_wta, op_umap, op_leiden_random, op_louvain,
                                   op_simdata, op_pipeline, op_cluster_study, op_der_study)}


@pytest.mark.parametrize("name", sorted(OPS))
def test_double_run_identical(name):
    assert OPS[name]() == OPS[name]()


def test_seed_changes_output():
    a, b = (wta_pool(sample_frames(*sample_speakers(2, seed=1), 0.25, 40, seed=s)).target for s in (0, 1))
    assert a.tobytes() != b.tobytes()
