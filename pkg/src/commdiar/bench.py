"""Desk-scale comparative studies: clustering accuracy by speaker count, runtime, and pipeline DER."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import statistics
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import AhcParams, KMeansParams, ahc, kmeans, spectral_cluster
from .community import leiden, louvain
from .core import EmbeddingSet, ParameterError, derive_seed
from .evaluate import cluster_report, der, pooled_der
from .graph import DEFAULT_K, knn_similarity_graph
from .pipeline import PipelineConfig, cluster_embeddings, partition_turns, reduce_embeddings, run_pipeline
from .simdata import DEFAULT_SHARED, DEFAULT_SPREAD, MeetingSimConfig, sample_cluster_trial, sample_speakers, segment_frames, segment_windows, simulate_script

log = logging.getLogger(__name__)

CLUSTER_METHODS = ("kmeans", "spectral", "ahc", "louvain", "leiden", "umap-leiden")
COMMUNITY_METHODS = ("louvain", "leiden", "umap-leiden")
MIN_GRAPH_POINTS = 1000


@dataclass(frozen=True)
class BenchConfig:
    methods: tuple[str, ...] = ("kmeans", "spectral", "ahc", "umap-leiden")
    speaker_counts: tuple[int, ...] = (1, 2, 4, 6, 8, 10)
    trials_per_count: int = 100
    segments_per_speaker: int = 20
    within_spread: float = DEFAULT_SPREAD
    # community methods run once per value; the best value over all counts is reported
    resolutions: tuple[float, ...] = (0.5, 1.0, 2.0)
    graph_points: int = 20000
    runtime_methods: tuple[str, ...] = ("kmeans", "louvain", "leiden")
    repetitions: int = 3
    timeout_seconds: float = 3600.0
    workers: int = 1
    seed: int = 0
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if self.trials_per_count < 1:
            raise ParameterError("trials_per_count must be >= 1")
        if self.segments_per_speaker < 2:
            # pairwise F needs two segments even in a one-speaker trial
            raise ParameterError("segments_per_speaker must be >= 2")
        if not self.methods:
            raise ParameterError("methods must be non-empty")
        bad = [m for m in tuple(self.methods) + tuple(self.runtime_methods) if m not in CLUSTER_METHODS]
        if bad:
            raise ParameterError(f"unknown method(s) {bad}")
        if not self.resolutions:
            raise ParameterError("resolutions must be non-empty")
        for name in ("methods", "speaker_counts", "resolutions", "runtime_methods"):
            object.__setattr__(self, name, tuple(getattr(self, name)))


def variant_name(method: str, resolution: float | None) -> str:
    return method if resolution is None else f"{method}@{resolution:g}"


def _variants(config: BenchConfig) -> list[tuple[str, str, float | None]]:
    out = []
    for m in config.methods:
        if m in COMMUNITY_METHODS:
            out.extend((variant_name(m, g), m, g) for g in config.resolutions)
        else:
            out.append((m, m, None))
    return out


# ---------------------------------------------------------------------------
# Clustering study
# ---------------------------------------------------------------------------

def _cluster_trial(config: BenchConfig, count: int, trial: int) -> tuple[np.ndarray, dict]:
    """Labels (or an error string) for every method variant on one simulated trial."""
    seed = derive_seed(config.seed, count, trial)
    emb, truth = sample_cluster_trial(count, config.segments_per_speaker, seed=seed, within_spread=config.within_spread)
    base = config.pipeline.replace(seed=seed, stages=("cluster",))
    out: dict[str, object] = {}
    reduced = None
    for name, method, gamma in _variants(config):
        try:
            cfg = base.replace(method=method)
            if gamma is not None:
                cfg = cfg.replace(leiden=dataclasses.replace(cfg.leiden, resolution=gamma))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                if method == "umap-leiden":
                    if reduced is None:
                        umap_params = dataclasses.replace(cfg.umap, seed=derive_seed(seed, 2))
                        reduced = reduce_embeddings(emb, umap_params)
                    part, _ = cluster_embeddings(reduced[0], cfg, reduced[1], reduced[1] is not None)
                else:
                    part, _ = cluster_embeddings(emb, cfg)
            out[name] = np.asarray(part.assignment)
        except Exception as exc:  # a failed trial is recorded, the study goes on
            out[name] = f"{type(exc).__name__}: {exc}"
    return truth, out


def _trial_job(args):
    return _cluster_trial(*args)


@dataclass
class StudyTable:
    rows: list[dict]
    meta: dict

    def to_json(self) -> str:
        return json.dumps({"meta": self.meta, "rows": self.rows}, indent=2)

    def cell(self, method: str, count: int) -> dict:
        for r in self.rows:
            if r["method"] == method and r["num_speakers"] == count:
                return r
        raise KeyError((method, count))


def run_cluster_study(config: BenchConfig = BenchConfig()) -> StudyTable:
    """Count accuracy and pairwise F per (method, speaker count) over simulated trials.

    Community methods are scored at every resolution in ``config.resolutions``;
    the resolution with the best mean count accuracy across all counts is
    recorded in ``meta["best_resolution"]`` and its rows are repeated under
    the plain method name.
    """
    jobs = [(config, c, t) for c in config.speaker_counts for t in range(config.trials_per_count)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_trial_job, jobs, chunksize=4))
    else:
        results = [_trial_job(j) for j in jobs]

    rows = []
    for name, method, gamma in _variants(config):
        for count in config.speaker_counts:
            preds, truths, failures = [], [], []
            for (cfg, c, t), (truth, out) in zip(jobs, results):
                if c != count:
                    continue
                if isinstance(out[name], str):
                    failures.append({"trial": t, "error": out[name]})
                    # a failure counts as a wrong count and a zero F
                    preds.append(None)
                else:
                    preds.append(out[name])
                truths.append(truth)
            ok = [(p, t) for p, t in zip(preds, truths) if p is not None]
            row = {"method": name, "base_method": method, "resolution": gamma, "num_speakers": count,
                   "trials": len(truths), "failed": len(failures), "failures": failures[:5]}
            if ok:
                rep = cluster_report([p for p, _ in ok], [t for _, t in ok])
                scale = len(ok) / len(truths)
                row.update(count_accuracy=rep.count_accuracy * scale, f_score=rep.f_score * scale,
                           precision=rep.precision * scale, recall=rep.recall * scale)
            else:
                row.update(count_accuracy=None, f_score=None, precision=None, recall=None)
            rows.append(row)

    best: dict = {}
    for method in config.methods:
        if method not in COMMUNITY_METHODS:
            continue
        score = {g: np.mean([r["count_accuracy"] or 0.0 for r in rows
                             if r["base_method"] == method and r["resolution"] == g])
                 for g in config.resolutions}
        best[method] = max(config.resolutions, key=lambda g: (score[g], -abs(np.log(g))))
        for r in [r for r in rows if r["base_method"] == method and r["resolution"] == best[method]]:
            rows.append({**r, "method": method})
    meta = {"trials_per_count": config.trials_per_count, "segments_per_speaker": config.segments_per_speaker,
            "speaker_counts": list(config.speaker_counts), "seed": config.seed,
            "resolutions": list(config.resolutions), "best_resolution": best}
    return StudyTable(rows, meta)


def format_cluster_table(table: StudyTable, methods: list[str] | None = None) -> str:
    """Aligned text table: one block per speaker count, one line per method."""
    methods = methods or [m for m in dict.fromkeys(r["method"] for r in table.rows) if "@" not in m]
    lines = [f"{'#Spks':>5}  {'Method':<16}{'#Spk acc':>10}{'F-score':>10}"]
    for count in table.meta["speaker_counts"]:
        lines.append("-" * 41)
        for m in methods:
            r = table.cell(m, count)
            acc = "failed" if r["count_accuracy"] is None else f"{r['count_accuracy']:.2f}"
            f = "failed" if r["f_score"] is None else f"{r['f_score']:.2f}"
            lines.append(f"{count:>5}  {m:<16}{acc:>10}{f:>10}")
    best = table.meta.get("best_resolution")
    if best:
        lines.append("resolution: " + ", ".join(f"{m}={g:g}" for m, g in best.items()))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# AHC stopping threshold
# ---------------------------------------------------------------------------

def tune_ahc_threshold(thresholds=None, speaker_counts=(1, 2, 4, 6, 8, 10), trials: int = 10,
                       segments_per_speaker: int = 20, seed: int = 12345) -> tuple[float, dict]:
    """Threshold maximizing mean pairwise F on development trials drawn from their own seed.

    Ties resolve to the middle of the best-scoring run of thresholds.
    """
    if thresholds is None:
        thresholds = np.round(np.arange(-0.1, 0.81, 0.05), 2)
    scores = {}
    data = [sample_cluster_trial(c, segments_per_speaker, seed=derive_seed(seed, c, t))
            for c in speaker_counts for t in range(trials)]
    for th in thresholds:
        preds = [ahc(emb, AhcParams(stop_threshold=float(th))).assignment for emb, _ in data]
        scores[float(th)] = cluster_report(preds, [lab for _, lab in data]).f_score
    top = max(scores.values())
    # middle of the best plateau, away from both failure modes
    plateau = sorted(th for th, f in scores.items() if f >= top - 1e-12)
    return plateau[len(plateau) // 2], scores


# ---------------------------------------------------------------------------
# Runtime study
# ---------------------------------------------------------------------------

def _hash_labels(labels) -> str:
    return hashlib.sha256(np.ascontiguousarray(labels, dtype=np.int64).tobytes()).hexdigest()[:16]


def runtime_dataset(config: BenchConfig) -> tuple[EmbeddingSet, np.ndarray]:
    if config.graph_points < MIN_GRAPH_POINTS:
        raise ParameterError(f"graph_points must be >= {MIN_GRAPH_POINTS}")
    per = -(-config.graph_points // 10)
    emb, labels = sample_cluster_trial(10, per, seed=derive_seed(config.seed, 99))
    return emb.subset(np.arange(config.graph_points)), labels[:config.graph_points]


def _warm_up() -> None:
    """Trigger JIT compilation so it is not billed to the first timed run."""
    emb, _ = sample_cluster_trial(2, 20, seed=0)
    g = knn_similarity_graph(emb, 10)
    leiden(g)
    louvain(g)


def run_runtime_study(config: BenchConfig = BenchConfig()) -> StudyTable:
    """Median wall time over ``repetitions`` per method on one ``graph_points`` set.

    Graph construction is timed once and reported separately; community
    methods get both the exclusive (algorithm only) and inclusive time.  A
    run over ``timeout_seconds`` is recorded as a timeout and the method's
    remaining repetitions are skipped.
    """
    emb, _ = runtime_dataset(config)
    _warm_up()
    graph_seconds = None
    graph = None
    if any(m in ("louvain", "leiden") for m in config.runtime_methods):
        t0 = time.perf_counter()
        graph = knn_similarity_graph(emb, DEFAULT_K, config.pipeline.graph.metric)
        graph_seconds = time.perf_counter() - t0

    rows = []
    for method in config.runtime_methods:
        times, hashes, ks, status = [], [], [], "ok"
        for rep in range(config.repetitions):
            params = dataclasses.replace(config.pipeline.leiden, seed=derive_seed(config.seed, rep))
            t0 = time.perf_counter()
            if method == "leiden":
                part = leiden(graph, params)
            elif method == "louvain":
                part = louvain(graph, params)
            elif method == "kmeans":
                part = kmeans(emb, KMeansParams(10, seed=derive_seed(config.seed, rep)))
            elif method == "spectral":
                part = spectral_cluster(emb, "auto", seed=derive_seed(config.seed, rep))
            elif method == "ahc":
                part = ahc(emb, config.pipeline.ahc)
            else:
                params = dataclasses.replace(config.pipeline, method="umap-leiden", seed=derive_seed(config.seed, rep))
                part = run_pipeline(params, emb).partition
            elapsed = time.perf_counter() - t0
            times.append(elapsed)
            hashes.append(_hash_labels(part.assignment))
            ks.append(part.num_communities)
            if elapsed > config.timeout_seconds:
                status = "timeout"
                break
        row = {"method": method, "wall_seconds": statistics.median(times), "runs": times,
               "status": status, "num_communities": ks, "partition_hash": hashes}
        if method in ("louvain", "leiden"):
            row["exclusive_seconds"] = row["wall_seconds"]
            row["inclusive_seconds"] = row["wall_seconds"] + graph_seconds
        rows.append(row)
    meta = {"graph_points": config.graph_points, "graph_seconds": graph_seconds,
            "graph_edges": None if graph is None else graph.num_edges,
            "repetitions": config.repetitions, "seed": config.seed}
    return StudyTable(rows, meta)


def format_runtime_table(table: StudyTable) -> str:
    lines = [f"{'Method':<12}{'median s':>10}{'incl. graph':>13}  status"]
    for r in table.rows:
        incl = r.get("inclusive_seconds")
        lines.append(f"{r['method']:<12}{r['wall_seconds']:>10.3f}{'' if incl is None else f'{incl:.3f}':>13}  {r['status']}")
    if table.meta.get("graph_seconds") is not None:
        lines.append(f"graph build: {table.meta['graph_seconds']:.3f} s, {table.meta['graph_edges']} edges")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Pipeline DER study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DerStudyConfig:
    speaker_counts: tuple[int, ...] = (2, 4, 6, 8)
    meetings_per_count: int = 10
    overlap_range: tuple[float, float] = (0.05, 0.30)
    frames_per_segment: int = 40
    duration_seconds: float = 1800.0
    seed: int = 0
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if self.meetings_per_count < 1 or self.frames_per_segment < 1:
            raise ParameterError("meetings_per_count and frames_per_segment must be >= 1")
        object.__setattr__(self, "speaker_counts", tuple(self.speaker_counts))


DER_SYSTEMS = {
    # name: (stages, method)
    "kmeans": (("cluster",), "kmeans"),
    "wta+kmeans": (("wta-pool", "cluster"), "kmeans"),
    "umap-leiden": (("cluster",), "umap-leiden"),
    "wta+umap-leiden": (("wta-pool", "cluster"), "umap-leiden"),
}


def overlap_sweep(config: DerStudyConfig) -> np.ndarray:
    lo, hi = config.overlap_range
    return np.linspace(lo, hi, config.meetings_per_count) if config.meetings_per_count > 1 else np.array([(lo + hi) / 2])


def run_der_study(config: DerStudyConfig = DerStudyConfig()) -> StudyTable:
    """Pooled DER per (system, speaker count) on simulated meetings.

    Every system sees the same frame-level features; systems without the
    wta-pool stage average all frames of a segment.
    """
    results: dict[tuple[str, int], list] = {}
    for count in config.speaker_counts:
        for i, overlap in enumerate(overlap_sweep(config)):
            seed = derive_seed(config.seed, count, i)
            sim = MeetingSimConfig(num_speakers=count, duration_seconds=config.duration_seconds,
                                   overlap_ratio=float(overlap), seed=seed)
            speakers = sample_speakers(count, shared=DEFAULT_SHARED, seed=derive_seed(seed, 1))
            script = simulate_script(sim)
            windows = segment_windows(script, sim.segment_seconds)
            frames = segment_frames(script, windows, speakers, config.frames_per_segment, seed=derive_seed(seed, 2))
            holder = EmbeddingSet(np.zeros((len(windows), 1)), times=windows)
            for name, (stages, method) in DER_SYSTEMS.items():
                cfg = config.pipeline.replace(stages=stages, method=method, seed=seed)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    out = run_pipeline(cfg, holder, frames)
                res = der(script, partition_turns(out.partition, out.embeddings))
                results.setdefault((name, count), []).append((res, out.partition.num_communities))
    rows = []
    for (name, count), items in results.items():
        rep = pooled_der(r for r, _ in items)
        rows.append({"method": name, "num_speakers": count, "der": rep.der, "miss": rep.miss,
                     "false_alarm": rep.false_alarm, "confusion": rep.confusion, "meetings": rep.trials,
                     "mean_num_speakers_found": float(np.mean([k for _, k in items]))})
    meta = {"speaker_counts": list(config.speaker_counts), "meetings_per_count": config.meetings_per_count,
            "overlaps": overlap_sweep(config).tolist(), "frames_per_segment": config.frames_per_segment,
            "seed": config.seed}
    return StudyTable(rows, meta)


def format_der_table(table: StudyTable) -> str:
    counts = table.meta["speaker_counts"]
    lines = [f"{'System':<18}" + "".join(f"{str(c) + 'spk':>9}" for c in counts)]
    for name in DER_SYSTEMS:
        cells = "".join(f"{100 * table.cell(name, c)['der']:>9.1f}" for c in counts)
        lines.append(f"{name:<18}{cells}")
    lines.append("DER in %, pooled over meetings")
    return "\n".join(lines)
