"""Command-line entry point: simulate, reduce, cluster, diarize, eval, bench."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchConfig, DerStudyConfig, format_cluster_table, format_der_table, format_runtime_table
from .bench import run_cluster_study, run_der_study, run_runtime_study
from .core import CommDiarError, MeetingScript, derive_seed, load_embeddings, read_rttm, save_embeddings, save_partition_rttm
from .evaluate import FRAME_STEP, EvalReport, der
from .pipeline import METHODS, ConfigError, PipelineConfig, StageError, merge_config, reduce_embeddings, run_pipeline
from .simdata import (DEFAULT_DIM, DEFAULT_FRAME_SPREAD, DEFAULT_MIN_SEPARATION, DEFAULT_SHARED, DEFAULT_SPREAD,
                      MeetingSimConfig, sample_speakers, segment_frames, simulate_meeting)

log = logging.getLogger("commdiar")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _plain(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    return obj


def default_config(seed: int = 0) -> dict:
    """Every tunable default, grouped by module."""
    bench = _plain(BenchConfig(seed=seed))
    bench.pop("pipeline")
    der_study = _plain(DerStudyConfig(seed=seed))
    der_study.pop("pipeline")
    return {
        "version": __version__,
        "seed": seed,
        "pipeline": PipelineConfig(seed=seed).to_dict(),
        "simdata": {**_plain(MeetingSimConfig(seed=seed)), "dim": DEFAULT_DIM, "within_spread": DEFAULT_SPREAD,
                    "shared": DEFAULT_SHARED, "min_separation": DEFAULT_MIN_SEPARATION,
                    "frame_spread": DEFAULT_FRAME_SPREAD},
        "eval": {"frame_step_seconds": FRAME_STEP, "collar_seconds": 0.0, "mapping": "one-to-one"},
        "bench": bench,
        "der_study": der_study,
    }


def _load_config(args) -> dict:
    base = PipelineConfig().to_dict()
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        base = merge_config(base, data.get("pipeline", data))
    return base


def _pipeline_config(args, **stage_overrides) -> PipelineConfig:
    d = _load_config(args)
    flags = {
        "seed": args.seed,
        "method": getattr(args, "method", None),
        "k": _parse_k(getattr(args, "k", None)),
        "leiden": {"resolution": getattr(args, "resolution", None), "theta": getattr(args, "theta", None)},
        "graph": {"k": getattr(args, "graph_k", None), "source": getattr(args, "graph_source", None),
                  "sim_threshold": getattr(args, "sim_threshold", None)},
        "ahc": {"stop_threshold": getattr(args, "ahc_threshold", None)},
        "umap": {"n_neighbors": getattr(args, "n_neighbors", None), "target_dim": getattr(args, "target_dim", None),
                 "min_dist": getattr(args, "min_dist", None), "n_epochs": getattr(args, "epochs", None)},
    }
    flags.update(stage_overrides)
    d = merge_config(d, flags)
    return PipelineConfig.from_dict(d)


def _parse_k(k):
    if k is None or k == "auto":
        return k
    try:
        return int(k)
    except ValueError:
        raise UsageError(f"--k must be an integer or 'auto', got {k!r}") from None


def _load(path, fmt):
    """Embedding file; format from the flag, else ``.csv`` means csv and anything else raw-f32."""
    return load_embeddings(path, fmt or ("csv" if str(path).endswith(".csv") else "raw-f32"))


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> None:
    cfg = MeetingSimConfig(num_speakers=args.speakers, duration_seconds=args.duration,
                           overlap_ratio=args.overlap, segment_seconds=args.segment, seed=args.seed)
    speakers = sample_speakers(args.speakers, dim=args.dim, shared=DEFAULT_SHARED, seed=derive_seed(cfg.seed, 1))
    script, emb = simulate_meeting(cfg, speakers)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    save_embeddings(emb, f"{prefix}.emb", "raw-f32")
    save_embeddings(emb, f"{prefix}.csv", "csv")
    Path(f"{prefix}.script.json").write_text(script.to_json())
    Path(f"{prefix}.rttm").write_text("\n".join(script.rttm_lines(prefix.name)) + "\n")
    if args.frames:
        frames = segment_frames(script, emb.times, speakers, args.frames, seed=cfg.seed)
        np.save(f"{prefix}.frames.npy", frames.astype(np.float32))
    print(f"{emb.n} segments, overlap ratio {script.overlap_ratio():.3f}")


def cmd_reduce(args) -> None:
    cfg = _pipeline_config(args)
    emb = _load(args.input, args.format)
    out, _ = reduce_embeddings(emb, dataclasses.replace(cfg.umap, seed=derive_seed(cfg.seed, 2)))
    save_embeddings(out, args.out, args.out_format or ("csv" if args.out.endswith(".csv") else "raw-f32"))
    print(f"reduced {emb.n} x {emb.dim} -> {out.n} x {out.dim}")


def _report(cfg: PipelineConfig, result) -> dict:
    return {"version": __version__, "config": cfg.to_dict(), "seed": cfg.seed,
            "num_communities": result.partition.num_communities, "modularity": result.partition.quality,
            "info": result.info}


def cmd_cluster(args) -> None:
    cfg = _pipeline_config(args)
    emb = _load(args.input, args.format)
    result = run_pipeline(cfg, emb)
    if args.out:
        save_partition_rttm(result.partition, result.embeddings, args.out)
    if args.labels:
        Path(args.labels).write_text("".join(f"{sid},{c}\n" for sid, c in zip(emb.segment_ids, result.partition.assignment)))
    if args.report:
        _write_json(args.report, _report(cfg, result))
    print(f"{result.partition.num_communities} communities")


def cmd_diarize(args) -> None:
    stages = tuple(s for s in args.stages.split(",") if s) if args.stages else None
    cfg = _pipeline_config(args, **({"stages": stages} if stages else {}))
    emb = _load(args.embeddings, args.format)
    frames = np.load(args.frames) if args.frames else None
    result = run_pipeline(cfg, emb, frames)
    save_partition_rttm(result.partition, result.embeddings, args.out)
    if args.report:
        _write_json(args.report, _report(cfg, result))
    print(f"{result.partition.num_communities} speakers")


def cmd_eval(args) -> None:
    ref_path = Path(args.ref)
    if ref_path.suffix == ".json":
        reference = MeetingScript.from_json(ref_path.read_text())
    else:
        reference = read_rttm(ref_path)
    res = der(reference, read_rttm(args.hyp))
    report = EvalReport(der=res.der, miss=res.miss, false_alarm=res.false_alarm, confusion=res.confusion, trials=1)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
    print(f"DER {100 * res.der:.2f}% (miss {100 * res.miss:.2f}, FA {100 * res.false_alarm:.2f}, "
          f"confusion {100 * res.confusion:.2f})")


def cmd_bench(args) -> None:
    pipeline = _pipeline_config(args)
    if args.study == "der-study":
        kw = {"seed": args.seed, "pipeline": pipeline}
        if args.counts:
            kw["speaker_counts"] = tuple(args.counts)
        if args.trials:
            kw["meetings_per_count"] = args.trials
        table = run_der_study(DerStudyConfig(**kw))
        text = format_der_table(table)
    else:
        kw = {"seed": args.seed, "pipeline": pipeline, "workers": args.workers}
        if args.methods:
            kw["methods" if args.study == "cluster-study" else "runtime_methods"] = tuple(args.methods)
        if args.counts:
            kw["speaker_counts"] = tuple(args.counts)
        if args.trials:
            kw["trials_per_count"] = args.trials
        if args.points:
            kw["graph_points"] = args.points
        if args.resolutions:
            kw["resolutions"] = tuple(args.resolutions)
        cfg = BenchConfig(**kw)
        if args.study == "cluster-study":
            table = run_cluster_study(cfg)
            text = format_cluster_table(table)
        else:
            table = run_runtime_study(cfg)
            text = format_runtime_table(table)
    if args.out:
        Path(args.out).write_text(table.to_json() + "\n")
    if args.table:
        Path(args.table).write_text(text + "\n")
    print(text)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _pipeline_flags(p: argparse.ArgumentParser, method: bool = True) -> None:
    if method:
        p.add_argument("--method", choices=METHODS)
        p.add_argument("--k", help="cluster count for kmeans/spectral, or 'auto'")
        p.add_argument("--resolution", type=float)
        p.add_argument("--theta", type=float)
        p.add_argument("--graph-k", type=int)
        p.add_argument("--graph-source", choices=["recomputed", "umap-fuzzy"])
        p.add_argument("--sim-threshold", type=float)
        p.add_argument("--ahc-threshold", type=float)
    p.add_argument("--n-neighbors", type=int)
    p.add_argument("--target-dim", type=int)
    p.add_argument("--min-dist", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--config", help="pipeline config JSON; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="commdiar", description=__doc__)
    parser.add_argument("--version", action="version", version=f"commdiar {__version__}")
    parser.add_argument("--dump-config", action="store_true", help="print every default as JSON and exit")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="simulate a meeting")
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--duration", type=float, default=1800.0)
    p.add_argument("--overlap", type=float, default=0.15)
    p.add_argument("--segment", type=float, default=4.0)
    p.add_argument("--dim", type=int, default=DEFAULT_DIM)
    p.add_argument("--frames", type=int, default=0, help="also write N x T x D frame features with T frames")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_simulate)

    fmt = ["csv", "raw-f32"]
    p = sub.add_parser("reduce", help="UMAP reduction of an embedding file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=fmt, help="default: from the file extension")
    p.add_argument("--out", required=True)
    p.add_argument("--out-format", choices=fmt, help="default: from the file extension")
    _pipeline_flags(p, method=False)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("cluster", help="cluster an embedding file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=fmt, help="default: from the file extension")
    p.add_argument("--out", help="hypothesis RTTM")
    p.add_argument("--labels", help="segment_id,community CSV")
    p.add_argument("--report", help="JSON report")
    _pipeline_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("diarize", help="run the configured pipeline and write RTTM")
    p.add_argument("--embeddings", required=True, help="segment embeddings with times (csv)")
    p.add_argument("--format", choices=fmt, help="default: from the file extension")
    p.add_argument("--frames", help="N x T x D .npy frame features for wta-pool")
    p.add_argument("--stages", help="comma-separated subset of wta-pool,umap,cluster")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    _pipeline_flags(p)
    p.set_defaults(func=cmd_diarize)

    p = sub.add_parser("eval", help="score a hypothesis RTTM")
    p.add_argument("--ref", required=True, help="reference RTTM or script JSON")
    p.add_argument("--hyp", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="comparative studies")
    p.add_argument("study", choices=["cluster-study", "runtime-study", "der-study"])
    p.add_argument("--methods", nargs="+")
    p.add_argument("--counts", nargs="+", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--resolutions", nargs="+", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="JSON output")
    p.add_argument("--table", help="text table output")
    _pipeline_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.dump_config:
        print(json.dumps(default_config(args.seed), indent=2))
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"commdiar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"commdiar: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CommDiarError, OSError, ValueError) as exc:
        print(f"commdiar: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
