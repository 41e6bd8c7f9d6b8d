"""Shared data types, seeding helpers and file I/O."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RAW_MAGIC = int.from_bytes(b"EMBF", "little")
RAW_VERSION = 1
_RAW_HEADER = struct.Struct("<4I")


class CommDiarError(Exception):
    """Base class for errors raised by this package."""


class FormatError(CommDiarError, ValueError):
    pass


class DataError(CommDiarError, ValueError):
    pass


class ParameterError(CommDiarError, ValueError):
    pass


class PreconditionError(CommDiarError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a 64-bit unsigned seed."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(seed: int, *counters: int) -> int:
    """Child seed for ``counters``; independent of evaluation order."""
    ss = np.random.SeedSequence([int(seed), *(int(c) for c in counters)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EmbeddingSet:
    """N x D segment embeddings with ids and optional (onset, duration) times."""

    vectors: np.ndarray
    segment_ids: tuple[str, ...] = ()
    times: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.vectors, copy=True)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DataError(f"embeddings must be a non-empty 2-D matrix, got shape {v.shape}")
        if not np.issubdtype(v.dtype, np.floating):
            v = v.astype(np.float64)
        bad = ~np.isfinite(v).all(axis=1)
        if bad.any():
            raise DataError(f"non-finite embedding value in row {int(np.argmax(bad)) + 1}")
        object.__setattr__(self, "vectors", _frozen(v))

        ids = tuple(str(s) for s in self.segment_ids) or tuple(str(i) for i in range(len(v)))
        if len(ids) != len(v):
            raise DataError(f"{len(ids)} segment ids for {len(v)} rows")
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(s for s in ids if s in seen or seen.add(s))
            raise DataError(f"duplicate segment id {dup!r}")
        object.__setattr__(self, "segment_ids", ids)

        if self.times is not None:
            t = np.array(self.times, dtype=np.float64, copy=True).reshape(-1, 2)
            if len(t) != len(v):
                raise DataError(f"{len(t)} time pairs for {len(v)} rows")
            if not np.isfinite(t).all() or (t[:, 1] <= 0).any():
                raise DataError("segment times must be finite with positive durations")
            object.__setattr__(self, "times", _frozen(t))

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def with_vectors(self, vectors: np.ndarray) -> "EmbeddingSet":
        """Same ids and times, new coordinates (e.g. after reduction)."""
        return EmbeddingSet(vectors, self.segment_ids, self.times)

    def subset(self, rows: Sequence[int]) -> "EmbeddingSet":
        rows = np.asarray(rows, dtype=np.int64)
        return EmbeddingSet(
            self.vectors[rows],
            tuple(self.segment_ids[i] for i in rows),
            None if self.times is None else self.times[rows],
        )


@dataclass(frozen=True)
class Partition:
    """Node to community assignment.

    ``quality`` holds the modularity on the graph the partition came from, when
    that was computed.  ``converged`` is False when an optimizer stopped at its
    iteration cap.
    """

    assignment: np.ndarray
    num_communities: int
    quality: float | None = None
    converged: bool = True

    def __post_init__(self):
        a = np.array(self.assignment, dtype=np.int64, copy=True).ravel()
        k = int(self.num_communities)
        if a.size == 0:
            raise DataError("partition is empty")
        if a.min() < 0 or a.max() >= k:
            raise DataError(f"community index outside [0, {k})")
        if np.unique(a).size != k:
            raise DataError("partition has empty communities")
        object.__setattr__(self, "assignment", _frozen(a))
        object.__setattr__(self, "num_communities", k)

    @classmethod
    def from_labels(cls, labels: Iterable, quality: float | None = None, converged: bool = True) -> "Partition":
        """Relabel arbitrary labels to 0..K-1 in order of first appearance."""
        compact = relabel_first_seen(np.asarray(list(labels) if not isinstance(labels, np.ndarray) else labels))
        if compact.size == 0:
            raise DataError("partition is empty")
        return cls(compact, int(compact.max()) + 1, quality, converged)

    def __len__(self) -> int:
        return self.assignment.size

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_communities)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == c)


def relabel_first_seen(labels: np.ndarray) -> np.ndarray:
    """Map labels to 0..K-1 by order of first occurrence."""
    labels = np.asarray(labels).ravel()
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inv]


@dataclass(frozen=True)
class MeetingScript:
    """Ground-truth speaker timeline. Turns are (speaker, onset, duration)."""

    speakers: tuple[str, ...]
    turns: tuple[tuple[str, float, float], ...]
    total_duration_seconds: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "speakers", tuple(str(s) for s in self.speakers))
        turns = tuple((str(s), float(o), float(d)) for s, o, d in self.turns)
        T = float(self.total_duration_seconds)
        if not math.isfinite(T) or T <= 0:
            raise DataError("total duration must be positive")
        known = set(self.speakers)
        eps = 1e-9
        for s, o, d in turns:
            if s not in known:
                raise DataError(f"turn for unknown speaker {s!r}")
            if d <= 0 or o < -eps or o + d > T + eps:
                raise DataError(f"turn ({s}, {o}, {d}) outside [0, {T}] or non-positive")
        object.__setattr__(self, "turns", turns)
        object.__setattr__(self, "total_duration_seconds", T)

    def speech_and_overlap(self, step: float = 0.01) -> tuple[float, float]:
        """(time with >= 1 speaker, time with >= 2 speakers) in seconds."""
        events = []
        for _, o, d in self.turns:
            events.append((o, 1))
            events.append((o + d, -1))
        events.sort()
        speech = overlap = 0.0
        active = 0
        prev = 0.0
        for t, delta in events:
            if active >= 1:
                speech += t - prev
            if active >= 2:
                overlap += t - prev
            active += delta
            prev = t
        return speech, overlap

    def overlap_ratio(self) -> float:
        speech, overlap = self.speech_and_overlap()
        return overlap / speech if speech > 0 else 0.0

    def speaker_time_in(self, start: float, end: float) -> dict[str, float]:
        """Seconds each speaker is active within [start, end)."""
        out: dict[str, float] = {}
        for s, o, d in self.turns:
            lo, hi = max(start, o), min(end, o + d)
            if hi > lo:
                out[s] = out.get(s, 0.0) + hi - lo
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "speakers": list(self.speakers),
                "turns": [list(t) for t in self.turns],
                "total_duration_seconds": self.total_duration_seconds,
                "meta": self.meta,
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "MeetingScript":
        d = json.loads(text)
        return cls(d["speakers"], [tuple(t) for t in d["turns"]], d["total_duration_seconds"], d.get("meta", {}))

    def rttm_lines(self, file_id: str = "meeting") -> list[str]:
        return [_rttm_line(file_id, o, d, s) for s, o, d in sorted(self.turns, key=lambda t: (t[1], t[0]))]


# ---------------------------------------------------------------------------
# Embedding files
# ---------------------------------------------------------------------------

def load_embeddings(path, format: str = "csv") -> EmbeddingSet:
    """Read a csv (``id,t0,dur,e0,e1,...``) or raw-f32 embedding file."""
    path = Path(path)
    if format == "csv":
        return _load_csv(path)
    if format in ("raw-f32", "raw"):
        return _load_raw(path)
    raise ParameterError(f"unknown embedding format {format!r}")


def save_embeddings(emb: EmbeddingSet, path, format: str = "raw-f32") -> None:
    path = Path(path)
    if format == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "t0", "dur"] + [f"e{j}" for j in range(emb.dim)])
            for i, sid in enumerate(emb.segment_ids):
                t0, dur = ("", "") if emb.times is None else (repr(float(emb.times[i, 0])), repr(float(emb.times[i, 1])))
                w.writerow([sid, t0, dur] + [repr(float(x)) for x in emb.vectors[i]])
    elif format in ("raw-f32", "raw"):
        data = np.ascontiguousarray(emb.vectors, dtype="<f4")
        with path.open("wb") as fh:
            fh.write(_RAW_HEADER.pack(RAW_MAGIC, RAW_VERSION, emb.n, emb.dim))
            fh.write(data.tobytes(order="C"))
    else:
        raise ParameterError(f"unknown embedding format {format!r}")


def _load_csv(path: Path) -> EmbeddingSet:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["id", "t0", "dur"] or len(header) < 4:
        raise FormatError(f"{path}: header must start with id,t0,dur,e0")
    expected = [f"e{j}" for j in range(len(header) - 3)]
    if header[3:] != expected:
        raise FormatError(f"{path}: embedding columns must be e0..e{len(expected) - 1}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise FormatError(f"{path}: no data rows")
    ids, times, vecs = [], [], []
    have_times = None
    for lineno, r in enumerate(body, start=1):
        if len(r) != len(header):
            raise FormatError(f"{path}: row {lineno} has {len(r)} fields, expected {len(header)}")
        try:
            vec = [float(x) for x in r[3:]]
        except ValueError as exc:
            raise FormatError(f"{path}: row {lineno}: {exc}") from None
        if not all(math.isfinite(x) for x in vec):
            raise DataError(f"{path}: non-finite embedding value in row {lineno}")
        t_present = r[1].strip() != "" and r[2].strip() != ""
        if have_times is None:
            have_times = t_present
        elif have_times != t_present:
            raise FormatError(f"{path}: row {lineno}: times given for some rows but not others")
        if t_present:
            times.append((float(r[1]), float(r[2])))
        ids.append(r[0])
        vecs.append(vec)
    return EmbeddingSet(np.array(vecs, dtype=np.float64), tuple(ids), np.array(times) if have_times else None)


def _load_raw(path: Path) -> EmbeddingSet:
    blob = path.read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, d = _RAW_HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}")
    if version != RAW_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: header claims N={n}, D={d}")
    payload = len(blob) - _RAW_HEADER.size
    if payload != 4 * n * d:
        raise FormatError(f"{path}: truncated or oversized payload: header claims {n * d} floats, found {payload / 4:g}")
    vecs = np.frombuffer(blob, dtype="<f4", offset=_RAW_HEADER.size).reshape(n, d).astype(np.float32)
    return EmbeddingSet(vecs)


# ---------------------------------------------------------------------------
# RTTM
# ---------------------------------------------------------------------------

def _rttm_line(file_id: str, onset: float, dur: float, speaker: str) -> str:
    return f"SPEAKER {file_id} 1 {onset:.3f} {dur:.3f} <NA> <NA> {speaker} <NA> <NA>"


def save_partition_rttm(partition: Partition, embeddings: EmbeddingSet, path, file_id: str = "meeting") -> None:
    """One SPEAKER line per segment, speaker label ``spk<community>``."""
    if embeddings.times is None:
        raise PreconditionError("embeddings carry no segment times; cannot write RTTM")
    if len(partition) != embeddings.n:
        raise PreconditionError(f"partition has {len(partition)} nodes, embeddings have {embeddings.n}")
    lines = [
        _rttm_line(file_id, t0, dur, f"spk{c}")
        for (t0, dur), c in zip(embeddings.times, partition.assignment)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def write_rttm(turns: Iterable[tuple[str, float, float]], path, file_id: str = "meeting") -> None:
    lines = [_rttm_line(file_id, o, d, s) for s, o, d in turns]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_rttm(path) -> list[tuple[str, float, float]]:
    """(speaker, onset, duration) for every SPEAKER line."""
    turns = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0] != "SPEAKER":
            continue
        if len(parts) < 8:
            raise FormatError(f"{path}:{lineno}: short RTTM line")
        try:
            turns.append((parts[7], float(parts[3]), float(parts[4])))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad onset/duration") from None
    return turns
