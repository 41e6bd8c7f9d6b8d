"""Synthetic speaker embeddings and meeting timelines.

Speakers are unit centroids; samples are tangent-space Gaussian perturbations
re-projected to the sphere, so ``cos(sample, centroid) ~ 1 / sqrt(1 + s^2)``
for spread ``s``.  Centroids share a common direction (``shared``) so that
different speakers are mildly correlated, as real extractor outputs are.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingSet, MeetingScript, ParameterError, derive_seed, make_rng

DEFAULT_DIM = 256
# same-speaker cos ~ 1/(1+s^2) ~ 0.75, cross-speaker ~ 0.75 * shared ~ 0.15
DEFAULT_SPREAD = 0.58
DEFAULT_SHARED = 0.2
DEFAULT_MIN_SEPARATION = 0.5
# frame-level features are much noisier than pooled segment embeddings
DEFAULT_FRAME_SPREAD = 2.5
_REF_DURATION = 3.0


@dataclass(frozen=True)
class SpeakerModel:
    centroid: np.ndarray
    within_spread: float = DEFAULT_SPREAD

    def __post_init__(self):
        c = np.asarray(self.centroid, dtype=np.float64)
        norm = np.linalg.norm(c)
        if not np.isclose(norm, 1.0, atol=1e-9):
            raise ParameterError(f"centroid must have unit norm, got {norm}")
        if not self.within_spread >= 0:
            raise ParameterError("within_spread must be >= 0")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "centroid", c)

    @property
    def dim(self) -> int:
        return self.centroid.size


@dataclass(frozen=True)
class MeetingSimConfig:
    num_speakers: int = 4
    duration_seconds: float = 1800.0
    overlap_ratio: float = 0.15
    segment_seconds: float = 4.0
    seed: int = 0
    turn_median_seconds: float = 5.0
    turn_sigma: float = 0.6

    def __post_init__(self):
        if not 2 <= self.num_speakers <= 10:
            raise ParameterError("num_speakers must be in [2, 10]")
        if self.duration_seconds < 1800:
            raise ParameterError("meetings last at least 1800 s")
        if not 0.05 <= self.overlap_ratio <= 0.30:
            raise ParameterError("overlap_ratio must be in [0.05, 0.30]")
        if self.segment_seconds <= 0:
            raise ParameterError("segment_seconds must be positive")


def perturb(centroid: np.ndarray, spread: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Tangent-space Gaussian noise of expected norm ``spread``, back on the sphere."""
    c = np.asarray(centroid, dtype=np.float64)
    d = c.size
    shape = (d,) if size is None else (size, d)
    g = rng.normal(scale=spread / math.sqrt(max(d - 1, 1)), size=shape)
    g -= np.multiply.outer(g @ c, c) if size is not None else (g @ c) * c
    x = c + g
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def sample_speakers(
    num: int,
    dim: int = DEFAULT_DIM,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    seed: int = 0,
    within_spread: float = DEFAULT_SPREAD,
    shared: float = 0.0,
    max_attempts: int = 10_000,
) -> list[SpeakerModel]:
    """Unit centroids with every pairwise cosine <= ``min_separation``.

    Each centroid is ``sqrt(shared) * u + sqrt(1 - shared) * r`` (normalized)
    for a common random direction ``u``; the simulators pass
    ``DEFAULT_SHARED`` so that different speakers stay mildly similar.  Candidates violating the separation
    are redrawn; the attempt budget covers all draws.
    """
    if num < 1:
        raise ParameterError("num must be >= 1")
    if not min_separation < 1:
        raise ParameterError("min_separation must be < 1")
    if not 0 <= shared < 1:
        raise ParameterError("shared must be in [0, 1)")
    rng = make_rng(seed)
    common = _unit(rng.normal(size=dim))
    chosen: list[np.ndarray] = []
    attempts = 0
    while len(chosen) < num:
        if attempts >= max_attempts:
            raise ParameterError(
                f"could not place {num} centroids with cosine <= {min_separation} in {dim} dims "
                f"after {max_attempts} attempts")
        attempts += 1
        cand = _unit(math.sqrt(shared) * common + math.sqrt(1 - shared) * _unit(rng.normal(size=dim)))
        if all(float(cand @ c) <= min_separation for c in chosen):
            chosen.append(cand)
    return [SpeakerModel(c, within_spread) for c in chosen]


def sample_cluster_trial(
    num_speakers: int,
    segments_per_speaker: int,
    seed: int = 0,
    dim: int = DEFAULT_DIM,
    within_spread: float = DEFAULT_SPREAD,
    shared: float = DEFAULT_SHARED,
    min_separation: float = DEFAULT_MIN_SEPARATION,
) -> tuple[EmbeddingSet, np.ndarray]:
    """Shuffled segments from ``num_speakers`` random speakers, with true labels.

    Segment durations are uniform in [2, 4] s (kept in ``times``, onsets are
    synthetic) and the noise spread scales with 1 / duration.
    """
    rng = make_rng(seed)
    speakers = sample_speakers(num_speakers, dim, min_separation, int(rng.integers(2**63)), within_spread, shared)
    labels = np.repeat(np.arange(num_speakers), segments_per_speaker)
    rng.shuffle(labels)
    durations = rng.uniform(2.0, 4.0, size=labels.size)
    vecs = np.empty((labels.size, dim))
    for i, (lab, dur) in enumerate(zip(labels, durations)):
        vecs[i] = perturb(speakers[lab].centroid, within_spread * _REF_DURATION / dur, rng)
    onsets = np.concatenate([[0.0], np.cumsum(durations)[:-1]])
    emb = EmbeddingSet(vecs, tuple(f"seg{i:05d}" for i in range(labels.size)), np.column_stack([onsets, durations]))
    return emb, labels


def sample_frames(
    primary: SpeakerModel,
    secondary: SpeakerModel | None,
    mix_fraction: float,
    num_frames: int,
    seed: int = 0,
    frame_spread: float = DEFAULT_FRAME_SPREAD,
) -> np.ndarray:
    """T x D frame features: ceil((1 - mix) T) from ``primary``, the rest from ``secondary``, shuffled."""
    if not 0 <= mix_fraction <= 1:
        raise ParameterError("mix_fraction must be in [0, 1]")
    n_primary = math.ceil((1 - mix_fraction) * num_frames - 1e-9)
    if secondary is None and n_primary < num_frames:
        raise ParameterError("mix_fraction > 0 needs a secondary speaker")
    rng = make_rng(seed)
    frames = np.empty((num_frames, primary.dim))
    frames[:n_primary] = perturb(primary.centroid, frame_spread, rng, n_primary)
    if n_primary < num_frames:
        frames[n_primary:] = perturb(secondary.centroid, frame_spread, rng, num_frames - n_primary)
    return frames[rng.permutation(num_frames)]


# ---------------------------------------------------------------------------
# Meetings
# ---------------------------------------------------------------------------

def _draw_turns(config: MeetingSimConfig, rng: np.random.Generator) -> tuple[list[int], np.ndarray]:
    """Speaker sequence and boundaries of back-to-back turns tiling the meeting."""
    T = config.duration_seconds
    mu = math.log(config.turn_median_seconds)
    who, lengths = [], []
    total = 0.0
    prev = -1
    while total < T:
        s = int(rng.integers(config.num_speakers - (prev >= 0)))
        if prev >= 0 and s >= prev:
            s += 1
        length = float(rng.lognormal(mu, config.turn_sigma))
        who.append(s)
        lengths.append(length)
        total += length
        prev = s
    # every speaker should talk; rotate the sequence through unseen ones
    missing = [s for s in range(config.num_speakers) if s not in who]
    for s in missing:
        for i in range(len(who)):
            left = who[i - 1] if i > 0 else -1
            right = who[i + 1] if i + 1 < len(who) else -1
            if who.count(who[i]) > 1 and s not in (left, right):
                who[i] = s
                break
    bounds = np.concatenate([[0.0], np.cumsum(lengths)])
    bounds[-1] = T
    if bounds[-1] <= bounds[-2]:
        bounds = np.delete(bounds, -2)
        who.pop()
    return who, bounds


def _overlap_shifts(bounds: np.ndarray, target: float, rng: np.random.Generator) -> np.ndarray:
    """Per-turn onset advances whose sum is ``target`` seconds.

    Turn i may start at most 45% of turn i-1's length early, so no instant has
    three active speakers.
    """
    lengths = np.diff(bounds)
    shifts = np.zeros(lengths.size)
    budget = target
    for i in rng.permutation(np.arange(1, lengths.size)):
        if budget <= 1e-9:
            break
        cap = 0.45 * lengths[i - 1]
        s = min(cap * rng.uniform(0.3, 1.0), budget)
        shifts[i] = s
        budget -= s
    if budget > 1e-6:
        # top up boundaries towards their caps before giving up
        for i in range(1, lengths.size):
            room = 0.45 * lengths[i - 1] - shifts[i]
            take = min(room, budget)
            shifts[i] += take
            budget -= take
            if budget <= 1e-9:
                break
    if budget > 1e-6:
        raise ParameterError(f"overlap target of {target:.1f} s is infeasible for this turn structure")
    return shifts


def simulate_script(config: MeetingSimConfig, speaker_names: list[str] | None = None) -> MeetingScript:
    rng = make_rng(config.seed)
    who, bounds = _draw_turns(config, rng)
    shifts = _overlap_shifts(bounds, config.overlap_ratio * config.duration_seconds, rng)
    names = speaker_names or [f"S{s}" for s in range(config.num_speakers)]
    turns = []
    for i, s in enumerate(who):
        onset = bounds[i] - shifts[i]
        turns.append((names[s], onset, bounds[i + 1] - onset))
    return MeetingScript(names, turns, config.duration_seconds, {"seed": config.seed, "overlap_target": config.overlap_ratio})


def segment_windows(script: MeetingScript, segment_seconds: float) -> np.ndarray:
    """(onset, duration) windows tiling the speech regions, last one per region shortened."""
    intervals = sorted((o, o + d) for _, o, d in script.turns)
    regions = []
    for lo, hi in intervals:
        if regions and lo <= regions[-1][1] + 1e-9:
            regions[-1][1] = max(regions[-1][1], hi)
        else:
            regions.append([lo, hi])
    out = []
    for lo, hi in regions:
        t = lo
        while hi - t > 1e-6:
            out.append((t, min(segment_seconds, hi - t)))
            t += segment_seconds
    return np.array(out)


def segment_speakers(script: MeetingScript, windows: np.ndarray) -> list[list[tuple[str, float]]]:
    """Per window: speakers sorted by descending talk time within it."""
    out = []
    for t0, dur in windows:
        share = script.speaker_time_in(t0, t0 + dur)
        out.append(sorted(share.items(), key=lambda kv: (-kv[1], kv[0])))
    return out


def simulate_meeting(config: MeetingSimConfig, speakers: list[SpeakerModel]) -> tuple[MeetingScript, EmbeddingSet]:
    """Ground-truth script plus one embedding per fixed-length speech segment.

    A segment embedding is a perturbed sample of its dominant speaker, pulled
    toward the secondary speaker's centroid by that speaker's share of the
    segment's talk time, then perturbed again.
    """
    if len(speakers) < config.num_speakers:
        raise ParameterError(f"need {config.num_speakers} speaker models, got {len(speakers)}")
    script = simulate_script(config)
    rng = make_rng(derive_seed(config.seed, 1))
    windows = segment_windows(script, config.segment_seconds)
    index = {name: i for i, name in enumerate(script.speakers)}
    vecs = np.empty((len(windows), speakers[0].dim))
    for i, present in enumerate(segment_speakers(script, windows)):
        dom = speakers[index[present[0][0]]]
        x = perturb(dom.centroid, dom.within_spread, rng)
        if len(present) > 1:
            sec = speakers[index[present[1][0]]]
            share = present[1][1] / (present[0][1] + present[1][1])
            x = _unit((1 - share) * x + share * sec.centroid)
            x = perturb(x, dom.within_spread * 0.5, rng)
        vecs[i] = x
    emb = EmbeddingSet(vecs, tuple(f"seg{i:05d}" for i in range(len(windows))), windows)
    return script, emb


def segment_frames(
    script: MeetingScript,
    windows: np.ndarray,
    speakers: list[SpeakerModel],
    frames_per_segment: int,
    seed: int = 0,
    frame_spread: float = DEFAULT_FRAME_SPREAD,
) -> np.ndarray:
    """N x T x D frame features per segment, mixing speakers by their talk share."""
    index = {name: i for i, name in enumerate(script.speakers)}
    rng = make_rng(seed)
    out = np.empty((len(windows), frames_per_segment, speakers[0].dim))
    for i, present in enumerate(segment_speakers(script, windows)):
        primary = speakers[index[present[0][0]]]
        secondary, mix = None, 0.0
        if len(present) > 1:
            secondary = speakers[index[present[1][0]]]
            mix = present[1][1] / (present[0][1] + present[1][1])
        out[i] = sample_frames(primary, secondary, mix, frames_per_segment, int(rng.integers(2**63)), frame_spread)
    return out
