"""Clustering and diarization scores."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import DataError, MeetingScript, ParameterError, Partition

FRAME_STEP = 0.01


@dataclass(frozen=True)
class EvalReport:
    """Scores for one study cell or one meeting set.

    DER fields are fractions of reference speech time; NaN marks a score that
    was not computed (e.g. DER for a clustering-only study).
    """

    count_accuracy: float = math.nan
    precision: float = math.nan
    recall: float = math.nan
    f_score: float = math.nan
    der: float = math.nan
    miss: float = math.nan
    false_alarm: float = math.nan
    confusion: float = math.nan
    trials: int = 0

    def __post_init__(self):
        parts = (self.miss, self.false_alarm, self.confusion)
        if not math.isnan(self.der) and abs(self.der - sum(parts)) > 1e-9:
            raise DataError("der must equal miss + false_alarm + confusion")

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**{k: (math.nan if v is None else v) for k, v in d.items()})


def count_accuracy(predicted: Iterable[int], truth: Iterable[int]) -> float:
    p, t = list(predicted), list(truth)
    if len(p) != len(t):
        raise ParameterError(f"length mismatch: {len(p)} predictions vs {len(t)} truths")
    if not p:
        raise ParameterError("need at least one count")
    return sum(int(a == b) for a, b in zip(p, t)) / len(p)


def _pairs(counts: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    return float((counts * (counts - 1) / 2).sum())


class PairScores(NamedTuple):
    precision: float
    recall: float
    f_score: float


def pairwise_f_score(predicted, truth) -> PairScores:
    """Precision/recall/F1 over unordered same-cluster pairs; 0/0 counts as 1."""
    p = np.asarray(predicted.assignment if isinstance(predicted, Partition) else predicted)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ParameterError(f"length mismatch: {p.size} vs {t.size}")
    if p.size < 2:
        raise ParameterError("pairwise scores need at least two items")
    _, pi = np.unique(p, return_inverse=True)
    _, ti = np.unique(t, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1))
    np.add.at(table, (pi, ti), 1)
    tp = _pairs(table)
    pred_pairs = _pairs(table.sum(1))
    true_pairs = _pairs(table.sum(0))
    precision = tp / pred_pairs if pred_pairs else 1.0
    recall = tp / true_pairs if true_pairs else 1.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PairScores(precision, recall, f)


class DerResult(NamedTuple):
    der: float
    miss: float
    false_alarm: float
    confusion: float
    reference_seconds: float
    mapping: dict


def _activity(turns, step: float, n_frames: int) -> tuple[list[str], np.ndarray]:
    names = sorted({s for s, _, _ in turns})
    act = np.zeros((len(names), n_frames), dtype=bool)
    row = {s: i for i, s in enumerate(names)}
    for s, onset, dur in turns:
        lo = max(int(round(onset / step)), 0)
        hi = min(int(round((onset + dur) / step)), n_frames)
        act[row[s], lo:hi] = True
    return names, act


def der(reference, hypothesis, step: float = FRAME_STEP, duration: float | None = None) -> DerResult:
    """Diarization error rate with a one-to-one optimal speaker mapping.

    ``reference`` is a :class:`MeetingScript` or a list of (speaker, onset,
    duration); ``hypothesis`` is a list of the same triples.  Time is cut
    into ``step``-second frames, overlapped speech is scored per speaker and
    there is no collar.
    """
    ref_turns = list(reference.turns if isinstance(reference, MeetingScript) else reference)
    hyp_turns = list(hypothesis)
    if duration is None:
        ends = [o + d for _, o, d in ref_turns + hyp_turns]
        duration = reference.total_duration_seconds if isinstance(reference, MeetingScript) else max(ends, default=0.0)
        duration = max([duration] + ends)
    n_frames = int(math.ceil(duration / step - 1e-9))
    ref_names, ref = _activity(ref_turns, step, n_frames)
    hyp_names, hyp = _activity(hyp_turns, step, n_frames)
    n_ref = ref.sum(0)
    total = float(n_ref.sum())
    if total == 0:
        raise DataError("reference contains no speech")
    n_hyp = hyp.sum(0) if hyp_names else np.zeros(n_frames, dtype=np.int64)

    mapping: dict = {}
    correct = 0.0
    if hyp_names:
        overlap = ref.astype(np.float64) @ hyp.T.astype(np.float64)
        rows, cols = linear_sum_assignment(overlap, maximize=True)
        for r, c in zip(rows, cols):
            if overlap[r, c] > 0:
                mapping[hyp_names[c]] = ref_names[r]
                correct += overlap[r, c]
    miss = float(np.maximum(n_ref - n_hyp, 0).sum())
    fa = float(np.maximum(n_hyp - n_ref, 0).sum())
    conf = float(np.minimum(n_ref, n_hyp).sum()) - correct
    return DerResult((miss + fa + conf) / total, miss / total, fa / total, conf / total, total * step, mapping)


def pooled_der(results: Iterable[DerResult]) -> EvalReport:
    """Time-weighted DER over several meetings (errors and reference time summed)."""
    results = list(results)
    if not results:
        raise ParameterError("no DER results to pool")
    ref = sum(r.reference_seconds for r in results)
    miss = sum(r.miss * r.reference_seconds for r in results) / ref
    fa = sum(r.false_alarm * r.reference_seconds for r in results) / ref
    conf = sum(r.confusion * r.reference_seconds for r in results) / ref
    return EvalReport(der=miss + fa + conf, miss=miss, false_alarm=fa, confusion=conf, trials=len(results))


def cluster_report(predicted_labels: list, true_labels: list) -> EvalReport:
    """Count accuracy and mean pairwise scores over clustering trials."""
    if len(predicted_labels) != len(true_labels) or not predicted_labels:
        raise ParameterError("need matching, non-empty trial lists")
    counts_p = [len(np.unique(p)) for p in predicted_labels]
    counts_t = [len(np.unique(t)) for t in true_labels]
    scores = np.array([pairwise_f_score(p, t) for p, t in zip(predicted_labels, true_labels)])
    return EvalReport(
        count_accuracy=count_accuracy(counts_p, counts_t),
        precision=float(scores[:, 0].mean()),
        recall=float(scores[:, 1].mean()),
        f_score=float(scores[:, 2].mean()),
        trials=len(predicted_labels),
    )
