"""Deployment-time uncertainty scoring, retention curves and deferral thresholds.

Training-dynamics metrics are unavailable once training is over, so these
are post-hoc scores: two computed from the model's output distribution and
five from the test sample's nearest training neighbors.  Every metric is
oriented so that a higher score means more uncertain.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .dynamics import entropy
from .neighbors import NeighborIndex, query_knn

__all__ = [
    "DeferralScore",
    "ExplanationReport",
    "METRIC_IDS",
    "NEIGHBOR_METRICS",
    "RecordingExplanation",
    "RetentionCurve",
    "ThresholdPick",
    "explain",
    "pick_threshold",
    "read_scores_csv",
    "retention_curve",
    "score",
    "write_scores_csv",
]

METRIC_IDS = (
    "output_entropy",
    "max_prob",
    "knn_distance",
    "class_distance_ratio",
    "wknn_confidence",
    "wknn_data_uncertainty",
    "wknn_model_uncertainty",
)
OUTPUT_METRICS = ("output_entropy", "max_prob")
NEIGHBOR_METRICS = tuple(m for m in METRIC_IDS if m not in OUTPUT_METRICS)

WEIGHT_EPS = 1e-8  # guards zero distance in inverse-distance weights

_WKNN_ATTACHMENT = {
    "wknn_confidence": "confidence",
    "wknn_data_uncertainty": "v_al",
    "wknn_model_uncertainty": "v_ep",
}


@dataclass(frozen=True)
class DeferralScore:
    """Per-sample uncertainty score; higher means more uncertain.

    For neighbor-based metrics the two explanation factors are filled in:
    the mean distance to the n nearest training samples and (when the index
    carries confidences) their mean confidence.
    """

    sample_id: str
    metric_id: str
    score: float
    mean_neighbor_distance: float | None = None
    mean_neighbor_confidence: float | None = None


def _neighbor_scores(
    metric_id: str,
    sample_ids: Sequence[str],
    embeddings: np.ndarray,
    index: NeighborIndex,
    n: int,
) -> list[DeferralScore]:
    needs = _WKNN_ATTACHMENT.get(metric_id)
    if needs is not None and needs not in index.attachments:
        raise ValueError(f"metric {metric_id!r} requires the {needs!r} attachment")
    class_values: list[int] = []
    if metric_id == "class_distance_ratio":
        if "label" not in index.attachments:
            raise ValueError("class_distance_ratio requires the label attachment")
        class_values = sorted(int(c) for c in np.unique(index.attachments["label"]))
        if len(class_values) < 2:
            raise ValueError("class_distance_ratio needs at least two classes in the index")
        for c in class_values:
            count = int((index.attachments["label"] == c).sum())
            if count < n:
                raise ValueError(
                    f"class {c} has only {count} index points, need n={n}"
                )

    out = []
    has_conf = "confidence" in index.attachments
    for i, sid in enumerate(sample_ids):
        hits = query_knn(index, embeddings[i], n=n)
        dists = np.array([h.distance for h in hits])
        mean_dist = float(dists.mean())
        mean_conf = (
            float(np.mean([h.attachments["confidence"] for h in hits])) if has_conf else None
        )
        if metric_id == "knn_distance":
            value = mean_dist
        elif metric_id == "class_distance_ratio":
            per_class = sorted(
                float(
                    np.mean([h.distance for h in query_knn(index, embeddings[i], n=n, class_filter=c)])
                )
                for c in class_values
            )
            d_min, d_second = per_class[0], per_class[1]
            value = 1.0 if d_second == 0.0 else d_min / d_second
        else:
            w = 1.0 / (dists + WEIGHT_EPS)
            attached = np.array([h.attachments[_WKNN_ATTACHMENT[metric_id]] for h in hits])
            weighted = float((w * attached).sum() / w.sum())
            value = 1.0 - weighted if metric_id == "wknn_confidence" else weighted
        out.append(
            DeferralScore(
                sample_id=sid,
                metric_id=metric_id,
                score=value,
                mean_neighbor_distance=mean_dist,
                mean_neighbor_confidence=mean_conf,
            )
        )
    return out


def score(
    metric_id: str,
    sample_ids: Sequence[str],
    outputs: np.ndarray | None = None,
    embeddings: np.ndarray | None = None,
    index: NeighborIndex | None = None,
    n: int = 20,
) -> list[DeferralScore]:
    """Score test samples with one post-hoc uncertainty metric.

    Output metrics (output_entropy, max_prob) need ``outputs`` (N x C
    probability rows); the neighbor metrics need ``embeddings`` plus an
    ``index`` whose attachments cover what the metric reads.
    """
    if metric_id not in METRIC_IDS:
        raise ValueError(f"unknown metric {metric_id!r}")
    if metric_id in OUTPUT_METRICS:
        if outputs is None:
            raise ValueError(f"metric {metric_id!r} requires model outputs")
        probs = np.asarray(outputs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] != len(sample_ids):
            raise ValueError("outputs must be one probability row per sample")
        if metric_id == "output_entropy":
            values = entropy(probs, axis=1)
        else:
            values = 1.0 - probs.max(axis=1)
        return [
            DeferralScore(sample_id=sid, metric_id=metric_id, score=float(values[i]))
            for i, sid in enumerate(sample_ids)
        ]
    if embeddings is None or index is None:
        raise ValueError(f"metric {metric_id!r} requires embeddings and a neighbor index")
    emb = np.asarray(embeddings, dtype=float)
    if emb.ndim != 2 or emb.shape[0] != len(sample_ids):
        raise ValueError("embeddings must be one vector per sample")
    return _neighbor_scores(metric_id, sample_ids, emb, index, n)


@dataclass(frozen=True)
class CurvePoint:
    retained_fraction: float
    accuracy: float
    score_threshold: float


@dataclass(frozen=True)
class RetentionCurve:
    """Accuracy over the most-certain fraction of samples, per grid point."""

    points: tuple[CurvePoint, ...]
    metric_id: str
    tie_break: str = "ascending sample_id"

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["z", "accuracy"])
            for p in self.points:
                writer.writerow([repr(p.retained_fraction), repr(p.accuracy)])


DEFAULT_GRID = tuple(round(z * 0.01, 2) for z in range(1, 101))


def _ranked(scores: list[DeferralScore], correctness: Mapping[str, bool]):
    if not scores:
        raise ValueError("no scores given")
    missing = [s.sample_id for s in scores if s.sample_id not in correctness]
    if missing:
        raise ValueError(f"correctness missing for samples: {missing[:5]}")
    ranked = sorted(scores, key=lambda s: (s.score, s.sample_id))
    correct = np.array([bool(correctness[s.sample_id]) for s in ranked])
    return ranked, correct


def retention_curve(
    scores: list[DeferralScore],
    correctness: Mapping[str, bool],
    grid: Sequence[float] = DEFAULT_GRID,
    most_uncertain: bool = False,
) -> RetentionCurve:
    """Accuracy over the ceil(N*z) most-certain samples for each z in the grid.

    With ``most_uncertain=True`` the complementary view is produced (accuracy
    over the ceil(N*z) highest-score samples), matching reports that sweep
    from the uncertain end.
    """
    grid = sorted(set(float(z) for z in grid))
    if not grid or grid[0] <= 0 or grid[-1] > 1:
        raise ValueError("grid values must lie in (0, 1]")
    ranked, correct = _ranked(scores, correctness)
    if most_uncertain:
        ranked = ranked[::-1]
        correct = correct[::-1]
    n = len(ranked)
    cum = np.cumsum(correct)
    points = []
    for z in grid:
        k = math.ceil(n * z)
        points.append(
            CurvePoint(
                retained_fraction=z,
                accuracy=float(cum[k - 1] / k),
                score_threshold=ranked[k - 1].score,
            )
        )
    metric = scores[0].metric_id
    return RetentionCurve(points=tuple(points), metric_id=metric)


@dataclass(frozen=True)
class ThresholdPick:
    retained_fraction: float
    score_threshold: float
    accuracy: float


def pick_threshold(curve: RetentionCurve, target_accuracy: float) -> ThresholdPick | None:
    """Largest retained fraction meeting the target accuracy, or None if unreachable."""
    if not curve.points:
        raise ValueError("empty curve")
    best = None
    for p in curve.points:
        if p.accuracy >= target_accuracy:
            if best is None or p.retained_fraction > best.retained_fraction:
                best = p
    if best is None:
        return None
    return ThresholdPick(
        retained_fraction=best.retained_fraction,
        score_threshold=best.score_threshold,
        accuracy=best.accuracy,
    )


@dataclass(frozen=True)
class RecordingExplanation:
    recording_id: str
    mean_distance: float
    mean_neighbor_confidence: float | None
    accuracy: float
    num_samples: int


@dataclass(frozen=True)
class ExplanationReport:
    recordings: tuple[RecordingExplanation, ...]
    corr_distance: tuple[float, float] | None
    corr_confidence: tuple[float, float] | None
    notice: str | None = None


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.all(x == x[0]))


def _permutation_pvalue(x: np.ndarray, y: np.ndarray, permutations: int, seed: int) -> tuple[float, float]:
    r_obs = stats.spearmanr(x, y).statistic
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(permutations):
        r_perm = stats.spearmanr(x, rng.permutation(y)).statistic
        if abs(r_perm) >= abs(r_obs) - 1e-15:
            hits += 1
    return float(r_obs), (1 + hits) / (1 + permutations)


def _correlation(x: np.ndarray, y: np.ndarray, exact: bool, permutations: int, seed: int):
    if _is_constant(x) or _is_constant(y):
        return None  # rank correlation undefined for a constant factor
    if exact:
        return _permutation_pvalue(x, y, permutations, seed)
    res = stats.spearmanr(x, y)
    return (float(res.statistic), float(res.pvalue))


def explain(
    scores: list[DeferralScore],
    recording_ids: Mapping[str, str],
    correctness: Mapping[str, bool],
    exact_permutation: bool = False,
    permutations: int = 2000,
    seed: int = 0,
) -> ExplanationReport:
    """Per-recording deferral factors and their rank correlation with accuracy.

    Aggregates mean neighbor distance, mean neighbor confidence and accuracy
    per recording, then reports Spearman correlations of accuracy against the
    two factors (two-sided p-values; t approximation by default, permutation
    test when ``exact_permutation`` is set).  With fewer than 3 recordings
    the correlations are omitted with a notice.
    """
    if any(s.mean_neighbor_distance is None for s in scores):
        raise ValueError("explanations require a neighbor-based metric (no distance factors present)")
    groups: dict[str, list[DeferralScore]] = {}
    for s in scores:
        rid = recording_ids.get(s.sample_id)
        if rid is None:
            raise ValueError(f"no recording for sample {s.sample_id!r}")
        groups.setdefault(rid, []).append(s)

    recs = []
    for rid in sorted(groups):
        members = groups[rid]
        confs = [s.mean_neighbor_confidence for s in members]
        recs.append(
            RecordingExplanation(
                recording_id=rid,
                mean_distance=float(np.mean([s.mean_neighbor_distance for s in members])),
                mean_neighbor_confidence=(
                    float(np.mean(confs)) if all(c is not None for c in confs) else None
                ),
                accuracy=float(np.mean([bool(correctness[s.sample_id]) for s in members])),
                num_samples=len(members),
            )
        )
    if len(recs) < 3:
        return ExplanationReport(
            recordings=tuple(recs),
            corr_distance=None,
            corr_confidence=None,
            notice="fewer than 3 recordings: correlations omitted",
        )

    acc = np.array([r.accuracy for r in recs])
    dist = np.array([r.mean_distance for r in recs])
    corr_dist = _correlation(dist, acc, exact_permutation, permutations, seed)
    corr_conf = None
    if all(r.mean_neighbor_confidence is not None for r in recs):
        conf = np.array([r.mean_neighbor_confidence for r in recs])
        corr_conf = _correlation(conf, acc, exact_permutation, permutations, seed + 1)
    return ExplanationReport(
        recordings=tuple(recs), corr_distance=corr_dist, corr_confidence=corr_conf
    )


SCORES_CSV_HEADER = [
    "sample_id",
    "metric_id",
    "score",
    "mean_neighbor_distance",
    "mean_neighbor_confidence",
]


def write_scores_csv(scores: list[DeferralScore], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORES_CSV_HEADER)
        for s in scores:
            writer.writerow(
                [
                    s.sample_id,
                    s.metric_id,
                    repr(s.score),
                    "" if s.mean_neighbor_distance is None else repr(s.mean_neighbor_distance),
                    "" if s.mean_neighbor_confidence is None else repr(s.mean_neighbor_confidence),
                ]
            )


def read_scores_csv(path: str | Path) -> list[DeferralScore]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SCORES_CSV_HEADER:
            raise ValueError(f"unexpected scores header {header}")
        return [
            DeferralScore(
                sample_id=row[0],
                metric_id=row[1],
                score=float(row[2]),
                mean_neighbor_distance=None if row[3] == "" else float(row[3]),
                mean_neighbor_confidence=None if row[4] == "" else float(row[4]),
            )
            for row in reader
            if row
        ]
