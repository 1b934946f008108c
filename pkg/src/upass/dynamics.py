"""Training-dynamics logs and per-sample uncertainty metrics.

A dynamics log records, for every sample, the class-probability vector a
classifier produced after each of its training epochs.  From that trajectory
this module derives per-sample confidence, data (aleatoric) uncertainty,
model (epistemic) uncertainty, their label-free entropy counterparts, and a
stratification of the dataset into easy / hard / ambiguous groups.

All operations here are pure functions of immutable inputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Literal, Mapping

import numpy as np

__all__ = [
    "STRATA",
    "DynamicsLog",
    "LogFormatError",
    "SampleUncertainty",
    "apply_strata",
    "entropy",
    "ingest_log",
    "read_metrics_csv",
    "sample_metrics",
    "sample_metrics_entropy",
    "stratify",
    "write_metrics_csv",
]

STRATA = ("easy", "hard", "model_ambiguous", "data_ambiguous", "other")

PROB_SUM_TOL = 1e-6


class LogFormatError(ValueError):
    """A dynamics log file or record set failed validation."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def entropy(p: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shannon entropy in nats along ``axis``, with 0*log(0) taken as 0."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return -terms.sum(axis=axis)


@dataclass(frozen=True)
class DynamicsLog:
    """Per-sample, per-training-epoch probability records.

    ``probs`` has shape (num_samples, num_epochs, num_classes); epoch e holds
    the outputs recorded after training epoch e.  ``labels`` holds a class
    index per sample, with -1 marking a missing label.
    """

    sample_ids: tuple[str, ...]
    recording_ids: tuple[str, ...]
    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)
        n = len(self.sample_ids)
        if probs.ndim != 3:
            raise LogFormatError("probs must have shape (samples, epochs, classes)")
        if probs.shape[0] != n or len(self.recording_ids) != n or labels.shape != (n,):
            raise LogFormatError("sample_ids, recording_ids, probs and labels disagree on sample count")
        if probs.shape[1] < 1:
            raise LogFormatError("log must cover at least one training epoch")
        if probs.shape[2] < 2:
            raise LogFormatError("log must cover at least two classes")
        if len(set(self.sample_ids)) != n:
            raise LogFormatError("duplicate sample_id in log")
        if not np.isfinite(probs).all():
            raise LogFormatError("non-finite probability value")
        if (probs < 0).any() or (probs > 1).any():
            raise LogFormatError("probability outside [0, 1]")
        sums = probs.sum(axis=2)
        if (np.abs(sums - 1.0) > PROB_SUM_TOL).any():
            bad = np.argwhere(np.abs(sums - 1.0) > PROB_SUM_TOL)[0]
            raise LogFormatError(
                f"probability sum {sums[tuple(bad)]:.6f} != 1 for sample "
                f"{self.sample_ids[bad[0]]!r} epoch {bad[1]}"
            )
        if ((labels < -1) | (labels >= probs.shape[2])).any():
            raise LogFormatError("label outside 0..num_classes-1")

    @property
    def num_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def num_epochs(self) -> int:
        return self.probs.shape[1]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]

    @property
    def has_labels(self) -> bool:
        return bool((self.labels >= 0).all())

    def subset(self, keep: Iterable[str]) -> "DynamicsLog":
        """Restrict to the given sample ids, preserving log order."""
        wanted = set(keep)
        idx = [i for i, sid in enumerate(self.sample_ids) if sid in wanted]
        missing = wanted - {self.sample_ids[i] for i in idx}
        if missing:
            raise KeyError(f"unknown sample ids: {sorted(missing)[:5]}")
        return DynamicsLog(
            sample_ids=tuple(self.sample_ids[i] for i in idx),
            recording_ids=tuple(self.recording_ids[i] for i in idx),
            probs=self.probs[idx],
            labels=self.labels[idx],
        )

    def group_by_recording(self) -> dict[str, "DynamicsLog"]:
        """Split into one log per recording, in order of first appearance."""
        groups: dict[str, list[int]] = {}
        for i, rid in enumerate(self.recording_ids):
            groups.setdefault(rid, []).append(i)
        return {
            rid: DynamicsLog(
                sample_ids=tuple(self.sample_ids[i] for i in idx),
                recording_ids=tuple(self.recording_ids[i] for i in idx),
                probs=self.probs[idx],
                labels=self.labels[idx],
            )
            for rid, idx in groups.items()
        }

    def iter_records(self):
        """Canonical (sample, epoch) record stream used for files and digests."""
        for i, sid in enumerate(self.sample_ids):
            label = int(self.labels[i])
            for e in range(self.num_epochs):
                yield {
                    "sample_id": sid,
                    "recording_id": self.recording_ids[i],
                    "epoch": e,
                    "probs": [float(p) for p in self.probs[i, e]],
                    "label": None if label < 0 else label,
                }

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.iter_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def digest(self) -> str:
        """SHA-256 over the canonical JSONL serialization."""
        h = hashlib.sha256()
        for rec in self.iter_records():
            h.update(json.dumps(rec, sort_keys=True).encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


def _assemble(records: list[tuple[int, dict]]) -> DynamicsLog:
    """Build a DynamicsLog from (line_number, record) pairs, validating structure."""
    per_sample: dict[str, dict] = {}
    num_classes: int | None = None
    for line, rec in records:
        sid = rec["sample_id"]
        probs = rec["probs"]
        if num_classes is None:
            num_classes = len(probs)
            if num_classes < 2:
                raise LogFormatError("fewer than two classes", line)
        elif len(probs) != num_classes:
            raise LogFormatError(
                f"inconsistent class count: expected {num_classes}, got {len(probs)}", line
            )
        total = math.fsum(probs)
        if any(not math.isfinite(p) for p in probs):
            raise LogFormatError("non-finite probability", line)
        if any(p < 0 or p > 1 for p in probs):
            raise LogFormatError("probability outside [0, 1]", line)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise LogFormatError(f"probability sum {total:.6f} != 1", line)
        entry = per_sample.setdefault(
            sid, {"recording_id": rec["recording_id"], "label": rec["label"], "epochs": {}}
        )
        if entry["recording_id"] != rec["recording_id"]:
            raise LogFormatError(f"recording_id changes across epochs of sample {sid!r}", line)
        if entry["label"] != rec["label"]:
            raise LogFormatError(f"label changes across epochs of sample {sid!r}", line)
        epoch = rec["epoch"]
        if not isinstance(epoch, int) or epoch < 0:
            raise LogFormatError(f"bad epoch index {epoch!r}", line)
        if epoch in entry["epochs"]:
            raise LogFormatError(f"duplicate epoch {epoch} for sample {sid!r}", line)
        entry["epochs"][epoch] = probs

    if not per_sample:
        raise LogFormatError("empty log")
    num_epochs = max(max(e["epochs"]) for e in per_sample.values()) + 1
    for sid, entry in per_sample.items():
        have = sorted(entry["epochs"])
        if have != list(range(num_epochs)):
            missing = sorted(set(range(num_epochs)) - set(have))
            raise LogFormatError(f"missing epoch {missing[0]} for sample {sid!r}")

    sids = tuple(per_sample)
    probs = np.array(
        [[per_sample[s]["epochs"][e] for e in range(num_epochs)] for s in sids], dtype=float
    )
    labels = np.array(
        [-1 if per_sample[s]["label"] is None else int(per_sample[s]["label"]) for s in sids],
        dtype=np.int64,
    )
    return DynamicsLog(
        sample_ids=sids,
        recording_ids=tuple(per_sample[s]["recording_id"] for s in sids),
        probs=probs,
        labels=labels,
    )


def _parse_jsonl(path: Path) -> list[tuple[int, dict]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"malformed JSON: {exc.msg}", line_no) from exc
            try:
                rec = {
                    "sample_id": str(raw["sample_id"]),
                    "recording_id": str(raw["recording_id"]),
                    "epoch": raw["epoch"],
                    "probs": [float(p) for p in raw["probs"]],
                    "label": None if raw.get("label") is None else int(raw["label"]),
                }
            except (KeyError, TypeError, ValueError) as exc:
                raise LogFormatError(f"malformed record: {exc}", line_no) from exc
            records.append((line_no, rec))
    return records


def _parse_csv(path: Path) -> list[tuple[int, dict]]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LogFormatError("empty file", 1) from None
        fixed = ["sample_id", "recording_id", "epoch", "label"]
        if header[: len(fixed)] != fixed or not header[len(fixed) :]:
            raise LogFormatError(
                "header must be sample_id,recording_id,epoch,label,p0,...", 1
            )
        prob_cols = header[len(fixed) :]
        if prob_cols != [f"p{i}" for i in range(len(prob_cols))]:
            raise LogFormatError("probability columns must be named p0..p{C-1}", 1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise LogFormatError(f"expected {len(header)} fields, got {len(row)}", line_no)
            try:
                rec = {
                    "sample_id": row[0],
                    "recording_id": row[1],
                    "epoch": int(row[2]),
                    "probs": [float(v) for v in row[4:]],
                    "label": None if row[3] == "" else int(row[3]),
                }
            except ValueError as exc:
                raise LogFormatError(f"malformed record: {exc}", line_no) from exc
            records.append((line_no, rec))
    return records


def ingest_log(path: str | Path, format: Literal["jsonl", "csv"] = "jsonl") -> DynamicsLog:
    """Read and validate a dynamics log file.

    Raises LogFormatError (with a line number where applicable) on malformed
    records, inconsistent class counts, probability vectors that do not sum
    to one, or samples with missing epochs.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format == "jsonl":
        records = _parse_jsonl(path)
    elif format == "csv":
        records = _parse_csv(path)
    else:
        raise ValueError(f"unknown format {format!r}")
    return _assemble(records)


@dataclass(frozen=True)
class SampleUncertainty:
    """Per-sample uncertainty summary derived from training dynamics.

    ``confidence`` is the mean probability of the sample's own label across
    training epochs; ``v_ep`` is the variance of that probability over epochs
    and ``v_al`` the mean per-epoch Bernoulli variance, so that
    v_ep + v_al == confidence * (1 - confidence) holds exactly.  The entropy
    variants are label-free: ``v_al_entropy`` is the mean per-epoch output
    entropy and ``v_ep_entropy`` the entropy of the epoch-mean distribution
    minus that mean.  All entropies are in nats.
    """

    sample_id: str
    confidence: float
    v_al: float
    v_ep: float
    v_al_entropy: float
    v_ep_entropy: float
    stratum: str = "other"


def _entropy_parts(log: DynamicsLog) -> tuple[np.ndarray, np.ndarray]:
    per_epoch = entropy(log.probs, axis=2)  # (N, E)
    v_al_ent = per_epoch.mean(axis=1)
    mean_dist = log.probs.mean(axis=1)  # (N, C)
    v_ep_ent = entropy(mean_dist, axis=1) - v_al_ent
    return v_al_ent, v_ep_ent


def sample_metrics(log: DynamicsLog) -> list[SampleUncertainty]:
    """Compute confidence and the variance- and entropy-form uncertainties.

    Requires every sample to carry a label (the variance-form metrics track
    the probability assigned to the sample's own label).
    """
    if not log.has_labels:
        missing = [s for s, l in zip(log.sample_ids, log.labels) if l < 0]
        raise ValueError(f"samples missing a label: {missing[:5]}")
    n = log.num_samples
    true_prob = log.probs[np.arange(n), :, log.labels]  # (N, E)
    conf = true_prob.mean(axis=1)
    v_ep = ((true_prob - conf[:, None]) ** 2).mean(axis=1)
    v_al = (true_prob * (1.0 - true_prob)).mean(axis=1)
    v_al_ent, v_ep_ent = _entropy_parts(log)
    return [
        SampleUncertainty(
            sample_id=sid,
            confidence=float(conf[i]),
            v_al=float(v_al[i]),
            v_ep=float(v_ep[i]),
            v_al_entropy=float(v_al_ent[i]),
            v_ep_entropy=float(v_ep_ent[i]),
        )
        for i, sid in enumerate(log.sample_ids)
    ]


def sample_metrics_entropy(log: DynamicsLog) -> list[tuple[str, float, float]]:
    """Label-free entropy decomposition: (sample_id, v_al_entropy, v_ep_entropy)."""
    v_al_ent, v_ep_ent = _entropy_parts(log)
    return [
        (sid, float(v_al_ent[i]), float(v_ep_ent[i]))
        for i, sid in enumerate(log.sample_ids)
    ]


def _quota(n: int, pct: float) -> int:
    return math.ceil(n * pct / 100.0)


def stratify(
    metrics: list[SampleUncertainty],
    ambiguity_kind: Literal["aleatoric", "epistemic"] = "aleatoric",
    top_pct: float = 1.0,
    easy_hard_pct: float = 1.0,
) -> dict[str, str]:
    """Assign each sample to a stratum; returns sample_id -> stratum.

    The ceil(N*top_pct/100) samples with the highest chosen ambiguity are
    tagged data_ambiguous / model_ambiguous.  Among the rest, the
    ceil(N*easy_hard_pct/100) highest (confidence - v) become easy and the
    same count of highest (-confidence - v) become hard; everything else is
    "other".  Ties break by ascending sample_id, and easy is assigned before
    hard so fully tied inputs still yield disjoint strata.
    """
    if not 0 < top_pct <= 100:
        raise ValueError("top_pct must be in (0, 100]")
    if not 0 < easy_hard_pct <= 100:
        raise ValueError("easy_hard_pct must be in (0, 100]")
    if ambiguity_kind == "aleatoric":
        value = lambda m: m.v_al
        amb_stratum = "data_ambiguous"
    elif ambiguity_kind == "epistemic":
        value = lambda m: m.v_ep
        amb_stratum = "model_ambiguous"
    else:
        raise ValueError(f"unknown ambiguity_kind {ambiguity_kind!r}")

    n = len(metrics)
    if n == 0:
        raise ValueError("no metrics to stratify")
    k_amb = _quota(n, top_pct)
    k_eh = _quota(n, easy_hard_pct)
    if k_amb + 2 * k_eh > n:
        raise ValueError(
            f"strata quotas exceed sample count: {k_amb} ambiguous + 2*{k_eh} easy/hard > {n}"
        )

    by_ambiguity = sorted(metrics, key=lambda m: (-value(m), m.sample_id))
    ambiguous = by_ambiguity[:k_amb]
    rest = by_ambiguity[k_amb:]
    easy = sorted(rest, key=lambda m: (-(m.confidence - value(m)), m.sample_id))[:k_eh]
    easy_ids = {m.sample_id for m in easy}
    hard_pool = [m for m in rest if m.sample_id not in easy_ids]
    hard = sorted(hard_pool, key=lambda m: (m.confidence + value(m), m.sample_id))[:k_eh]

    strata = {m.sample_id: "other" for m in metrics}
    for m in ambiguous:
        strata[m.sample_id] = amb_stratum
    for m in easy:
        strata[m.sample_id] = "easy"
    for m in hard:
        strata[m.sample_id] = "hard"
    return strata


def apply_strata(
    metrics: list[SampleUncertainty], strata: Mapping[str, str]
) -> list[SampleUncertainty]:
    """Return a copy of the metrics with stratum tags filled in."""
    return [replace(m, stratum=strata.get(m.sample_id, m.stratum)) for m in metrics]


METRICS_CSV_HEADER = ["sample_id", "c", "v_al", "v_ep", "v_al_entropy", "v_ep_entropy", "stratum"]


def write_metrics_csv(metrics: list[SampleUncertainty], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_HEADER)
        for m in metrics:
            writer.writerow(
                [
                    m.sample_id,
                    repr(m.confidence),
                    repr(m.v_al),
                    repr(m.v_ep),
                    repr(m.v_al_entropy),
                    repr(m.v_ep_entropy),
                    m.stratum,
                ]
            )


def read_metrics_csv(path: str | Path) -> list[SampleUncertainty]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != METRICS_CSV_HEADER:
            raise LogFormatError(f"unexpected metrics header {header}", 1)
        return [
            SampleUncertainty(
                sample_id=row[0],
                confidence=float(row[1]),
                v_al=float(row[2]),
                v_ep=float(row[3]),
                v_al_entropy=float(row[4]),
                v_ep_entropy=float(row[5]),
                stratum=row[6],
            )
            for row in reader
            if row
        ]
