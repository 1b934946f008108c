"""Dataset curation: configuration comparison and ambiguity-based selection.

Two uses of the per-sample data-uncertainty signal: ranking candidate
measurement configurations by aggregate uncertainty, and emitting training
manifests that drop the most data-ambiguous samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .dynamics import DynamicsLog, SampleUncertainty, sample_metrics

__all__ = [
    "ConfigReport",
    "SelectionManifest",
    "compare_configs",
    "select_data",
]


@dataclass(frozen=True)
class ConfigReport:
    """Aggregate uncertainty of one measurement configuration's training run."""

    config_id: str
    mean_confidence: float
    mean_v_al: float
    num_samples: int
    test_accuracy: float | None = None


def compare_configs(
    inputs: list[tuple[str, DynamicsLog]],
    test_accuracy: dict[str, float] | None = None,
) -> list[ConfigReport]:
    """Summarize each configuration's log; sorted ascending by mean data uncertainty.

    A lower mean v_al means the configuration's signals leave less irreducible
    ambiguity in the training data.  Ties break by config_id.
    """
    if not inputs:
        raise ValueError("at least one configuration required")
    reports = []
    for config_id, log in inputs:
        metrics = sample_metrics(log)  # raises when the log is unlabeled
        n = len(metrics)
        reports.append(
            ConfigReport(
                config_id=config_id,
                mean_confidence=math.fsum(m.confidence for m in metrics) / n,
                mean_v_al=math.fsum(m.v_al for m in metrics) / n,
                num_samples=n,
                test_accuracy=(test_accuracy or {}).get(config_id),
            )
        )
    return sorted(reports, key=lambda r: (r.mean_v_al, r.config_id))


@dataclass(frozen=True)
class SelectionManifest:
    """Which samples to keep and which to drop, with provenance.

    ``source_digest`` ties the manifest to the log (or metrics file) it was
    derived from so stale manifests can be detected.
    """

    kept: tuple[str, ...]
    dropped: tuple[str, ...]
    drop_pct: float
    ranking_metric: str = "v_al"
    source_digest: str = ""

    def to_json(self, path: str | Path) -> None:
        payload = {
            "drop_pct": self.drop_pct,
            "ranking_metric": self.ranking_metric,
            "source_digest": self.source_digest,
            "kept": list(self.kept),
            "dropped": list(self.dropped),
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "SelectionManifest":
        payload = json.loads(Path(path).read_text())
        return cls(
            kept=tuple(payload["kept"]),
            dropped=tuple(payload["dropped"]),
            drop_pct=float(payload["drop_pct"]),
            ranking_metric=payload["ranking_metric"],
            source_digest=payload["source_digest"],
        )

    def matches(self, digest: str) -> bool:
        return self.source_digest == digest


def select_data(
    metrics: list[SampleUncertainty],
    drop_pct: float,
    ranking_metric: str = "v_al",
    source_digest: str = "",
) -> SelectionManifest:
    """Drop the ceil(N*drop_pct/100) samples with the highest data uncertainty.

    ``ranking_metric`` defaults to the variance-form v_al; the entropy form is
    available as "v_al_entropy" for experimentation.  Ties break by ascending
    sample_id so manifests are reproducible bit-exactly.
    """
    if not metrics:
        raise ValueError("empty metrics list")
    if not 0 <= drop_pct < 100:
        raise ValueError("drop_pct must be in [0, 100)")
    if ranking_metric == "v_al":
        value = lambda m: m.v_al
    elif ranking_metric == "v_al_entropy":
        value = lambda m: m.v_al_entropy
    else:
        raise ValueError(f"unknown ranking metric {ranking_metric!r}")

    k = math.ceil(len(metrics) * drop_pct / 100.0)
    ranked = sorted(metrics, key=lambda m: (-value(m), m.sample_id))
    dropped = {m.sample_id for m in ranked[:k]}
    return SelectionManifest(
        kept=tuple(m.sample_id for m in metrics if m.sample_id not in dropped),
        dropped=tuple(m.sample_id for m in metrics if m.sample_id in dropped),
        drop_pct=drop_pct,
        ranking_metric=ranking_metric,
        source_digest=source_digest,
    )
