"""End-to-end pipeline orchestration and staged-accuracy reporting.

Stages run in the fixed order collect -> select -> active -> defer.  Every
stage writes its artifacts plus a machine-readable StageReport, and the final
summary lists the headline accuracy after each executed stage.  Stage outputs
are pure functions of (inputs, config, seeds), so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import benchmark as bm
from .active import (
    FineTuneTrainer,
    SelfTrainingAdapter,
    SimulatedOracle,
    new_session,
    rank_recordings,
    run_al_session,
)
from .curation import compare_configs, select_data
from .deferral import (
    METRIC_IDS,
    explain,
    pick_threshold,
    retention_curve,
    score,
    write_scores_csv,
)
from .dynamics import (
    apply_strata,
    ingest_log,
    sample_metrics,
    stratify,
    write_metrics_csv,
)
from .neighbors import build_index
from .refmodel import (
    FeatureTable,
    ModelCheckpoint,
    embed,
    forward_proba,
    project_2d,
    train_logged,
)
from .svgplot import write_line_plot

__all__ = [
    "ConfigError",
    "PipelineConfig",
    "StageReport",
    "STAGES",
    "run_pipeline",
]

STAGES = ("collect", "select", "active", "defer")


class ConfigError(ValueError):
    """Invalid configuration or missing stage inputs (CLI exit code 2)."""


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline knobs; defaults follow the reference experiment values."""

    seed: int = 0
    out_dir: str = "upass-out"
    top_pct: float = 1.0
    easy_hard_pct: float = 1.0
    drop_pct: float = 1.0
    select_pct: float = 40.0
    batch_pct: float = 1.0
    epochs: int = 10
    n_neighbors: int = 20
    metric_id: str = "wknn_confidence"
    target_accuracy: float = 0.85
    z_step: float = 0.01
    train_features: str | None = None  # path; defaults to the bundled benchmark
    test_features: str | None = None
    dynamics_log: str | None = None  # lets `select` run standalone on a log file
    configs: dict[str, list[int]] | None = None  # feature columns per named setup
    logging_hyperparams: dict = field(default_factory=lambda: dict(bm.LOGGING_HYPERPARAMS))
    eval_hyperparams: dict = field(default_factory=lambda: dict(bm.EVAL_HYPERPARAMS))
    finetune_params: dict = field(default_factory=lambda: dict(bm.FINETUNE_PARAMS))
    adapt_params: dict = field(default_factory=lambda: dict(bm.ADAPT_PARAMS))

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)

    def validate(self) -> None:
        for name, value, lo, hi in (
            ("top_pct", self.top_pct, 0.0, 100.0),
            ("select_pct", self.select_pct, 0.0, 100.0),
            ("batch_pct", self.batch_pct, 0.0, 100.0),
        ):
            if not lo < value <= hi:
                raise ConfigError(f"{name} must be in ({lo}, {hi}]")
        if not 0 <= self.drop_pct < 100:
            raise ConfigError("drop_pct must be in [0, 100)")
        if not 0 < self.target_accuracy <= 1:
            raise ConfigError("target_accuracy must be in (0, 1]")
        if self.epochs < 2:
            raise ConfigError("epochs must be >= 2")
        if self.metric_id not in METRIC_IDS:
            raise ConfigError(f"unknown metric_id {self.metric_id!r}")
        for path in (self.train_features, self.test_features, self.dynamics_log):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"input path does not exist: {path}")

    @property
    def z_grid(self) -> list[float]:
        steps = int(round(1.0 / self.z_step))
        return [round((k + 1) * self.z_step, 10) for k in range(steps)]


@dataclass(frozen=True)
class StageReport:
    stage: str
    headline_accuracy: float | None
    parameters: dict
    artifacts: tuple[str, ...]

    def to_jsonable(self) -> dict:
        return {
            "stage": self.stage,
            "headline_accuracy": self.headline_accuracy,
            "parameters": self.parameters,
            "artifacts": list(self.artifacts),
        }


OUTPUTS_CSV_FIELDS = ["sample_id", "recording_id"]


def write_outputs_csv(path: Path, sample_ids, recording_ids, probs: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(OUTPUTS_CSV_FIELDS + [f"p{i}" for i in range(probs.shape[1])])
        for i, sid in enumerate(sample_ids):
            writer.writerow([sid, recording_ids[i]] + [repr(float(v)) for v in probs[i]])


def read_outputs_csv(path: str | Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [row for row in reader if row]
    ids = tuple(r[0] for r in rows)
    rids = tuple(r[1] for r in rows)
    probs = np.array([[float(v) for v in r[2:]] for r in rows], dtype=float)
    return ids, rids, probs


def _write_ranking_csv(path: Path, ranking) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording_id", "v_ep_entropy", "rank", "selected"])
        for r in ranking:
            writer.writerow([r.recording_id, repr(r.v_ep_entropy), r.rank, int(r.selected)])


def _write_coords_csv(path: Path, sample_ids, coords: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "x", "y"])
        for sid, (x, y) in zip(sample_ids, coords):
            writer.writerow([sid, repr(float(x)), repr(float(y))])


class _Run:
    """Mutable working state threaded through the stage functions."""

    def __init__(self, config: PipelineConfig, stages: Sequence[str]):
        self.config = config
        self.stages = stages
        self.out = Path(os.environ.get("UPASS_OUT") or config.out_dir)
        self.train: FeatureTable | None = None
        self.test: FeatureTable | None = None
        self.chosen_columns: list[int] | None = None
        self.base_checkpoint: ModelCheckpoint | None = None
        self.kept_ids: tuple[str, ...] | None = None
        self.metrics = None
        self.test_outputs: np.ndarray | None = None
        self.queried_ids: set[str] = set()
        self.reports: list[StageReport] = []

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def rel(self, p: Path) -> str:
        return str(p.relative_to(self.out))


def _load_data(run: _Run) -> None:
    cfg = run.config
    bench = run.path("benchmark")
    bench.mkdir(parents=True, exist_ok=True)
    if cfg.train_features:
        run.train = FeatureTable.from_csv(cfg.train_features)
    else:
        run.train = bm.benchmark_train(cfg.seed).to_table()
    if cfg.test_features:
        run.test = FeatureTable.from_csv(cfg.test_features)
    else:
        run.test = bm.benchmark_test(cfg.seed).to_table()
    run.train.to_csv(bench / "train_features.csv")
    run.test.to_csv(bench / "test_features.csv")
    if run.train.labels is None:
        raise ConfigError("training features must be labeled")


def _eval_accuracy(checkpoint: ModelCheckpoint, table: FeatureTable, columns=None) -> float:
    feats = table.features if columns is None else table.features[:, columns]
    probs = forward_proba(checkpoint.params, feats)
    return float((probs.argmax(1) == table.labels).mean())


def _configs(run: _Run) -> dict[str, list[int]]:
    if run.config.configs:
        return dict(run.config.configs)
    dims = run.train.features.shape[1]
    if dims == len(bm.CHANNEL_CONFIGS["three_channels"]):
        return dict(bm.CHANNEL_CONFIGS)
    return {"all_features": list(range(dims))}


def _stage_collect(run: _Run) -> StageReport:
    cfg = run.config
    configs = _configs(run)
    logs, accuracy = [], {}
    log_paths = []
    for name in sorted(configs):
        cols = configs[name]
        table = run.train.columns(cols)
        log, checkpoints = train_logged(table, cfg.epochs, cfg.eval_hyperparams, cfg.seed)
        logs.append((name, log))
        accuracy[name] = _eval_accuracy(checkpoints[-1], run.test, cols)
        p = run.path(f"collect/logs/{name}.jsonl")
        log.to_jsonl(p)
        log_paths.append(run.rel(p))
    reports = compare_configs(logs, test_accuracy=accuracy)
    chosen = reports[0]
    run.chosen_columns = configs[chosen.config_id]
    reports_path = run.path("collect/config_reports.json")
    reports_path.write_text(
        canonical_json(
            {
                "chosen": chosen.config_id,
                "reports": [asdict(r) for r in reports],
            }
        )
    )
    return StageReport(
        stage="collect",
        headline_accuracy=chosen.test_accuracy,
        parameters={
            "configs": {k: configs[k] for k in sorted(configs)},
            "chosen": chosen.config_id,
            "mean_v_al": {r.config_id: r.mean_v_al for r in reports},
        },
        artifacts=tuple([run.rel(reports_path)] + log_paths),
    )


def _stage_select(run: _Run) -> StageReport:
    cfg = run.config
    cols = run.chosen_columns
    if cfg.dynamics_log is not None:
        log = ingest_log(cfg.dynamics_log, "jsonl")
    else:
        table = run.train if cols is None else run.train.columns(cols)
        log, _ = train_logged(table, cfg.epochs, cfg.logging_hyperparams, cfg.seed)
    metrics = sample_metrics(log)
    strata = stratify(metrics, "aleatoric", cfg.top_pct, cfg.easy_hard_pct)
    metrics = apply_strata(metrics, strata)
    run.metrics = metrics
    metrics_path = run.path("select/metrics.csv")
    write_metrics_csv(metrics, metrics_path)

    manifest = select_data(metrics, cfg.drop_pct, source_digest=log.digest())
    manifest_path = run.path("select/manifest.json")
    manifest.to_json(manifest_path)
    run.kept_ids = manifest.kept

    artifacts = [run.rel(metrics_path), run.rel(manifest_path)]
    headline = None
    baseline = None
    if run.train is not None and set(manifest.kept) <= set(run.train.sample_ids):
        table = run.train if cols is None else run.train.columns(cols)
        kept_table = table.subset(manifest.kept)
        _, checkpoints = train_logged(kept_table, cfg.epochs, cfg.eval_hyperparams, cfg.seed)
        run.base_checkpoint = checkpoints[-1]
        model_path = run.path("select/model.json")
        checkpoints[-1].save(model_path)
        artifacts.append(run.rel(model_path))
        if run.test is not None and run.test.labels is not None:
            test_table = run.test if cols is None else run.test.columns(cols)
            headline = _eval_accuracy(checkpoints[-1], test_table)
            _, base_cps = train_logged(table, cfg.epochs, cfg.eval_hyperparams, cfg.seed)
            baseline = _eval_accuracy(base_cps[-1], test_table)
        emb = embed(checkpoints[-1], kept_table.features, kept_table.sample_ids)
        coords_path = run.path("select/train_coords.csv")
        _write_coords_csv(coords_path, emb.sample_ids, project_2d(emb))
        artifacts.append(run.rel(coords_path))
    return StageReport(
        stage="select",
        headline_accuracy=headline,
        parameters={
            "drop_pct": cfg.drop_pct,
            "dropped": len(manifest.dropped),
            "kept": len(manifest.kept),
            "baseline_accuracy": baseline,
            "source_digest": manifest.source_digest,
        },
        artifacts=tuple(artifacts),
    )


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _base_checkpoint(run: _Run) -> ModelCheckpoint:
    if run.base_checkpoint is None:
        table = run.train if run.chosen_columns is None else run.train.columns(run.chosen_columns)
        _, checkpoints = train_logged(
            table, run.config.epochs, run.config.eval_hyperparams, run.config.seed
        )
        run.base_checkpoint = checkpoints[-1]
    return run.base_checkpoint


def _test_table(run: _Run) -> FeatureTable:
    return run.test if run.chosen_columns is None else run.test.columns(run.chosen_columns)


def _stage_active(run: _Run) -> StageReport:
    cfg = run.config
    _require(run.test is not None, "active stage needs test features")
    _require(run.test.labels is not None, "active stage needs a labeled (simulation) test set")
    checkpoint = _base_checkpoint(run)
    test_table = _test_table(run)
    groups = test_table.group_by_recording()

    adapt_logs = {
        rid: SelfTrainingAdapter(tbl, checkpoint, **cfg.adapt_params).adaptation_log(cfg.epochs)
        for rid, tbl in groups.items()
    }
    ranking = rank_recordings(adapt_logs, cfg.select_pct)
    ranking_path = run.path("active/ranking.csv")
    _write_ranking_csv(ranking_path, ranking)

    outputs = forward_proba(checkpoint.params, test_table.features)
    row_of = {sid: i for i, sid in enumerate(test_table.sample_ids)}
    truth = {sid: int(l) for sid, l in zip(test_table.sample_ids, test_table.labels)}
    artifacts = [run.rel(ranking_path)]
    session_paths = []
    for r in ranking:
        if not r.selected:
            continue
        tbl = groups[r.recording_id]
        trainer = FineTuneTrainer(tbl, checkpoint, **cfg.finetune_params)
        session = new_session(
            r.recording_id, tbl.sample_ids, trainer, total_epochs=cfg.epochs, batch_pct=cfg.batch_pct
        )
        session = run_al_session(session, trainer, SimulatedOracle(truth))
        for j, sid in enumerate(tbl.sample_ids):
            outputs[row_of[sid]] = session.outputs[j]
        run.queried_ids.update(session.labeled)
        p = run.path(f"active/sessions/{r.recording_id}.json")
        session.to_json(p)
        session_paths.append(run.rel(p))

    run.test_outputs = outputs
    outputs_path = run.path("active/outputs.csv")
    write_outputs_csv(outputs_path, test_table.sample_ids, test_table.recording_ids, outputs)
    artifacts.append(run.rel(outputs_path))
    artifacts.extend(session_paths)

    labels = np.asarray(test_table.labels)
    correct = outputs.argmax(1) == labels
    not_queried = np.array([sid not in run.queried_ids for sid in test_table.sample_ids])
    acc_all = float(correct.mean())
    acc_excl = float(correct[not_queried].mean()) if not_queried.any() else acc_all
    return StageReport(
        stage="active",
        headline_accuracy=acc_all,
        parameters={
            "select_pct": cfg.select_pct,
            "batch_pct": cfg.batch_pct,
            "epochs": cfg.epochs,
            "selected_recordings": [r.recording_id for r in ranking if r.selected],
            "accuracy_excluding_queried": acc_excl,
            "queried_samples": len(run.queried_ids),
        },
        artifacts=tuple(artifacts),
    )


def _stage_defer(run: _Run) -> StageReport:
    cfg = run.config
    _require(run.test is not None, "defer stage needs test features")
    _require(run.test.labels is not None, "defer stage needs a labeled (simulation) test set")
    checkpoint = _base_checkpoint(run)
    test_table = _test_table(run)
    train_table = run.train if run.chosen_columns is None else run.train.columns(run.chosen_columns)
    if run.kept_ids is not None:
        train_table = train_table.subset(run.kept_ids)
    if run.metrics is None:
        log, _ = train_logged(train_table, cfg.epochs, cfg.logging_hyperparams, cfg.seed)
        run.metrics = sample_metrics(log)
    by_id = {m.sample_id: m for m in run.metrics}
    _require(
        set(train_table.sample_ids) <= set(by_id),
        "defer stage needs training metrics covering the training samples",
    )

    emb_train = embed(checkpoint, train_table.features, train_table.sample_ids)
    emb_test = embed(checkpoint, test_table.features, test_table.sample_ids)
    attachments = {
        "confidence": [by_id[s].confidence for s in train_table.sample_ids],
        "v_al": [by_id[s].v_al for s in train_table.sample_ids],
        "v_ep": [by_id[s].v_ep for s in train_table.sample_ids],
        "label": train_table.labels,
    }
    index = build_index(emb_train, attachments)

    if run.test_outputs is None:
        run.test_outputs = forward_proba(checkpoint.params, test_table.features)
    outputs = run.test_outputs
    labels = np.asarray(test_table.labels)
    preds = outputs.argmax(1)
    correctness = {sid: bool(preds[i] == labels[i]) for i, sid in enumerate(test_table.sample_ids)}

    artifacts = []
    scores_by_metric = {}
    for metric in METRIC_IDS:
        sc = score(
            metric,
            test_table.sample_ids,
            outputs=outputs,
            embeddings=emb_test.vectors,
            index=index,
            n=cfg.n_neighbors,
        )
        scores_by_metric[metric] = sc
        p = run.path(f"defer/scores/{metric}.csv")
        write_scores_csv(sc, p)
        artifacts.append(run.rel(p))
    chosen_scores = scores_by_metric[cfg.metric_id]
    scores_path = run.path("defer/scores.csv")
    write_scores_csv(chosen_scores, scores_path)
    artifacts.insert(0, run.rel(scores_path))

    grid = cfg.z_grid
    curve = retention_curve(chosen_scores, correctness, grid)
    curve_unc = retention_curve(chosen_scores, correctness, grid, most_uncertain=True)
    curve_path = run.path("defer/curve.csv")
    curve.to_csv(curve_path)
    curve_unc_path = run.path("defer/curve_uncertain.csv")
    curve_unc.to_csv(curve_unc_path)
    svg_path = run.path("defer/curve.svg")
    write_line_plot(
        svg_path,
        [p.retained_fraction for p in curve.points],
        [p.accuracy for p in curve.points],
        xlabel="retained fraction (most certain)",
        ylabel="accuracy",
        title=f"retention curve: {cfg.metric_id}",
    )
    artifacts += [run.rel(curve_path), run.rel(curve_unc_path), run.rel(svg_path)]

    pick = pick_threshold(curve, cfg.target_accuracy)
    overall = float(np.mean(list(correctness.values())))
    threshold_payload = {
        "metric_id": cfg.metric_id,
        "target_accuracy": cfg.target_accuracy,
        "overall_accuracy": overall,
    }
    if pick is None:
        threshold_payload["result"] = "unreachable"
        headline = overall
    else:
        threshold_payload["result"] = {
            "retained_fraction": pick.retained_fraction,
            "score_threshold": pick.score_threshold,
            "accuracy": pick.accuracy,
            "deferred_fraction": round(1.0 - pick.retained_fraction, 10),
        }
        headline = pick.accuracy
    # both correctness variants: including and excluding actively queried samples
    if run.queried_ids:
        kept_mask = [s.sample_id not in run.queried_ids for s in chosen_scores]
        sub_scores = [s for s, keep in zip(chosen_scores, kept_mask) if keep]
        sub_curve = retention_curve(sub_scores, correctness, grid)
        sub_pick = pick_threshold(sub_curve, cfg.target_accuracy)
        threshold_payload["excluding_queried"] = (
            "unreachable"
            if sub_pick is None
            else {
                "retained_fraction": sub_pick.retained_fraction,
                "accuracy": sub_pick.accuracy,
            }
        )
    threshold_path = run.path("defer/threshold.json")
    threshold_path.write_text(canonical_json(threshold_payload))
    artifacts.append(run.rel(threshold_path))

    rec_of = {sid: rid for sid, rid in zip(test_table.sample_ids, test_table.recording_ids)}
    report = explain(chosen_scores, rec_of, correctness) if cfg.metric_id not in ("output_entropy", "max_prob") else None
    if report is not None:
        explain_path = run.path("defer/explain.json")
        explain_path.write_text(
            canonical_json(
                {
                    "recordings": [asdict(r) for r in report.recordings],
                    "spearman_accuracy_vs_distance": report.corr_distance,
                    "spearman_accuracy_vs_neighbor_confidence": report.corr_confidence,
                    "notice": report.notice,
                }
            )
        )
        artifacts.append(run.rel(explain_path))

    coords_path = run.path("defer/coords.csv")
    _write_coords_csv(coords_path, emb_test.sample_ids, project_2d(emb_test))
    artifacts.append(run.rel(coords_path))

    pred_path = run.path("defer/predictions.csv")
    with open(pred_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "recording_id", "prediction", "label", "correct"])
        for i, sid in enumerate(test_table.sample_ids):
            writer.writerow(
                [sid, test_table.recording_ids[i], int(preds[i]), int(labels[i]), int(preds[i] == labels[i])]
            )
    artifacts.append(run.rel(pred_path))

    return StageReport(
        stage="defer",
        headline_accuracy=headline,
        parameters=threshold_payload,
        artifacts=tuple(artifacts),
    )


_STAGE_FUNCS = {
    "collect": _stage_collect,
    "select": _stage_select,
    "active": _stage_active,
    "defer": _stage_defer,
}


def _write_workspace(run: _Run) -> None:
    cfg = run.config
    by_stage = {r.stage: r for r in run.reports}
    workspace = {
        "simulation": True,
        "seed": cfg.seed,
        "train_features": "benchmark/train_features.csv",
        "test_features": "benchmark/test_features.csv",
        "al_params": {
            "total_epochs": cfg.epochs,
            "batch_pct": cfg.batch_pct,
            "finetune": cfg.finetune_params,
        },
        "defer_params": {"metric_id": cfg.metric_id, "z": 0.2},
        "chosen_columns": run.chosen_columns,
    }
    if "select" in by_stage:
        workspace["model"] = "select/model.json"
        workspace["metrics"] = "select/metrics.csv"
    if "active" in by_stage:
        workspace["outputs"] = "active/outputs.csv"
        workspace["ranking"] = "active/ranking.csv"
    if "defer" in by_stage:
        workspace["scores"] = "defer/scores.csv"
        workspace["coords"] = "defer/coords.csv"
        workspace["predictions"] = "defer/predictions.csv"
        pick = by_stage["defer"].parameters.get("result")
        if isinstance(pick, dict):
            workspace["defer_params"]["z"] = pick["deferred_fraction"]
    run.path("workspace.json").write_text(canonical_json(workspace))


def run_pipeline(config: PipelineConfig, stages: Sequence[str] | None = None) -> list[StageReport]:
    """Execute the requested stages in order and write artifacts plus summary."""
    config.validate()
    stages = list(stages or STAGES)
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown stages: {sorted(unknown)}")
    ordered = [s for s in STAGES if s in stages]

    run = _Run(config, ordered)
    run.out.mkdir(parents=True, exist_ok=True)
    _load_data(run)
    for stage in ordered:
        run.reports.append(_STAGE_FUNCS[stage](run))

    summary = {
        "config": {
            "seed": config.seed,
            "stages": ordered,
            "top_pct": config.top_pct,
            "drop_pct": config.drop_pct,
            "select_pct": config.select_pct,
            "batch_pct": config.batch_pct,
            "epochs": config.epochs,
            "n_neighbors": config.n_neighbors,
            "metric_id": config.metric_id,
            "target_accuracy": config.target_accuracy,
        },
        "staged_accuracy": {r.stage: r.headline_accuracy for r in run.reports},
        "reports": [r.to_jsonable() for r in run.reports],
    }
    run.path("summary.json").write_text(canonical_json(summary))
    _write_workspace(run)
    return run.reports
