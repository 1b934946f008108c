"""Command-line interface.

Every stage parameter is surfaced as a flag whose default is the reference
experiment value (top-pct 1, drop-pct 1, select-pct 40, batch-pct 1, ten
epochs, target accuracy 0.85).  Exit codes: 0 success, 1 internal failure,
2 missing inputs or invalid configuration.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from .active import (
    FineTuneTrainer,
    SimulatedOracle,
    new_session,
    rank_recordings,
    run_al_session,
)
from .curation import compare_configs, select_data
from .deferral import METRIC_IDS, pick_threshold, retention_curve, score, write_scores_csv
from .dynamics import (
    apply_strata,
    ingest_log,
    read_metrics_csv,
    sample_metrics,
    stratify,
    write_metrics_csv,
)
from .neighbors import build_index
from .pipeline import (
    STAGES,
    ConfigError,
    PipelineConfig,
    canonical_json,
    run_pipeline,
)
from .refmodel import EmbeddingSet, FeatureTable, ModelCheckpoint
from .svgplot import write_line_plot

EXIT_INTERNAL = 1
EXIT_CONFIG = 2


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Map exception classes onto the documented exit codes.

    ConfigError and LogFormatError are ValueError subclasses; any ValueError
    counts as bad input (exit 2), everything else as internal failure (1).
    """

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, FileNotFoundError) as exc:
            _fail(str(exc), EXIT_CONFIG)
        except click.ClickException:
            raise
        except Exception as exc:  # internal failure
            _fail(f"{type(exc).__name__}: {exc}", EXIT_INTERNAL)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.version_option(package_name="upass")
def main():
    """Uncertainty-guided curation, active learning and deferral toolkit."""


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(), help="Log file to validate.")
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl", show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Write the validated log as canonical JSONL.")
@_guarded
def ingest(input_path, fmt, out):
    """Validate a dynamics log and optionally canonicalize it."""
    log = ingest_log(input_path, fmt)
    click.echo(
        f"ok: {log.num_samples} samples x {log.num_epochs} epochs x {log.num_classes} classes"
        f" ({'labeled' if log.has_labels else 'unlabeled'})"
    )
    if out:
        log.to_jsonl(out)
        click.echo(f"wrote {out}")


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl", show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--ambiguity", type=click.Choice(["aleatoric", "epistemic"]), default="aleatoric", show_default=True)
@click.option("--top-pct", default=1.0, show_default=True)
@click.option("--easy-hard-pct", default=1.0, show_default=True)
@_guarded
def metrics(log_path, fmt, out, ambiguity, top_pct, easy_hard_pct):
    """Per-sample uncertainty metrics (with strata) from a labeled dynamics log."""
    log = ingest_log(log_path, fmt)
    values = sample_metrics(log)
    values = apply_strata(values, stratify(values, ambiguity, top_pct, easy_hard_pct))
    write_metrics_csv(values, out)
    click.echo(f"wrote {out} ({len(values)} samples)")


@main.command("stratify")
@click.option("--metrics", "metrics_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--ambiguity", type=click.Choice(["aleatoric", "epistemic"]), default="aleatoric", show_default=True)
@click.option("--top-pct", default=1.0, show_default=True)
@click.option("--easy-hard-pct", default=1.0, show_default=True)
@_guarded
def stratify_cmd(metrics_path, out, ambiguity, top_pct, easy_hard_pct):
    """Re-assign easy/hard/ambiguous strata in a metrics CSV."""
    values = read_metrics_csv(metrics_path)
    values = apply_strata(values, stratify(values, ambiguity, top_pct, easy_hard_pct))
    write_metrics_csv(values, out)
    counts = {}
    for m in values:
        counts[m.stratum] = counts.get(m.stratum, 0) + 1
    click.echo(f"wrote {out} ({json.dumps(counts, sort_keys=True)})")


@main.command()
@click.option(
    "--log",
    "logs",
    multiple=True,
    required=True,
    help="NAME=PATH pair; repeat per configuration.",
)
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl", show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Write the report as JSON.")
@_guarded
def compare(logs, fmt, out):
    """Compare measurement configurations by aggregate data uncertainty."""
    inputs = []
    for item in logs:
        if "=" not in item:
            raise ConfigError(f"--log expects NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        inputs.append((name, ingest_log(path, fmt)))
    reports = compare_configs(inputs)
    for r in reports:
        click.echo(
            f"{r.config_id}: mean_v_al={r.mean_v_al:.6f} mean_confidence={r.mean_confidence:.6f}"
            f" n={r.num_samples}"
        )
    if out:
        from dataclasses import asdict

        Path(out).write_text(canonical_json([asdict(r) for r in reports]))
        click.echo(f"wrote {out}")


@main.command()
@click.option("--metrics", "metrics_path", required=True, type=click.Path())
@click.option("--drop-pct", default=1.0, show_default=True)
@click.option("--ranking-metric", type=click.Choice(["v_al", "v_al_entropy"]), default="v_al", show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option(
    "--sweep",
    default=None,
    help="Comma-separated drop_pct grid; retrains per value and reports test accuracy.",
)
@click.option("--train-features", type=click.Path(), default=None, help="Labeled train feature CSV (sweep only).")
@click.option("--test-features", type=click.Path(), default=None, help="Labeled test feature CSV (sweep only).")
@click.option("--epochs", default=10, show_default=True, help="Training epochs per sweep point.")
@_guarded
def select(metrics_path, drop_pct, ranking_metric, out, sweep, train_features, test_features, epochs):
    """Emit a selection manifest dropping the most data-ambiguous samples.

    With --sweep, additionally retrains the reference model for every grid
    value and reports the accuracy trade-off (no automatic optimum: the curve
    is for a human to read).
    """
    import hashlib

    values = read_metrics_csv(metrics_path)
    digest = hashlib.sha256(Path(metrics_path).read_bytes()).hexdigest()
    manifest = select_data(values, drop_pct, ranking_metric=ranking_metric, source_digest=digest)
    manifest.to_json(out)
    click.echo(f"wrote {out} (dropped {len(manifest.dropped)} of {len(values)})")

    if sweep is None:
        return
    if not (train_features and test_features):
        raise ConfigError("--sweep needs --train-features and --test-features")
    from .benchmark import EVAL_HYPERPARAMS
    from .refmodel import SoftmaxNetClassifier

    train = FeatureTable.from_csv(train_features)
    test = FeatureTable.from_csv(test_features)
    if train.labels is None or test.labels is None:
        raise ConfigError("sweep features must be labeled")
    grid = sorted({float(v) for v in sweep.split(",") if v.strip()})
    rows = []
    for pct in grid:
        kept = set(select_data(values, pct, ranking_metric=ranking_metric).kept)
        subset = train.subset([sid for sid in train.sample_ids if sid in kept])
        clf = SoftmaxNetClassifier(epochs=epochs, random_state=0, **EVAL_HYPERPARAMS)
        clf.fit(subset.features, subset.labels)
        acc = float((clf.predict(test.features) == test.labels).mean())
        rows.append((pct, acc))
        click.echo(f"drop_pct={pct:g}: accuracy={acc:.4f} (kept {len(kept)})")
    sweep_path = Path(out).with_name("sweep.csv")
    with open(sweep_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["drop_pct", "accuracy"])
        for pct, acc in rows:
            writer.writerow([repr(pct), repr(acc)])
    svg_path = Path(out).with_name("sweep.svg")
    write_line_plot(
        svg_path,
        [r[0] for r in rows],
        [r[1] for r in rows],
        xlabel="drop_pct",
        ylabel="test accuracy",
        title="data selection trade-off",
    )
    click.echo(f"wrote {sweep_path} and {svg_path}")


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path(), help="Label-free adaptation dynamics log.")
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl", show_default=True)
@click.option("--select-pct", default=40.0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@_guarded
def rank(log_path, fmt, select_pct, out):
    """Rank recordings by label-free model uncertainty."""
    log = ingest_log(log_path, fmt)
    ranking = rank_recordings(log, select_pct)
    for r in ranking:
        mark = "*" if r.selected else " "
        click.echo(f"{mark} {r.rank:3d} {r.recording_id} v_ep_entropy={r.v_ep_entropy:.6f}")
    if out:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["recording_id", "v_ep_entropy", "rank", "selected"])
            for r in ranking:
                writer.writerow([r.recording_id, repr(r.v_ep_entropy), r.rank, int(r.selected)])
        click.echo(f"wrote {out}")


@main.command()
@click.option("--features", required=True, type=click.Path(), help="Recording feature CSV (labeled for simulation).")
@click.option("--model", "model_path", required=True, type=click.Path(), help="Base model checkpoint JSON.")
@click.option("--epochs", default=10, show_default=True)
@click.option("--batch-pct", default=1.0, show_default=True)
@click.option("--finetune-lr", default=0.05, show_default=True)
@click.option("--finetune-steps", default=5, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Session checkpoint JSON.")
@_guarded
def al(features, model_path, epochs, batch_pct, finetune_lr, finetune_steps, out):
    """Run one recording's active-learning loop with the simulated oracle."""
    table = FeatureTable.from_csv(features)
    if table.labels is None:
        raise ConfigError("simulated active learning needs labeled features")
    checkpoint = ModelCheckpoint.load(model_path)
    trainer = FineTuneTrainer(table, checkpoint, learning_rate=finetune_lr, steps_per_epoch=finetune_steps)
    rid = table.recording_ids[0]
    session = new_session(rid, table.sample_ids, trainer, total_epochs=epochs, batch_pct=batch_pct)
    truth = {sid: int(l) for sid, l in zip(table.sample_ids, table.labels)}
    acc_before = float((session.outputs.argmax(1) == table.labels).mean())
    session = run_al_session(session, trainer, SimulatedOracle(truth))
    acc_after = float((session.outputs.argmax(1) == table.labels).mean())
    session.to_json(out)
    click.echo(
        f"wrote {out} (labeled {len(session.labeled)}/{len(table.sample_ids)},"
        f" accuracy {acc_before:.4f} -> {acc_after:.4f})"
    )


@main.command()
@click.option("--outputs", "outputs_path", type=click.Path(), default=None, help="Test outputs CSV (sample_id,recording_id,p0..).")
@click.option("--test-embeddings", type=click.Path(), default=None)
@click.option("--index-embeddings", type=click.Path(), default=None)
@click.option("--attachments", type=click.Path(), default=None, help="Metrics CSV supplying confidence/v_al/v_ep.")
@click.option("--index-labels", type=click.Path(), default=None, help="Feature CSV supplying index class labels.")
@click.option("--test-features", type=click.Path(), default=None, help="Labeled test feature CSV; enables retention curves and thresholding.")
@click.option("--metric", "metric_id", type=click.Choice(list(METRIC_IDS)), default="wknn_confidence", show_default=True)
@click.option("--n", "n_neighbors", default=20, show_default=True)
@click.option("--target-accuracy", default=0.85, show_default=True)
@click.option("--z-step", default=0.01, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
@_guarded
def defer(
    outputs_path,
    test_embeddings,
    index_embeddings,
    attachments,
    index_labels,
    test_features,
    metric_id,
    n_neighbors,
    target_accuracy,
    z_step,
    out_dir,
):
    """Score test samples, build retention curves and pick a deferral threshold."""
    from .pipeline import read_outputs_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if outputs_path is None:
        raise ConfigError("--outputs is required")
    sample_ids, rec_ids, probs = read_outputs_csv(outputs_path)

    emb = None
    index = None
    if metric_id not in ("output_entropy", "max_prob"):
        if not (test_embeddings and index_embeddings):
            raise ConfigError(f"metric {metric_id} needs --test-embeddings and --index-embeddings")
        emb = EmbeddingSet.from_csv(test_embeddings)
        index_emb = EmbeddingSet.from_csv(index_embeddings)
        att = {}
        if attachments:
            values = read_metrics_csv(attachments)
            by_id = {m.sample_id: m for m in values}
            missing = [s for s in index_emb.sample_ids if s not in by_id]
            if missing:
                raise ConfigError(f"attachments missing for {missing[:5]}")
            att["confidence"] = [by_id[s].confidence for s in index_emb.sample_ids]
            att["v_al"] = [by_id[s].v_al for s in index_emb.sample_ids]
            att["v_ep"] = [by_id[s].v_ep for s in index_emb.sample_ids]
        if index_labels:
            table = FeatureTable.from_csv(index_labels)
            label_of = {s: int(l) for s, l in zip(table.sample_ids, table.labels)}
            att["label"] = [label_of[s] for s in index_emb.sample_ids]
        index = build_index(index_emb, att or None)

    scores = score(
        metric_id,
        sample_ids,
        outputs=probs,
        embeddings=None if emb is None else emb.vectors,
        index=index,
        n=n_neighbors,
    )
    write_scores_csv(scores, out / "scores.csv")
    click.echo(f"wrote {out / 'scores.csv'}")

    if test_features:
        table = FeatureTable.from_csv(test_features)
        if table.labels is None:
            raise ConfigError("--test-features must be labeled to evaluate retention")
        label_of = {sid: int(l) for sid, l in zip(table.sample_ids, table.labels)}
        missing = [sid for sid in sample_ids if sid not in label_of]
        if missing:
            raise ConfigError(f"test features missing labels for {missing[:5]}")
        correctness = {
            sid: int(probs[i].argmax()) == label_of[sid] for i, sid in enumerate(sample_ids)
        }
        steps = int(round(1.0 / z_step))
        grid = [round((k + 1) * z_step, 10) for k in range(steps)]
        curve = retention_curve(scores, correctness, grid)
        curve.to_csv(out / "curve.csv")
        retention_curve(scores, correctness, grid, most_uncertain=True).to_csv(
            out / "curve_uncertain.csv"
        )
        write_line_plot(
            out / "curve.svg",
            [p.retained_fraction for p in curve.points],
            [p.accuracy for p in curve.points],
            xlabel="retained fraction (most certain)",
            ylabel="accuracy",
            title=f"retention curve: {metric_id}",
        )
        pick = pick_threshold(curve, target_accuracy)
        payload = {
            "metric_id": metric_id,
            "target_accuracy": target_accuracy,
            "result": "unreachable"
            if pick is None
            else {
                "retained_fraction": pick.retained_fraction,
                "score_threshold": pick.score_threshold,
                "accuracy": pick.accuracy,
            },
        }
        (out / "threshold.json").write_text(canonical_json(payload))
        click.echo(f"wrote {out / 'curve.csv'}, {out / 'curve.svg'}, {out / 'threshold.json'}")
        if pick is None:
            click.echo("target accuracy unreachable on the score grid")
        else:
            click.echo(
                f"retain {pick.retained_fraction:.2f} (defer {1 - pick.retained_fraction:.2f})"
                f" at accuracy {pick.accuracy:.4f}"
            )


@main.command()
@click.option("--run-dir", required=True, type=click.Path(), help="Pipeline output directory.")
@_guarded
def report(run_dir):
    """Print the staged-accuracy summary of a pipeline run."""
    summary_path = Path(run_dir) / "summary.json"
    if not summary_path.exists():
        raise ConfigError(f"no summary.json under {run_dir}")
    summary = json.loads(summary_path.read_text())
    click.echo("stage      accuracy")
    for stage in STAGES:
        if stage in summary["staged_accuracy"]:
            acc = summary["staged_accuracy"][stage]
            shown = "n/a" if acc is None else f"{acc:.4f}"
            click.echo(f"{stage:<10s} {shown}")
    for rep in summary["reports"]:
        if rep["stage"] == "defer" and rep["parameters"].get("result") == "unreachable":
            click.echo("defer: target accuracy unreachable on the score grid")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None, help="Pipeline config JSON.")
@click.option("--stages", default=",".join(STAGES), show_default=True, help="Comma-separated stage subset.")
@click.option("--out-dir", default=None, help="Output directory (overrides config; UPASS_OUT overrides both).")
@click.option("--seed", default=None, type=int)
@_guarded
def run(config_path, stages, out_dir, seed):
    """Run the uncertainty-guided pipeline end to end."""
    config = PipelineConfig.from_json(config_path) if config_path else PipelineConfig()
    if out_dir is not None:
        config = replace(config, out_dir=out_dir)
    if seed is not None:
        config = replace(config, seed=seed)
    wanted = [s.strip() for s in stages.split(",") if s.strip()]
    reports = run_pipeline(config, wanted)
    for r in reports:
        shown = "n/a" if r.headline_accuracy is None else f"{r.headline_accuracy:.4f}"
        click.echo(f"{r.stage}: accuracy {shown}")
    click.echo(f"artifacts under {os.environ.get('UPASS_OUT') or config.out_dir}")


@main.command()
@click.option("--workspace", required=True, type=click.Path(), help="Directory containing workspace.json.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8477, show_default=True)
@click.option("--simulation/--no-simulation", default=None, help="Override the workspace simulation flag.")
@_guarded
def serve(workspace, host, port, simulation):
    """Serve the labeling and deferral-review API over HTTP."""
    import uvicorn

    from .service import SessionService, create_app

    service = SessionService(Path(workspace), simulation=simulation)
    app = create_app(service)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
