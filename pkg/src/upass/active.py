"""Recording ranking and the per-recording active-learning loop.

Recordings are ranked by label-free model uncertainty so labeling effort
goes where fine-tuning has the most to gain.  Within a recording, each
epoch queries the highest-entropy unlabeled samples, feeds the cumulative
labels to a pluggable trainer, and records the refreshed outputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np

from .dynamics import DynamicsLog, entropy, sample_metrics_entropy
from .refmodel import FeatureTable, ModelCheckpoint, forward_proba, loss_and_grads

__all__ = [
    "ALSession",
    "FineTuneTrainer",
    "NoOpTrainer",
    "RecordingRanking",
    "SelfTrainingAdapter",
    "SimulatedOracle",
    "Trainer",
    "al_step",
    "new_session",
    "next_query_batch",
    "rank_recordings",
    "run_al_session",
]


@dataclass(frozen=True)
class RecordingRanking:
    recording_id: str
    v_ep_entropy: float
    rank: int
    selected: bool


def rank_recordings(
    logs: DynamicsLog | Mapping[str, DynamicsLog],
    select_pct: float,
) -> list[RecordingRanking]:
    """Rank recordings by mean label-free model uncertainty, highest first.

    Accepts one log (grouped by its recording ids) or a mapping of
    per-recording logs.  The top ceil(R*select_pct/100) are flagged selected.
    Ties break by ascending recording_id.
    """
    if not 0 < select_pct <= 100:
        raise ValueError("select_pct must be in (0, 100]")
    groups = logs.group_by_recording() if isinstance(logs, DynamicsLog) else dict(logs)
    if not groups:
        raise ValueError("no recordings to rank")
    means: list[tuple[str, float]] = []
    for rid, log in groups.items():
        rows = sample_metrics_entropy(log)
        if not rows:
            raise ValueError(f"empty recording {rid!r}")
        means.append((rid, float(np.mean([v_ep for _, _, v_ep in rows]))))
    means.sort(key=lambda t: (-t[1], t[0]))
    k = math.ceil(len(means) * select_pct / 100.0)
    return [
        RecordingRanking(recording_id=rid, v_ep_entropy=v, rank=i + 1, selected=i + 1 <= k)
        for i, (rid, v) in enumerate(means)
    ]


class Trainer(Protocol):
    """One fine-tuning epoch: cumulative labels in, refreshed outputs out.

    ``state`` must stay JSON-serializable so sessions can be checkpointed
    between steps (a human oracle may answer much later).
    """

    trainer_id: str

    def initial_state(self) -> dict: ...

    def initial_outputs(self, state: dict) -> np.ndarray: ...

    def run_epoch(
        self, labeled: Mapping[str, int], state: dict
    ) -> tuple[np.ndarray, dict]: ...


class NoOpTrainer:
    """Keeps outputs fixed; isolates the query loop from any learning."""

    trainer_id = "noop"

    def __init__(self, outputs: np.ndarray):
        self._outputs = np.asarray(outputs, dtype=float)

    def initial_state(self) -> dict:
        return {}

    def initial_outputs(self, state: dict) -> np.ndarray:
        return self._outputs

    def run_epoch(self, labeled, state):
        return self._outputs, state


class FineTuneTrainer:
    """Supervised fine-tuning of a reference-model checkpoint on queried labels.

    Each call runs one full-batch gradient epoch on the cumulative labeled
    set and returns refreshed outputs for the whole recording.
    """

    trainer_id = "finetune"

    def __init__(
        self,
        table: FeatureTable,
        checkpoint: ModelCheckpoint,
        learning_rate: float = 0.1,
        steps_per_epoch: int = 5,
        l2: float = 0.0,
    ):
        self.table = table
        self.checkpoint = checkpoint
        self.learning_rate = learning_rate
        self.steps_per_epoch = steps_per_epoch
        self.l2 = l2
        self._id_to_row = {sid: i for i, sid in enumerate(table.sample_ids)}

    def initial_state(self) -> dict:
        return {"params": {k: v.tolist() for k, v in self.checkpoint.params.items()}}

    def _params(self, state: dict) -> dict[str, np.ndarray]:
        return {k: np.asarray(v, dtype=float) for k, v in state["params"].items()}

    def initial_outputs(self, state: dict) -> np.ndarray:
        return forward_proba(self._params(state), self.table.features)

    def run_epoch(self, labeled, state):
        params = self._params(state)
        if labeled:
            rows = np.array([self._id_to_row[sid] for sid in sorted(labeled)])
            X = self.table.features[rows]
            y = np.array([labeled[sid] for sid in sorted(labeled)], dtype=np.int64)
            for _ in range(self.steps_per_epoch):
                _, grads = loss_and_grads(params, X, y, self.l2)
                for k, g in grads.items():
                    params[k] = params[k] - self.learning_rate * g
        probs = forward_proba(params, self.table.features)
        return probs, {"params": {k: v.tolist() for k, v in params.items()}}


class SelfTrainingAdapter:
    """Label-free adaptation: one gradient epoch on the model's own argmax labels.

    Stands in for unsupervised per-recording adaptation when producing the
    dynamics logs that recording ranking consumes.
    """

    trainer_id = "self_training"

    def __init__(self, table, checkpoint, learning_rate: float = 0.05, steps_per_epoch: int = 3):
        self.table = table
        self.learning_rate = learning_rate
        self.steps_per_epoch = steps_per_epoch
        self.checkpoint = checkpoint

    def adaptation_log(self, epochs: int) -> DynamicsLog:
        params = {k: v.copy() for k, v in self.checkpoint.params.items()}
        frames = []
        for _ in range(epochs):
            probs = forward_proba(params, self.table.features)
            pseudo = probs.argmax(axis=1)
            for _ in range(self.steps_per_epoch):
                _, grads = loss_and_grads(params, self.table.features, pseudo)
                for k, g in grads.items():
                    params[k] = params[k] - self.learning_rate * g
            frames.append(forward_proba(params, self.table.features))
        probs_stack = np.stack(frames, axis=1)  # (N, E, C)
        return DynamicsLog(
            sample_ids=self.table.sample_ids,
            recording_ids=self.table.recording_ids,
            probs=probs_stack,
            labels=np.full(self.table.num_samples, -1, dtype=np.int64),
        )


@dataclass(frozen=True)
class ALSession:
    """State of one recording's active-learning run.

    The labeled set only ever grows, a sample is queried at most once, and
    after ``total_epochs`` steps the session is finished and the final
    trainer state is retained.
    """

    recording_id: str
    sample_ids: tuple[str, ...]
    epoch: int
    total_epochs: int
    batch_pct: float
    labeled: dict[str, int]
    query_history: tuple[tuple[str, ...], ...]
    outputs: np.ndarray
    trainer_id: str
    trainer_state: dict
    status: str = "running"

    def to_json(self, path: str | Path) -> None:
        payload = {
            "recording_id": self.recording_id,
            "sample_ids": list(self.sample_ids),
            "epoch": self.epoch,
            "total_epochs": self.total_epochs,
            "batch_pct": self.batch_pct,
            "labeled": self.labeled,
            "query_history": [list(b) for b in self.query_history],
            "outputs": self.outputs.tolist(),
            "trainer_id": self.trainer_id,
            "trainer_state": self.trainer_state,
            "status": self.status,
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "ALSession":
        p = json.loads(Path(path).read_text())
        return cls(
            recording_id=p["recording_id"],
            sample_ids=tuple(p["sample_ids"]),
            epoch=int(p["epoch"]),
            total_epochs=int(p["total_epochs"]),
            batch_pct=float(p["batch_pct"]),
            labeled={k: int(v) for k, v in p["labeled"].items()},
            query_history=tuple(tuple(b) for b in p["query_history"]),
            outputs=np.asarray(p["outputs"], dtype=float),
            trainer_id=p["trainer_id"],
            trainer_state=p["trainer_state"],
            status=p["status"],
        )


def new_session(
    recording_id: str,
    sample_ids: tuple[str, ...],
    trainer: Trainer,
    total_epochs: int = 10,
    batch_pct: float = 1.0,
) -> ALSession:
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    if not 0 < batch_pct <= 100:
        raise ValueError("batch_pct must be in (0, 100]")
    state = trainer.initial_state()
    return ALSession(
        recording_id=recording_id,
        sample_ids=tuple(sample_ids),
        epoch=0,
        total_epochs=total_epochs,
        batch_pct=batch_pct,
        labeled={},
        query_history=(),
        outputs=np.asarray(trainer.initial_outputs(state), dtype=float),
        trainer_id=trainer.trainer_id,
        trainer_state=state,
    )


def next_query_batch(
    session: ALSession,
    current_outputs: np.ndarray | None = None,
    batch_pct: float | None = None,
) -> list[str]:
    """The highest-entropy unlabeled samples for this epoch's query batch.

    The batch quota is anchored to the full recording size (ceil of
    batch_pct percent of it), capped by however many unlabeled samples
    remain.  Ties break by ascending sample_id; an exhausted recording
    yields an empty batch.
    """
    outputs = session.outputs if current_outputs is None else np.asarray(current_outputs, dtype=float)
    pct = session.batch_pct if batch_pct is None else batch_pct
    if session.status != "running":
        raise ValueError("session is finished")
    unlabeled = [sid for sid in session.sample_ids if sid not in session.labeled]
    if not unlabeled:
        return []
    k = min(math.ceil(len(session.sample_ids) * pct / 100.0), len(unlabeled))
    ent = entropy(outputs, axis=1)
    by_id = {sid: float(ent[i]) for i, sid in enumerate(session.sample_ids)}
    ranked = sorted(unlabeled, key=lambda sid: (-by_id[sid], sid))
    return ranked[:k]


def al_step(session: ALSession, labels: Mapping[str, int], trainer: Trainer) -> ALSession:
    """Apply one epoch: absorb the batch's labels, fine-tune, refresh outputs.

    ``labels`` must cover exactly the outstanding query batch.  Returns the
    updated session; after the final epoch the status flips to finished and
    the trainer state of the last epoch is retained.
    """
    if session.status != "running":
        raise ValueError("session is finished")
    if trainer.trainer_id != session.trainer_id:
        raise ValueError(
            f"trainer {trainer.trainer_id!r} does not match session trainer {session.trainer_id!r}"
        )
    expected = set(next_query_batch(session))
    got = set(labels)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        parts = []
        if missing:
            parts.append(f"missing answers for {missing[:5]}")
        if extra:
            parts.append(f"answers for non-queried samples {extra[:5]}")
        raise ValueError("; ".join(parts) or "label set mismatch")

    new_labeled = dict(session.labeled)
    new_labeled.update({sid: int(c) for sid, c in labels.items()})
    outputs, state = trainer.run_epoch(new_labeled, session.trainer_state)
    epoch = session.epoch + 1
    return replace(
        session,
        epoch=epoch,
        labeled=new_labeled,
        query_history=session.query_history + (tuple(sorted(labels)),),
        outputs=np.asarray(outputs, dtype=float),
        trainer_state=state,
        status="finished" if epoch >= session.total_epochs else "running",
    )


class SimulatedOracle:
    """Answers queries from a ground-truth lookup (tests and simulation mode)."""

    def __init__(self, truth: Mapping[str, int]):
        self._truth = dict(truth)

    def answer(self, batch: list[str]) -> dict[str, int]:
        return {sid: self._truth[sid] for sid in batch}


def run_al_session(session: ALSession, trainer: Trainer, oracle: SimulatedOracle) -> ALSession:
    """Drive a session to completion with a simulated oracle."""
    while session.status == "running":
        batch = next_query_batch(session)
        session = al_step(session, oracle.answer(batch), trainer)
    return session
