"""JSON-over-HTTP session service for the labeling and deferral-review UI.

State is event-sourced: every mutation appends one record to an append-only
JSONL event log, and replaying that log (over the same workspace artifacts)
reconstructs every session exactly.  All session mutations are serialized
through per-session locks; reads never observe a half-applied step.
"""

from __future__ import annotations

import csv
import hashlib
import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse

from .active import ALSession, FineTuneTrainer, al_step, new_session, next_query_batch
from .deferral import DeferralScore, read_scores_csv
from .dynamics import read_metrics_csv
from .refmodel import FeatureTable, ModelCheckpoint, forward_proba

__all__ = ["EVENT_KINDS", "ServiceError", "SessionService", "create_app"]

EVENT_KINDS = (
    "session_created",
    "batch_issued",
    "label_submitted",
    "epoch_finished",
    "deferral_issued",
    "deferral_resolved",
)

DEFERRAL_DECISIONS = ("relabel", "confirm_model", "skip")


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message
        super().__init__(message)


def _batch_token(session_id: str, epoch: int, batch: list[str]) -> str:
    payload = f"{session_id}:{epoch}:{','.join(batch)}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _read_coords_csv(path: Path) -> dict[str, tuple[float, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return {row[0]: (float(row[1]), float(row[2])) for row in reader if row}


def _read_ranking_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [
            {
                "recording_id": row[0],
                "v_ep_entropy": float(row[1]),
                "rank": int(row[2]),
                "selected": bool(int(row[3])),
            }
            for row in reader
            if row
        ]


def _read_predictions_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [
            {
                "sample_id": row[0],
                "recording_id": row[1],
                "prediction": int(row[2]),
                "label": int(row[3]),
                "correct": bool(int(row[4])),
            }
            for row in reader
            if row
        ]


class Workspace:
    """Artifact bundle the service operates on; all loading is lazy."""

    def __init__(self, root: Path):
        self.root = Path(root)
        manifest_path = self.root / "workspace.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no workspace.json under {self.root}")
        self.manifest = json.loads(manifest_path.read_text())
        self._cache: dict[str, Any] = {}

    def _path(self, key: str) -> Path | None:
        rel = self.manifest.get(key)
        return None if rel is None else self.root / rel

    @property
    def simulation(self) -> bool:
        return bool(self.manifest.get("simulation", False))

    @property
    def al_params(self) -> dict:
        return dict(self.manifest.get("al_params", {}))

    @property
    def defer_params(self) -> dict:
        return dict(self.manifest.get("defer_params", {}))

    def _load(self, key: str, loader):
        if key not in self._cache:
            path = self._path(key)
            self._cache[key] = None if path is None or not path.exists() else loader(path)
        return self._cache[key]

    @property
    def model(self) -> ModelCheckpoint | None:
        return self._load("model", ModelCheckpoint.load)

    @property
    def test_features(self) -> FeatureTable | None:
        return self._load("test_features", FeatureTable.from_csv)

    @property
    def scores(self) -> list[DeferralScore] | None:
        return self._load("scores", read_scores_csv)

    @property
    def metrics(self):
        return self._load("metrics", read_metrics_csv)

    @property
    def coords(self) -> dict[str, tuple[float, float]] | None:
        return self._load("coords", _read_coords_csv)

    @property
    def ranking(self):
        return self._load("ranking", _read_ranking_csv)

    @property
    def predictions(self):
        return self._load("predictions", _read_predictions_csv)

    def recording_table(self, recording_id: str) -> FeatureTable:
        table = self.test_features
        if table is None:
            raise ServiceError(404, "workspace has no test features artifact")
        groups = table.group_by_recording()
        if recording_id not in groups:
            raise ServiceError(404, f"unknown recording {recording_id!r}")
        columns = self.manifest.get("chosen_columns")
        tbl = groups[recording_id]
        return tbl if columns is None else tbl.columns(columns)


@dataclass
class _DeferralItem:
    sample_id: str
    score: float
    rank: int
    resolved: bool = False
    decision: str | None = None
    expert_label: int | None = None


class _DeferralState:
    def __init__(self, session_id: str, recording_id: str, metric_id: str, z: float, queue: list[_DeferralItem]):
        self.session_id = session_id
        self.recording_id = recording_id
        self.metric_id = metric_id
        self.z = z
        self.queue = queue
        self.items = {item.sample_id: item for item in queue}

    @property
    def remaining(self) -> int:
        return sum(not i.resolved for i in self.queue)

    @property
    def status(self) -> str:
        return "finished" if self.remaining == 0 else "running"


class _ALState:
    def __init__(self, session_id: str, session: ALSession, trainer: FineTuneTrainer):
        self.session_id = session_id
        self.session = session
        self.trainer = trainer
        self.issued_epochs: set[int] = set()


class SessionService:
    """Event-sourced registry of active-learning and deferral-review sessions."""

    def __init__(
        self,
        workspace_dir: str | Path,
        simulation: bool | None = None,
        event_log: str | Path | None = None,
    ):
        self.workspace = Workspace(Path(workspace_dir))
        self.simulation = self.workspace.simulation if simulation is None else simulation
        self.event_log_path = Path(event_log) if event_log else self.workspace.root / "events.jsonl"
        self._append_lock = threading.Lock()
        self._registry_lock = threading.Lock()
        self._session_locks: dict[str, threading.RLock] = {}
        self._al: dict[str, _ALState] = {}
        self._deferral: dict[str, _DeferralState] = {}
        self._seq = 0
        self._session_counter = 0
        if self.event_log_path.exists():
            self._replay()

    # ---- event log -------------------------------------------------------

    def _append_event(self, kind: str, payload: dict) -> None:
        with self._append_lock:
            self._seq += 1
            record = {"seq": self._seq, "ts": time.time(), "kind": kind, "payload": payload}
            with open(self.event_log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def _replay(self) -> None:
        with open(self.event_log_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                self._seq = max(self._seq, int(record["seq"]))
                self._apply(record["kind"], record["payload"])

    def _apply(self, kind: str, payload: dict) -> None:
        if kind == "session_created":
            self._session_counter += 1
            if payload["mode"] == "active_learning":
                self._materialize_al(payload)
            else:
                self._materialize_deferral(payload)
        elif kind == "batch_issued":
            state = self._al.get(payload["session_id"])
            if state is not None:
                state.issued_epochs.add(int(payload["epoch"]))
        elif kind == "label_submitted":
            state = self._al[payload["session_id"]]
            answers = {k: int(v) for k, v in payload["answers"].items()}
            state.session = al_step(state.session, answers, state.trainer)
        elif kind == "epoch_finished":
            pass  # informational; the label_submitted transition advances the epoch
        elif kind == "deferral_issued":
            pass  # queue contents are fixed by session_created's parameters
        elif kind == "deferral_resolved":
            state = self._deferral[payload["session_id"]]
            item = state.items[payload["sample_id"]]
            item.resolved = True
            item.decision = payload["decision"]
            item.expert_label = payload.get("label")
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    # ---- session materialization ----------------------------------------

    def _materialize_al(self, payload: dict) -> None:
        recording_id = payload["recording_id"]
        table = self.workspace.recording_table(recording_id)
        model = self.workspace.model
        if model is None:
            raise ServiceError(404, "workspace has no model artifact")
        params = payload["params"]
        finetune = params.get("finetune", {})
        trainer = FineTuneTrainer(
            table,
            model,
            learning_rate=float(finetune.get("learning_rate", 0.05)),
            steps_per_epoch=int(finetune.get("steps_per_epoch", 5)),
        )
        session = new_session(
            recording_id,
            table.sample_ids,
            trainer,
            total_epochs=int(params.get("total_epochs", 10)),
            batch_pct=float(params.get("batch_pct", 1.0)),
        )
        state = _ALState(payload["session_id"], session, trainer)
        self._al[payload["session_id"]] = state
        self._session_locks[payload["session_id"]] = threading.RLock()

    def _materialize_deferral(self, payload: dict) -> None:
        recording_id = payload["recording_id"]
        scores = self.workspace.scores
        if scores is None:
            raise ServiceError(404, "workspace has no scores artifact")
        if recording_id != "all":
            table = self.workspace.test_features
            if table is None:
                raise ServiceError(404, "workspace has no test features artifact")
            rec_of = {sid: rid for sid, rid in zip(table.sample_ids, table.recording_ids)}
            scores = [sc for sc in scores if rec_of.get(sc.sample_id) == recording_id]
            if not scores:
                raise ServiceError(404, f"no scored samples for recording {recording_id!r}")
        params = payload["params"]
        z = float(params.get("z", self.workspace.defer_params.get("z", 0.2)))
        if not 0 < z <= 1:
            raise ServiceError(400, "z must be in (0, 1]")
        k = int(np.ceil(len(scores) * z))
        ranked = sorted(scores, key=lambda s: (-s.score, s.sample_id))[:k]
        queue = [
            _DeferralItem(sample_id=s.sample_id, score=s.score, rank=i + 1)
            for i, s in enumerate(ranked)
        ]
        state = _DeferralState(
            payload["session_id"], recording_id, ranked[0].metric_id if ranked else "", z, queue
        )
        self._deferral[payload["session_id"]] = state
        self._session_locks[payload["session_id"]] = threading.RLock()

    # ---- helpers ----------------------------------------------------------

    def _lock(self, session_id: str) -> threading.RLock:
        lock = self._session_locks.get(session_id)
        if lock is None:
            raise ServiceError(404, f"unknown session {session_id!r}")
        return lock

    def _truth_for(self, recording_id: str) -> dict[str, int] | None:
        if not self.simulation:
            return None
        table = self.workspace.test_features
        if table is None or table.labels is None:
            return None
        return {
            sid: int(l)
            for sid, rid, l in zip(table.sample_ids, table.recording_ids, table.labels)
            if recording_id == "all" or rid == recording_id
        }

    def _al_accuracy(self, state: _ALState) -> float | None:
        truth = self._truth_for(state.session.recording_id)
        if truth is None:
            return None
        preds = state.session.outputs.argmax(axis=1)
        labels = np.array([truth[sid] for sid in state.session.sample_ids])
        return float((preds == labels).mean())

    def _score_row(self, sample_id: str) -> DeferralScore | None:
        scores = self.workspace.scores
        if scores is None:
            return None
        for s in scores:
            if s.sample_id == sample_id:
                return s
        return None

    # ---- public operations -------------------------------------------------

    def create_session(self, recording_id: str, mode: str, params: Mapping | None = None) -> dict:
        if mode not in ("active_learning", "deferral_review"):
            raise ServiceError(400, f"unknown mode {mode!r}")
        params = dict(params or {})
        with self._registry_lock:
            running = self._al if mode == "active_learning" else self._deferral
            for state in running.values():
                rec = state.session.recording_id if isinstance(state, _ALState) else state.recording_id
                status = state.session.status if isinstance(state, _ALState) else state.status
                if rec == recording_id and status == "running":
                    raise ServiceError(
                        409, f"a running {mode} session already exists for {recording_id!r}"
                    )
            self._session_counter += 1
            session_id = f"session-{self._session_counter:04d}"
            payload = {
                "session_id": session_id,
                "recording_id": recording_id,
                "mode": mode,
                "params": params,
            }
            if mode == "active_learning":
                defaults = self.workspace.al_params
                params.setdefault("total_epochs", defaults.get("total_epochs", 10))
                params.setdefault("batch_pct", defaults.get("batch_pct", 1.0))
                params.setdefault("finetune", defaults.get("finetune", {}))
                self._materialize_al(payload)
                self._append_event("session_created", payload)
            else:
                self._materialize_deferral(payload)
                self._append_event("session_created", payload)
                state = self._deferral[session_id]
                self._append_event(
                    "deferral_issued",
                    {
                        "session_id": session_id,
                        "queue": [i.sample_id for i in state.queue],
                    },
                )
        return self.get_session(session_id)

    def get_session(self, session_id: str) -> dict:
        with self._lock(session_id):
            if session_id in self._al:
                state = self._al[session_id]
                s = state.session
                return {
                    "session_id": session_id,
                    "mode": "active_learning",
                    "recording_id": s.recording_id,
                    "status": s.status,
                    "epoch": s.epoch,
                    "total_epochs": s.total_epochs,
                    "batch_pct": s.batch_pct,
                    "labeled_count": len(s.labeled),
                    "labeled": {k: s.labeled[k] for k in sorted(s.labeled)},
                    "query_history": [list(b) for b in s.query_history],
                    "accuracy": self._al_accuracy(state),
                }
            state = self._deferral[session_id]
            return {
                "session_id": session_id,
                "mode": "deferral_review",
                "recording_id": state.recording_id,
                "status": state.status,
                "metric_id": state.metric_id,
                "z": state.z,
                "queue_size": len(state.queue),
                "remaining": state.remaining,
                "resolved_count": len(state.queue) - state.remaining,
                "corrected_accuracy": self._corrected_accuracy(state),
                "baseline_accuracy": self._baseline_accuracy(state),
            }

    def get_queries(self, session_id: str) -> dict:
        with self._lock(session_id):
            state = self._al.get(session_id)
            if state is None:
                raise ServiceError(404, f"{session_id!r} is not an active-learning session")
            s = state.session
            if s.status != "running":
                raise ServiceError(409, "session is finished")
            batch = next_query_batch(s)
            token = _batch_token(session_id, s.epoch, batch)
            if s.epoch not in state.issued_epochs:
                state.issued_epochs.add(s.epoch)
                self._append_event(
                    "batch_issued",
                    {"session_id": session_id, "epoch": s.epoch, "batch": batch, "token": token},
                )
            coords = self.workspace.coords or {}
            truth = self._truth_for(s.recording_id)
            row_of = {sid: i for i, sid in enumerate(s.sample_ids)}
            items = []
            for sid in batch:
                row = self._score_row(sid)
                item = {
                    "sample_id": sid,
                    "probs": [float(p) for p in s.outputs[row_of[sid]]],
                    "coords": list(coords[sid]) if sid in coords else None,
                    "explanation": (
                        None
                        if row is None or row.mean_neighbor_distance is None
                        else {
                            "mean_neighbor_distance": row.mean_neighbor_distance,
                            "mean_neighbor_confidence": row.mean_neighbor_confidence,
                        }
                    ),
                }
                if truth is not None:
                    item["oracle_label"] = truth[sid]
                items.append(item)
            return {
                "session_id": session_id,
                "epoch": s.epoch,
                "batch_token": token,
                "items": items,
            }

    def submit_labels(self, session_id: str, batch_token: str, answers: Mapping[str, int]) -> dict:
        with self._lock(session_id):
            state = self._al.get(session_id)
            if state is None:
                raise ServiceError(404, f"{session_id!r} is not an active-learning session")
            s = state.session
            if s.status != "running":
                raise ServiceError(409, "session is finished")
            expected = next_query_batch(s)
            token = _batch_token(session_id, s.epoch, expected)
            if batch_token != token:
                raise ServiceError(409, "stale batch token; refetch the current batch")
            missing = sorted(set(expected) - set(answers))
            extra = sorted(set(answers) - set(expected))
            if missing or extra:
                detail = []
                if missing:
                    detail.append(f"missing answers for {missing}")
                if extra:
                    detail.append(f"answers for non-queried samples {extra}")
                raise ServiceError(400, "; ".join(detail))
            n_classes = s.outputs.shape[1]
            clean = {}
            for sid, label in answers.items():
                label = int(label)
                if not 0 <= label < n_classes:
                    raise ServiceError(400, f"label {label} out of range for {sid}")
                clean[sid] = label
            state.session = al_step(s, clean, state.trainer)
            self._append_event(
                "label_submitted",
                {"session_id": session_id, "batch_token": batch_token, "answers": clean},
            )
            self._append_event(
                "epoch_finished",
                {"session_id": session_id, "epoch": state.session.epoch, "status": state.session.status},
            )
            return self.get_session(session_id)

    def _queue_items(self, state: _DeferralState) -> list[dict]:
        coords = self.workspace.coords or {}
        pred_of = {p["sample_id"]: p for p in (self.workspace.predictions or [])}
        items = []
        for item in state.queue:
            row = self._score_row(item.sample_id)
            pred = pred_of.get(item.sample_id)
            items.append(
                {
                    "sample_id": item.sample_id,
                    "score": item.score,
                    "rank": item.rank,
                    "prediction": None if pred is None else pred["prediction"],
                    "explanation": (
                        None
                        if row is None or row.mean_neighbor_distance is None
                        else {
                            "mean_neighbor_distance": row.mean_neighbor_distance,
                            "mean_neighbor_confidence": row.mean_neighbor_confidence,
                        }
                    ),
                    "coords": list(coords[item.sample_id]) if item.sample_id in coords else None,
                    "resolved": item.resolved,
                    "decision": item.decision,
                    "expert_label": item.expert_label,
                }
            )
        return items

    def get_deferrals(self, session_id: str) -> dict:
        with self._lock(session_id):
            state = self._deferral.get(session_id)
            if state is None:
                raise ServiceError(404, f"{session_id!r} is not a deferral-review session")
            return {
                "session_id": session_id,
                "metric_id": state.metric_id,
                "z": state.z,
                "remaining": state.remaining,
                "items": self._queue_items(state),
            }

    def resolve_deferral(self, session_id: str, sample_id: str, decision: str, label: int | None = None) -> dict:
        with self._lock(session_id):
            state = self._deferral.get(session_id)
            if state is None:
                raise ServiceError(404, f"{session_id!r} is not a deferral-review session")
            item = state.items.get(sample_id)
            if item is None:
                raise ServiceError(404, f"sample {sample_id!r} is not in the deferral queue")
            if item.resolved:
                raise ServiceError(409, f"sample {sample_id!r} already resolved")
            if decision not in DEFERRAL_DECISIONS:
                raise ServiceError(400, f"unknown decision {decision!r}")
            if decision == "relabel":
                if label is None:
                    raise ServiceError(400, "relabel requires a label")
                label = int(label)
            else:
                label = None
            item.resolved = True
            item.decision = decision
            item.expert_label = label
            payload = {"session_id": session_id, "sample_id": sample_id, "decision": decision}
            if label is not None:
                payload["label"] = label
            self._append_event("deferral_resolved", payload)
            return {
                "session_id": session_id,
                "remaining": state.remaining,
                "resolved": len(state.queue) - state.remaining,
                "corrected_accuracy": self._corrected_accuracy(state),
            }

    def _scope_predictions(self, state: _DeferralState) -> list[dict] | None:
        preds = self.workspace.predictions
        if preds is None:
            return None
        if state.recording_id == "all":
            return preds
        return [p for p in preds if p["recording_id"] == state.recording_id]

    def _baseline_accuracy(self, state: _DeferralState) -> float | None:
        preds = self._scope_predictions(state)
        if not preds or not self.simulation:
            return None
        return float(np.mean([p["correct"] for p in preds]))

    def _corrected_accuracy(self, state: _DeferralState) -> float | None:
        preds = self._scope_predictions(state)
        if not preds or not self.simulation:
            return None
        hits = 0
        for p in preds:
            item = state.items.get(p["sample_id"])
            if item is not None and item.resolved and item.decision == "relabel":
                hits += int(item.expert_label == p["label"])
            else:
                hits += int(p["correct"])
        return hits / len(preds)

    def get_artifact(self, kind: str, recording_id: str | None = None) -> dict:
        if kind == "workspace":
            table = self.workspace.test_features
            return {
                "simulation": self.simulation,
                "recordings": (
                    [] if table is None else sorted(set(table.recording_ids))
                ),
                "al_params": self.workspace.al_params,
                "defer_params": self.workspace.defer_params,
                "artifacts": sorted(
                    k
                    for k in ("scores", "metrics", "coords", "ranking", "predictions", "model")
                    if self.workspace.manifest.get(k)
                ),
            }
        if kind == "scores":
            scores = self.workspace.scores
            if scores is None:
                raise ServiceError(404, "no scores artifact")
            return {
                "items": [
                    {
                        "sample_id": s.sample_id,
                        "metric_id": s.metric_id,
                        "score": s.score,
                        "mean_neighbor_distance": s.mean_neighbor_distance,
                        "mean_neighbor_confidence": s.mean_neighbor_confidence,
                    }
                    for s in scores
                ]
            }
        if kind == "metrics":
            metrics = self.workspace.metrics
            if metrics is None:
                raise ServiceError(404, "no metrics artifact")
            return {
                "items": [
                    {
                        "sample_id": m.sample_id,
                        "c": m.confidence,
                        "v_al": m.v_al,
                        "v_ep": m.v_ep,
                        "v_al_entropy": m.v_al_entropy,
                        "v_ep_entropy": m.v_ep_entropy,
                        "stratum": m.stratum,
                    }
                    for m in metrics
                ]
            }
        if kind == "coords":
            coords = self.workspace.coords
            if coords is None:
                raise ServiceError(404, "no coords artifact")
            return {"items": [{"sample_id": k, "x": v[0], "y": v[1]} for k, v in coords.items()]}
        if kind == "ranking":
            ranking = self.workspace.ranking
            if ranking is None:
                raise ServiceError(404, "no ranking artifact")
            return {"items": ranking}
        if kind == "predictions":
            preds = self.workspace.predictions
            if preds is None:
                raise ServiceError(404, "no predictions artifact")
            if not self.simulation:
                preds = [{k: p[k] for k in ("sample_id", "recording_id", "prediction")} for p in preds]
            return {"items": preds}
        if kind == "recording":
            if not recording_id:
                raise ServiceError(400, "recording artifact requires recording_id")
            table = self.workspace.recording_table(recording_id)
            model = self.workspace.model
            if model is None:
                raise ServiceError(404, "workspace has no model artifact")
            probs = forward_proba(model.params, table.features)
            coords = self.workspace.coords or {}
            payload = {
                "recording_id": recording_id,
                "sample_ids": list(table.sample_ids),
                "probs": [[float(v) for v in row] for row in probs],
                "predictions": [int(v) for v in probs.argmax(axis=1)],
                "coords": [
                    list(coords[sid]) if sid in coords else None for sid in table.sample_ids
                ],
            }
            if self.simulation and table.labels is not None:
                payload["labels"] = [int(v) for v in table.labels]
            return payload
        raise ServiceError(404, f"unknown artifact kind {kind!r}")


def create_app(service: SessionService) -> FastAPI:
    """FastAPI application exposing the session service."""
    app = FastAPI(title="upass session service", version="0.1.0")

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"error": exc.status, "message": exc.message})

    def _bad_request(message: str) -> JSONResponse:
        return JSONResponse(status_code=400, content={"error": 400, "message": message})

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        body = await request.json()
        if not isinstance(body, dict) or "recording_id" not in body or "mode" not in body:
            return _bad_request("body must contain recording_id and mode")
        return service.create_session(
            str(body["recording_id"]), str(body["mode"]), body.get("params") or {}
        )

    @app.get("/sessions/{session_id}")
    async def get_session(session_id: str):
        return service.get_session(session_id)

    @app.get("/sessions/{session_id}/queries")
    async def get_queries(session_id: str):
        return service.get_queries(session_id)

    @app.post("/sessions/{session_id}/labels")
    async def submit_labels(session_id: str, request: Request):
        body = await request.json()
        if not isinstance(body, dict) or "batch_token" not in body or "answers" not in body:
            return _bad_request("body must contain batch_token and answers")
        if not isinstance(body["answers"], dict):
            return _bad_request("answers must map sample_id to class index")
        return service.submit_labels(session_id, str(body["batch_token"]), body["answers"])

    @app.get("/sessions/{session_id}/deferrals")
    async def get_deferrals(session_id: str):
        return service.get_deferrals(session_id)

    @app.post("/sessions/{session_id}/deferrals/{sample_id}")
    async def resolve_deferral(session_id: str, sample_id: str, request: Request):
        body = await request.json()
        if not isinstance(body, dict) or "decision" not in body:
            return _bad_request("body must contain a decision")
        return service.resolve_deferral(
            session_id, sample_id, str(body["decision"]), body.get("label")
        )

    @app.get("/artifacts/{kind}")
    async def get_artifact(kind: str, recording_id: str | None = None):
        return service.get_artifact(kind, recording_id)

    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"

    @app.get("/")
    async def index():
        page = ui_dir / "index.html"
        if page.exists():
            return FileResponse(page)
        return JSONResponse({"service": "upass", "ui": "not built"})

    @app.get("/ui/{path:path}")
    async def ui_assets(path: str):
        target = (ui_dir / path).resolve()
        if ui_dir.exists() and target.is_file() and target.is_relative_to(ui_dir.resolve()):
            return FileResponse(target)
        return JSONResponse(status_code=404, content={"error": 404, "message": "not found"})

    return app
