"""Built-in reference classifier and synthetic data generator.

The toolkit's contract is the dynamics-log format, not any particular model.
This module supplies a deliberately tiny classifier (softmax linear, or one
tanh hidden layer) trained with deterministic mini-batch gradient descent,
plus a cluster-based synthetic data generator, so the whole pipeline runs
and is testable without an external model.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .dynamics import DynamicsLog

__all__ = [
    "EmbeddingSet",
    "FeatureTable",
    "ModelCheckpoint",
    "SoftmaxNetClassifier",
    "SyntheticDataset",
    "SyntheticSpec",
    "embed",
    "generate_synthetic",
    "project_2d",
    "train_logged",
]


@dataclass(frozen=True)
class FeatureTable:
    """Feature matrix with ids, recording assignment and optional labels."""

    sample_ids: tuple[str, ...]
    recording_ids: tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        n = len(self.sample_ids)
        if self.features.shape[0] != n or len(self.recording_ids) != n:
            raise ValueError("inconsistent sample counts in feature table")
        if self.labels is not None and self.labels.shape != (n,):
            raise ValueError("labels length does not match samples")

    @property
    def num_samples(self) -> int:
        return len(self.sample_ids)

    def subset(self, keep) -> "FeatureTable":
        wanted = set(keep)
        idx = [i for i, sid in enumerate(self.sample_ids) if sid in wanted]
        return FeatureTable(
            sample_ids=tuple(self.sample_ids[i] for i in idx),
            recording_ids=tuple(self.recording_ids[i] for i in idx),
            features=self.features[idx],
            labels=None if self.labels is None else self.labels[idx],
        )

    def columns(self, cols: list[int]) -> "FeatureTable":
        return FeatureTable(
            sample_ids=self.sample_ids,
            recording_ids=self.recording_ids,
            features=self.features[:, cols],
            labels=self.labels,
        )

    def group_by_recording(self) -> dict[str, "FeatureTable"]:
        groups: dict[str, list[int]] = {}
        for i, rid in enumerate(self.recording_ids):
            groups.setdefault(rid, []).append(i)
        return {
            rid: FeatureTable(
                sample_ids=tuple(self.sample_ids[i] for i in idx),
                recording_ids=tuple(self.recording_ids[i] for i in idx),
                features=self.features[idx],
                labels=None if self.labels is None else self.labels[idx],
            )
            for rid, idx in groups.items()
        }

    def to_csv(self, path: str | Path) -> None:
        d = self.features.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "recording_id", "label"] + [f"f{i}" for i in range(d)])
            for i, sid in enumerate(self.sample_ids):
                label = "" if self.labels is None else str(int(self.labels[i]))
                writer.writerow([sid, self.recording_ids[i], label] + [repr(float(v)) for v in self.features[i]])

    @classmethod
    def from_csv(cls, path: str | Path) -> "FeatureTable":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:3] != ["sample_id", "recording_id", "label"]:
                raise ValueError("feature CSV header must start with sample_id,recording_id,label")
            rows = [row for row in reader if row]
        sids = tuple(r[0] for r in rows)
        rids = tuple(r[1] for r in rows)
        raw_labels = [r[2] for r in rows]
        features = np.array([[float(v) for v in r[3:]] for r in rows], dtype=float)
        if all(l == "" for l in raw_labels):
            labels = None
        elif any(l == "" for l in raw_labels):
            raise ValueError("feature CSV mixes labeled and unlabeled rows")
        else:
            labels = np.array([int(l) for l in raw_labels], dtype=np.int64)
        return cls(sample_ids=sids, recording_ids=rids, features=features, labels=labels)


@dataclass(frozen=True)
class SyntheticSpec:
    """Cluster-based generator settings.

    ``overlap`` in [0, 1) pulls class clusters together (0 = far apart);
    ``noise_rate`` flips floor(N*noise_rate) labels to a random other class;
    ``outlier_rate`` displaces that fraction of samples far from their
    cluster; ``recording_shift`` adds a per-recording offset of the given
    magnitude (in units of cluster_spread) to model per-recording drift.
    """

    num_classes: int = 3
    dims: int = 2
    samples_per_recording: int = 100
    recordings: int = 1
    cluster_means: np.ndarray | None = None
    cluster_spread: float = 1.0
    overlap: float = 0.0
    noise_rate: float = 0.0
    outlier_rate: float = 0.0
    recording_shift: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class SyntheticDataset:
    """Generated features with clean and observed (possibly flipped) labels."""

    sample_ids: tuple[str, ...]
    recording_ids: tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray
    true_labels: np.ndarray
    flip_mask: np.ndarray
    seed: int

    @property
    def num_samples(self) -> int:
        return len(self.sample_ids)

    def to_table(self) -> FeatureTable:
        return FeatureTable(
            sample_ids=self.sample_ids,
            recording_ids=self.recording_ids,
            features=self.features,
            labels=self.labels,
        )


def _auto_means(num_classes: int, dims: int, cluster_spread: float, overlap: float) -> np.ndarray:
    # Classes on a circle in the first two dims; radius shrinks with overlap.
    radius = 8.0 * cluster_spread * (1.0 - overlap)
    means = np.zeros((num_classes, dims))
    if dims == 1:
        means[:, 0] = np.linspace(-radius, radius, num_classes)
    else:
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    return means


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Deterministically generate a clustered dataset from the spec's seed."""
    if spec.num_classes < 2:
        raise ValueError("degenerate spec: need at least two classes")
    if spec.dims < 1:
        raise ValueError("degenerate spec: need at least one feature dimension")
    if spec.cluster_spread < 0:
        raise ValueError("degenerate spec: negative cluster spread")
    if not 0 <= spec.overlap < 1:
        raise ValueError("degenerate spec: overlap must be in [0, 1)")
    if not 0 <= spec.noise_rate < 1:
        raise ValueError("degenerate spec: noise_rate must be in [0, 1)")
    if spec.recordings < 1 or spec.samples_per_recording < 1:
        raise ValueError("degenerate spec: need at least one recording and sample")

    rng = np.random.default_rng(spec.seed)
    n = spec.recordings * spec.samples_per_recording
    means = spec.cluster_means
    if means is None:
        means = _auto_means(spec.num_classes, spec.dims, spec.cluster_spread, spec.overlap)
    else:
        means = np.asarray(means, dtype=float)
        if means.shape != (spec.num_classes, spec.dims):
            raise ValueError("cluster_means must have shape (num_classes, dims)")

    true_labels = rng.integers(0, spec.num_classes, size=n)
    features = means[true_labels] + rng.normal(0.0, spec.cluster_spread, size=(n, spec.dims))

    if spec.outlier_rate > 0:
        k_out = int(math.floor(n * spec.outlier_rate))
        out_idx = rng.choice(n, size=k_out, replace=False)
        direction = rng.normal(size=(k_out, spec.dims))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        features[out_idx] += direction * 24.0 * spec.cluster_spread

    recording_ids = tuple(
        f"r{(i // spec.samples_per_recording):03d}" for i in range(n)
    )
    if spec.recording_shift > 0:
        for r in range(spec.recordings):
            offset = rng.normal(size=spec.dims)
            offset *= spec.recording_shift * spec.cluster_spread / np.linalg.norm(offset)
            sl = slice(r * spec.samples_per_recording, (r + 1) * spec.samples_per_recording)
            features[sl] += offset

    labels = true_labels.copy()
    k_flip = int(math.floor(n * spec.noise_rate))
    flip_mask = np.zeros(n, dtype=bool)
    if k_flip > 0:
        flip_idx = rng.choice(n, size=k_flip, replace=False)
        flip_mask[flip_idx] = True
        shift = rng.integers(1, spec.num_classes, size=k_flip)
        labels[flip_idx] = (labels[flip_idx] + shift) % spec.num_classes

    sample_ids = tuple(f"{recording_ids[i]}-s{i % spec.samples_per_recording:05d}" for i in range(n))
    return SyntheticDataset(
        sample_ids=sample_ids,
        recording_ids=recording_ids,
        features=features,
        labels=labels,
        true_labels=true_labels,
        flip_mask=flip_mask,
        seed=spec.seed,
    )


@dataclass(frozen=True)
class ModelCheckpoint:
    """Classifier weights captured after one training epoch."""

    epoch: int
    params: dict[str, np.ndarray]
    training_seed: int

    def to_jsonable(self) -> dict:
        return {
            "epoch": self.epoch,
            "training_seed": self.training_seed,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_jsonable(cls, payload: Mapping) -> "ModelCheckpoint":
        return cls(
            epoch=int(payload["epoch"]),
            params={k: np.asarray(v, dtype=float) for k, v in payload["params"].items()},
            training_seed=int(payload["training_seed"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_jsonable(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ModelCheckpoint":
        return cls.from_jsonable(json.loads(Path(path).read_text()))


def _init_params(
    rng: np.random.Generator, dims: int, classes: int, hidden: int, init_scale: float = 0.1
) -> dict[str, np.ndarray]:
    if hidden > 0:
        # A large first-layer scale gives near-random saturated features, which
        # lets plain gradient descent fit idiosyncratic samples late in training.
        return {
            "W1": rng.normal(0.0, init_scale, size=(dims, hidden)),
            "b1": np.zeros(hidden),
            "W2": rng.normal(0.0, 0.05, size=(hidden, classes)),
            "b2": np.zeros(classes),
        }
    return {"W": rng.normal(0.0, init_scale, size=(dims, classes)), "b": np.zeros(classes)}


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(params: Mapping[str, np.ndarray], X: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Return (probabilities, hidden activations or None)."""
    if "W1" in params:
        H = np.tanh(X @ params["W1"] + params["b1"])
        return _softmax(H @ params["W2"] + params["b2"]), H
    return _softmax(X @ params["W"] + params["b"]), None


def forward_proba(params: Mapping[str, np.ndarray], X: np.ndarray) -> np.ndarray:
    """Class probabilities for a raw parameter set (checkpoint or trainer state)."""
    probs, _ = _forward(params, np.asarray(X, dtype=float))
    return probs


def loss_and_grads(
    params: Mapping[str, np.ndarray], X: np.ndarray, y: np.ndarray, l2: float = 0.0
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy (+ L2 on weight matrices) and its analytic gradients.

    Shared by the training loop and the finite-difference gradient check.
    """
    n = X.shape[0]
    probs, H = _forward(params, X)
    eps = 1e-12
    loss = -float(np.log(probs[np.arange(n), y] + eps).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grads: dict[str, np.ndarray] = {}
    if H is not None:
        grads["W2"] = H.T @ dlogits + l2 * params["W2"]
        grads["b2"] = dlogits.sum(axis=0)
        dH = (dlogits @ params["W2"].T) * (1.0 - H**2)
        grads["W1"] = X.T @ dH + l2 * params["W1"]
        grads["b1"] = dH.sum(axis=0)
        loss += 0.5 * l2 * float((params["W1"] ** 2).sum() + (params["W2"] ** 2).sum())
    else:
        grads["W"] = X.T @ dlogits + l2 * params["W"]
        grads["b"] = dlogits.sum(axis=0)
        loss += 0.5 * l2 * float((params["W"] ** 2).sum())
    return loss, grads


class SoftmaxNetClassifier(BaseEstimator, ClassifierMixin):
    """Softmax classifier (linear, or one tanh hidden layer) with logged dynamics.

    Trained by plain mini-batch gradient descent with a constant learning
    rate and a fixed shuffling seed, so two fits with identical inputs are
    bit-identical.  After every epoch the full-dataset class probabilities
    and a weight checkpoint are recorded.
    """

    def __init__(
        self,
        hidden_units: int = 0,
        epochs: int = 10,
        learning_rate: float = 0.5,
        batch_size: int = 32,
        l2: float = 0.0,
        init_scale: float = 0.1,
        random_state: int = 0,
    ):
        self.hidden_units = hidden_units
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.l2 = l2
        self.init_scale = init_scale
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError("X must be 2-D with one label per row")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        self.classes_ = np.unique(y)
        n_classes = int(self.classes_.max()) + 1 if len(self.classes_) else 0
        n_classes = max(n_classes, 2)
        self.n_features_in_ = X.shape[1]

        rng = np.random.default_rng(self.random_state)
        params = _init_params(rng, X.shape[1], n_classes, self.hidden_units, self.init_scale)
        n = X.shape[0]
        history = np.empty((self.epochs, n, n_classes))
        checkpoints: list[ModelCheckpoint] = []
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            for b, start in enumerate(range(0, n, self.batch_size)):
                batch = order[start : start + self.batch_size]
                loss, grads = loss_and_grads(params, X[batch], y[batch], self.l2)
                if not math.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}, batch {b}"
                    )
                for k, g in grads.items():
                    params[k] = params[k] - self.learning_rate * g
            history[epoch], _ = _forward(params, X)
            checkpoints.append(
                ModelCheckpoint(
                    epoch=epoch,
                    params={k: v.copy() for k, v in params.items()},
                    training_seed=self.random_state,
                )
            )
        self.params_ = params
        self.proba_history_ = history
        self.checkpoints_ = checkpoints
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("classifier is not fitted")

    def predict_proba(self, X):
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"feature dimension {X.shape[1]} does not match fit dimension {self.n_features_in_}"
            )
        probs, _ = _forward(self.params_, X)
        return probs

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def embed(self, X):
        """Penultimate-layer activations (hidden net) or the raw features (linear)."""
        self._check_fitted()
        return embed(self.checkpoints_[-1], np.asarray(X, dtype=float)).vectors

    @property
    def final_checkpoint(self) -> ModelCheckpoint:
        self._check_fitted()
        return self.checkpoints_[-1]


def train_logged(
    data: SyntheticDataset | FeatureTable,
    epochs: int,
    hyperparams: Mapping | None = None,
    seed: int = 0,
) -> tuple[DynamicsLog, list[ModelCheckpoint]]:
    """Train the reference classifier and log full-dataset dynamics per epoch."""
    if epochs < 2:
        raise ValueError("need at least two training epochs for dynamics")
    table = data.to_table() if isinstance(data, SyntheticDataset) else data
    if table.labels is None:
        raise ValueError("training data must be labeled")
    hp = dict(hyperparams or {})
    clf = SoftmaxNetClassifier(
        hidden_units=int(hp.get("hidden_units", 0)),
        epochs=epochs,
        learning_rate=float(hp.get("learning_rate", 0.5)),
        batch_size=int(hp.get("batch_size", 32)),
        l2=float(hp.get("l2", 0.0)),
        init_scale=float(hp.get("init_scale", 0.1)),
        random_state=seed,
    )
    clf.fit(table.features, table.labels)
    log = DynamicsLog(
        sample_ids=table.sample_ids,
        recording_ids=table.recording_ids,
        probs=clf.proba_history_.transpose(1, 0, 2),
        labels=table.labels,
    )
    return log, clf.checkpoints_


@dataclass(frozen=True)
class EmbeddingSet:
    """Per-sample feature vectors in the space used for neighbor search."""

    sample_ids: tuple[str, ...]
    vectors: np.ndarray
    epoch: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "vectors", np.asarray(self.vectors, dtype=float))
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.sample_ids):
            raise ValueError("vectors must be (num_samples, dim)")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id"] + [f"e{i}" for i in range(self.dim)])
            for i, sid in enumerate(self.sample_ids):
                writer.writerow([sid] + [repr(float(v)) for v in self.vectors[i]])

    @classmethod
    def from_csv(cls, path: str | Path) -> "EmbeddingSet":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            rows = [row for row in reader if row]
        return cls(
            sample_ids=tuple(r[0] for r in rows),
            vectors=np.array([[float(v) for v in r[1:]] for r in rows], dtype=float),
        )


def embed(
    checkpoint: ModelCheckpoint,
    features: np.ndarray,
    sample_ids: tuple[str, ...] | None = None,
) -> EmbeddingSet:
    """Map features into the checkpoint's representation space.

    Hidden-layer models return the penultimate activations; linear models
    return the features unchanged.
    """
    X = np.asarray(features, dtype=float)
    in_dim = checkpoint.params["W1" if "W1" in checkpoint.params else "W"].shape[0]
    if X.ndim != 2 or X.shape[1] != in_dim:
        raise ValueError(f"feature dimension {X.shape[1:]} does not match checkpoint ({in_dim})")
    if "W1" in checkpoint.params:
        vectors = np.tanh(X @ checkpoint.params["W1"] + checkpoint.params["b1"])
    else:
        vectors = X.copy()
    if sample_ids is None:
        sample_ids = tuple(f"s{i:06d}" for i in range(X.shape[0]))
    return EmbeddingSet(sample_ids=sample_ids, vectors=vectors, epoch=checkpoint.epoch)


def project_2d(embeddings: EmbeddingSet) -> np.ndarray:
    """Project onto the top-2 principal axes, mean-centered.

    Sign convention: each axis is flipped so its largest-magnitude loading is
    positive, making the output deterministic.
    """
    X = embeddings.vectors
    if X.shape[0] < 2 or X.shape[1] < 2:
        raise ValueError("need at least 2 samples of dimension >= 2")
    centered = X - X.mean(axis=0)
    if not np.any(np.abs(centered) > 0):
        raise ValueError("degenerate cloud: all points identical")
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    for j in range(2):
        i_max = int(np.argmax(np.abs(components[j])))
        if components[j, i_max] < 0:
            components[j] = -components[j]
    return centered @ components.T
