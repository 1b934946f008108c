"""Exact nearest-neighbor search over embeddings.

The substrate for the distance-based deferral metrics.  Queries are exact:
whatever acceleration is used internally must return precisely what an
exhaustive scan would, including tie order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .refmodel import EmbeddingSet

__all__ = ["NeighborHit", "NeighborIndex", "build_index", "query_knn"]

ATTACHMENT_KEYS = ("confidence", "v_al", "v_ep", "label")

DEFAULT_N_NEIGHBORS = 20


@dataclass(frozen=True)
class NeighborHit:
    sample_id: str
    distance: float
    attachments: dict[str, float]


@dataclass(frozen=True)
class NeighborIndex:
    """Immutable store of embeddings with optional per-sample attachments."""

    vectors: np.ndarray
    sample_ids: tuple[str, ...]
    attachments: dict[str, np.ndarray]
    metric: str = "euclidean"

    @property
    def size(self) -> int:
        return len(self.sample_ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def build_index(
    embeddings: EmbeddingSet,
    attachments: Mapping[str, Sequence[float]] | None = None,
    metric: str = "euclidean",
) -> NeighborIndex:
    """Validate and freeze embeddings (plus attachments) into a queryable index."""
    if metric not in ("euclidean", "cosine"):
        raise ValueError(f"unknown metric {metric!r}")
    vectors = np.asarray(embeddings.vectors, dtype=float)
    if vectors.shape[0] < 1:
        raise ValueError("index needs at least one vector")
    ids = tuple(embeddings.sample_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample_id in index")
    cols: dict[str, np.ndarray] = {}
    for key, values in (attachments or {}).items():
        if key not in ATTACHMENT_KEYS:
            raise ValueError(f"unknown attachment {key!r}")
        arr = np.asarray(values, dtype=float)
        if arr.shape != (len(ids),):
            raise ValueError(
                f"attachment {key!r} covers {arr.shape[0]} samples, index has {len(ids)}"
            )
        if not np.isfinite(arr).all():
            raise ValueError(f"attachment {key!r} has non-finite values")
        cols[key] = arr
    return NeighborIndex(vectors=vectors, sample_ids=ids, attachments=cols, metric=metric)


def _pairwise_d2(vectors: np.ndarray, query: np.ndarray) -> np.ndarray:
    diff = vectors - query[None, :]
    return (diff * diff).sum(axis=1)


def query_knn(
    index: NeighborIndex,
    query: np.ndarray,
    n: int = DEFAULT_N_NEIGHBORS,
    class_filter: int | None = None,
) -> list[NeighborHit]:
    """Exactly the n nearest stored vectors, ordered by ascending distance.

    Ties break by ascending sample_id.  With ``class_filter`` only vectors
    whose label attachment equals the given class are candidates.
    """
    q = np.asarray(query, dtype=float).reshape(-1)
    if q.shape[0] != index.dim:
        raise ValueError(f"query dimension {q.shape[0]} does not match index ({index.dim})")
    if class_filter is not None:
        if "label" not in index.attachments:
            raise ValueError("class_filter requires a label attachment")
        candidate = np.flatnonzero(index.attachments["label"] == class_filter)
    else:
        candidate = np.arange(index.size)
    if n < 1 or n > candidate.shape[0]:
        raise ValueError(
            f"n={n} exceeds available points ({candidate.shape[0]}"
            + (f" of class {class_filter})" if class_filter is not None else ")")
        )

    if index.metric == "cosine":
        vecs = index.vectors[candidate]
        qn = q / max(np.linalg.norm(q), 1e-30)
        vn = vecs / np.maximum(np.linalg.norm(vecs, axis=1, keepdims=True), 1e-30)
        scores = 1.0 - vn @ qn  # cosine distance; ordering key
    else:
        scores = _pairwise_d2(index.vectors[candidate], q)

    ids = np.array(index.sample_ids, dtype=object)[candidate]
    order = np.lexsort((ids, scores))[:n]
    hits = []
    for local in order:
        gi = int(candidate[local])
        dist = float(np.sqrt(scores[local])) if index.metric == "euclidean" else float(scores[local])
        hits.append(
            NeighborHit(
                sample_id=index.sample_ids[gi],
                distance=dist,
                attachments={k: float(v[gi]) for k, v in index.attachments.items()},
            )
        )
    return hits
