"""Labeled embedding store with centroid queries.

Plain exhaustive scan over at most a few hundred samples: brute force is
exact, fast enough, and doubles as the reference for any future
accelerated index.  Centroids are arithmetic means of unit-norm entry
vectors and are deliberately NOT re-normalized; all queries use
Euclidean distance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class IndexFormatError(Exception):
    """Exported centroid file is unreadable or inconsistent."""


@dataclass(frozen=True)
class LatentIndex:
    entries: tuple          # ((vector, sample_id), ...)
    centroids: dict         # sample_id -> D-vector
    dim: int

    def __post_init__(self):
        if not self.entries:
            raise ValueError("index must contain at least one entry")
        for vec, _ in self.entries:
            if vec.shape != (self.dim,):
                raise ValueError(f"entry dimension {vec.shape} != ({self.dim},)")
        ids = {sid for _, sid in self.entries}
        if set(self.centroids) != ids:
            raise ValueError("centroid keys must cover exactly the entry labels")

    @property
    def sample_ids(self) -> list[str]:
        return sorted(self.centroids)


def build_index(vectors, labels) -> LatentIndex:
    """Index ``n`` embedding rows labeled by sample id."""
    vectors = [np.asarray(v, dtype=np.float32) for v in vectors]
    labels = list(labels)
    if not vectors:
        raise ValueError("cannot build an index from zero vectors")
    if len(vectors) != len(labels):
        raise ValueError(f"{len(vectors)} vectors but {len(labels)} labels")
    dim = vectors[0].shape[0]
    for v in vectors:
        if v.ndim != 1 or v.shape[0] != dim:
            raise ValueError(f"inconsistent embedding dimension: {v.shape} vs ({dim},)")

    by_label: dict[str, list[np.ndarray]] = {}
    for v, lab in zip(vectors, labels):
        by_label.setdefault(lab, []).append(v)
    centroids = {
        lab: np.mean(np.stack(vs).astype(np.float64), axis=0).astype(np.float32)
        for lab, vs in by_label.items()
    }
    entries = tuple((v, lab) for v, lab in zip(vectors, labels))
    return LatentIndex(entries=entries, centroids=centroids, dim=dim)


def _check_query(index: LatentIndex, query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise ValueError(f"query dimension {q.shape[0]} != index dimension {index.dim}")
    return q


def knn_classify(index: LatentIndex, query, k: int) -> str:
    """Majority label of the k nearest entries.

    Deterministic tie chain: equal distances order by smaller sample_id
    then lower entry position; a tied majority resolves to the label of
    the nearest member of the tied set.
    """
    if not 1 <= k <= len(index.entries):
        raise ValueError(f"k must be in [1, {len(index.entries)}], got {k}")
    q = _check_query(index, query)
    scored = []
    for pos, (vec, sid) in enumerate(index.entries):
        d = float(np.linalg.norm(vec.astype(np.float64) - q))
        scored.append((d, sid, pos))
    scored.sort()
    nearest_k = scored[:k]

    votes: dict[str, int] = {}
    for _, sid, _ in nearest_k:
        votes[sid] = votes.get(sid, 0) + 1
    best = max(votes.values())
    tied = {sid for sid, c in votes.items() if c == best}
    for _, sid, _ in nearest_k:          # nearest member of the tied set wins
        if sid in tied:
            return sid
    raise AssertionError("unreachable: tied set drawn from nearest_k")


def nearest_sample(index: LatentIndex, query) -> tuple[str, float]:
    """Closest centroid by Euclidean distance; ties go to the smaller id."""
    q = _check_query(index, query)
    best = None
    for sid in sorted(index.centroids):
        d = float(np.linalg.norm(index.centroids[sid].astype(np.float64) - q))
        if best is None or d < best[1]:
            best = (sid, d)
    return best


def top_k_similar(index: LatentIndex, query, k: int) -> list[tuple[str, float]]:
    """K closest centroids, ascending by (distance, sample_id)."""
    if not 1 <= k <= len(index.centroids):
        raise ValueError(f"K must be in [1, {len(index.centroids)}], got {k}")
    q = _check_query(index, query)
    scored = sorted(
        (float(np.linalg.norm(c.astype(np.float64) - q)), sid)
        for sid, c in index.centroids.items()
    )
    return [(sid, d) for d, sid in scored[:k]]


def export_centroids(index: LatentIndex, path) -> None:
    """JSON document {dim, centroids: {id: [f32...]}} for other modules.

    Values are written through float64, which represents every float32
    exactly, so a reload reproduces identical bits.
    """
    doc = {
        "dim": index.dim,
        "centroids": {sid: [float(x) for x in c] for sid, c in sorted(index.centroids.items())},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_centroids(path) -> tuple[int, dict[str, np.ndarray]]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise IndexFormatError(f"{path}: unreadable centroid export: {exc}") from exc
    if not isinstance(doc, dict) or "dim" not in doc or "centroids" not in doc:
        raise IndexFormatError(f"{path}: missing dim/centroids keys")
    dim = int(doc["dim"])
    out = {}
    for sid, vals in doc["centroids"].items():
        arr = np.asarray(vals, dtype=np.float32)
        if arr.shape != (dim,):
            raise IndexFormatError(f"{path}: centroid {sid!r} has shape {arr.shape}, expected ({dim},)")
        out[sid] = arr
    return dim, out
