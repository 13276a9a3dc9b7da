"""Exact class-partitioned k-nearest-neighbor queries under cosine distance.

The index splits the training set by class label so that same-class and
other-class neighbor queries can be answered independently. All searches
are exact; the heavy lifting is one scan per class partition through the
top-k kernel (compiled or numpy, see cpknn._kernels).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cpknn._kernels import topk_distances
from cpknn.errors import ValidationError
from cpknn.store import NORM_ATOL, EmbeddingSet


@dataclass(frozen=True)
class KnnConfig:
    """Neighbor count used by both terms of the nonconformity ratio."""

    k: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")


class ClassPartitionedIndex:
    """Per-class storage of unit-normalized training embeddings.

    Rows inside each partition are ordered by ascending example id, so
    neighbor selection is deterministic under distance ties.
    """

    def __init__(self, ids_by_class: list[tuple[str, ...]], features_by_class: list[np.ndarray], d: int):
        self.ids_by_class = ids_by_class
        self.features_by_class = features_by_class
        self.d = d
        self.n_classes = len(ids_by_class)
        self.counts: tuple[int, ...] = tuple(len(ids) for ids in ids_by_class)
        self.n_total = sum(self.counts)
        self._locate: dict[str, tuple[int, int]] = {}
        for c, ids in enumerate(ids_by_class):
            for row, ex_id in enumerate(ids):
                self._locate[ex_id] = (c, row)

    def all_ids(self) -> list[str]:
        return [ex_id for ids in self.ids_by_class for ex_id in ids]

    def locate(self, ex_id: str) -> tuple[int, int] | None:
        """(class, row) of a training example, or None if not in the index."""
        return self._locate.get(ex_id)


def build_index(train: EmbeddingSet) -> ClassPartitionedIndex:
    """Partition the (unit-normalized) training set by class label."""
    if len(train) == 0:
        raise ValidationError("cannot build an index from an empty training set")
    if not train.is_normalized(NORM_ATOL):
        raise ValidationError("training embeddings are not unit-normalized; run normalize() first")
    ids_by_class: list[tuple[str, ...]] = []
    features_by_class: list[np.ndarray] = []
    for c in range(train.n_classes):
        members = np.nonzero(train.labels == c)[0]
        order = sorted(members, key=lambda i: train.ids[i])
        ids_by_class.append(tuple(train.ids[i] for i in order))
        feats = train.features[order] if order else np.empty((0, train.d))
        features_by_class.append(np.ascontiguousarray(feats, dtype=np.float64))
    return ClassPartitionedIndex(ids_by_class, features_by_class, train.d)


def index_fingerprint(index: ClassPartitionedIndex, k: int) -> str:
    """Hash of the sorted training ids and k; guards table/index pairing."""
    h = hashlib.sha256()
    for ex_id in sorted(index.all_ids()):
        h.update(ex_id.encode("utf-8"))
        h.update(b"\x00")
    h.update(f"k={k}".encode("ascii"))
    return h.hexdigest()[:16]


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - <a, b> for unit vectors, clamped to [0, 2]."""
    d = 1.0 - float(np.dot(a, b))
    return min(max(d, 0.0), 2.0)


def topk_by_class(
    index: ClassPartitionedIndex,
    queries: np.ndarray,
    k: int,
    query_ids: Sequence[str] | None = None,
) -> np.ndarray:
    """Per-class ascending top-k distance lists for a query batch.

    Returns (n_classes, n_queries, k), +inf padded where a partition has
    fewer than k usable rows. When query ids are given, a query matching
    a training example by id is excluded from its own partition's scan.
    """
    queries = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
    t = queries.shape[0]
    if queries.shape[1] != index.d:
        raise ValidationError(f"query dimension {queries.shape[1]} != index dimension {index.d}")
    exclude = None
    if query_ids is not None:
        exclude = np.full((index.n_classes, t), -1, dtype=np.int64)
        for i, ex_id in enumerate(query_ids):
            hit = index.locate(ex_id)
            if hit is not None:
                exclude[hit[0], i] = hit[1]
    out = np.empty((index.n_classes, t, k))
    for c in range(index.n_classes):
        excl_c = None if exclude is None else exclude[c]
        out[c] = topk_distances(index.features_by_class[c], queries, k, excl_c)
    return out


def mean_of_smallest(sorted_dists: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean over the up-to-k finite leading entries of each row.

    Input rows are ascending with +inf padding. Returns (means, counts);
    a row with zero finite entries gets mean 0 and count 0 for the caller
    to interpret.
    """
    lead = sorted_dists[:, :k]
    finite = np.isfinite(lead)
    counts = finite.sum(axis=1)
    sums = np.where(finite, lead, 0.0).sum(axis=1)
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return means, counts


def pooled_other_topk(per_class: np.ndarray, y: int, k: int) -> np.ndarray:
    """k smallest distances pooled over every class except y.

    Each class's own top-k already contains all candidates for the
    pooled top-k, so merging the per-class lists is exact.
    """
    others = [per_class[c] for c in range(per_class.shape[0]) if c != y]
    if not others:
        return np.full((per_class.shape[1], k), np.inf)
    merged = np.concatenate(others, axis=1)
    merged.sort(axis=1)
    return merged[:, :k]


def avg_knn_dist(
    index: ClassPartitionedIndex,
    u: np.ndarray,
    class_label: int,
    mode: str,
    k: int,
    exclude_id: str | None = None,
) -> float:
    """Mean cosine distance from u to its k nearest filtered training points.

    mode "same" scans the class_label partition, "other" pools all other
    partitions. Fewer than k candidates fall back to all of them; zero
    candidates is an error. exclude_id removes u itself when it is a
    training point.
    """
    if mode not in ("same", "other"):
        raise ValidationError(f"mode must be 'same' or 'other', got {mode!r}")
    if not (0 <= class_label < index.n_classes):
        raise ValidationError(f"class {class_label} outside [0, {index.n_classes})")
    ids = [exclude_id] if exclude_id is not None else None
    per_class = topk_by_class(index, np.asarray(u, dtype=np.float64)[None, :], k, ids)
    if mode == "same":
        lead = per_class[class_label]
    else:
        lead = pooled_other_topk(per_class, class_label, k)
    means, counts = mean_of_smallest(lead, k)
    if counts[0] == 0:
        side = "class" if mode == "same" else "classes other than"
        raise ValidationError(f"no training points in {side} {class_label}")
    return float(means[0])
