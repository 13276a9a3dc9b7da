"""Split conformal prediction: nonconformity scores, calibration, p-values, sets.

The nonconformity score of an embedding u under a candidate label y is
the ratio of its average cosine distance to the k nearest same-class
training points over the average distance to the k nearest points of all
other classes pooled. Low means typical of the class.

Degenerate geometry conventions: a 0/0 ratio scores 1 (equally close to
both sides); a positive numerator over a zero denominator scores
MAX_SCORE, which orders above every finite score. A candidate class with
no training points at all also scores MAX_SCORE (p-value paths only; the
direct score entry points treat it as an error).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from cpknn.errors import ValidationError
from cpknn.index import (
    ClassPartitionedIndex,
    index_fingerprint,
    mean_of_smallest,
    pooled_other_topk,
    topk_by_class,
)
from cpknn.ioutil import atomic_write_text, format_float
from cpknn.store import EmbeddingSet

MAX_SCORE = math.inf

P_VALUE_MODES = ("deterministic", "randomized")


@dataclass(frozen=True)
class CalibrationTable:
    """Sorted nonconformity scores of the calibration set.

    Carries k and a fingerprint of the training ids it was built
    against; p-value computation refuses a mismatched index.
    """

    scores: np.ndarray
    k: int
    fingerprint: str

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1 or scores.size < 1:
            raise ValidationError("calibration table needs at least one score")
        if np.any(np.diff(scores) < 0):
            scores = np.sort(scores)
        if np.any(np.isnan(scores)) or (np.isfinite(scores) & (scores < 0)).any():
            raise ValidationError("calibration scores must be nonnegative and not NaN")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return int(self.scores.size)


def _alpha_from_parts(num_mean, num_count, den_mean, den_count, empty_class_action, context=""):
    """Apply the ratio and its degenerate conventions elementwise."""
    num_mean = np.atleast_1d(np.asarray(num_mean, dtype=np.float64))
    den_mean = np.atleast_1d(np.asarray(den_mean, dtype=np.float64))
    num_count = np.atleast_1d(num_count)
    den_count = np.atleast_1d(den_count)
    if np.any(den_count == 0):
        raise ValidationError(f"no training points outside the candidate class{context}")
    if np.any(num_count == 0):
        if empty_class_action == "error":
            raise ValidationError(f"candidate class has no training points{context}")
        num_mean = np.where(num_count == 0, np.inf, num_mean)
    alphas = np.empty_like(num_mean)
    zero_den = den_mean == 0.0
    both_zero = zero_den & (num_mean == 0.0)
    with np.errstate(divide="ignore"):
        np.divide(num_mean, den_mean, out=alphas, where=~zero_den)
    alphas[zero_den] = MAX_SCORE
    alphas[both_zero] = 1.0
    return alphas


def nonconformity(
    u: np.ndarray,
    y: int,
    index: ClassPartitionedIndex,
    k: int,
    exclude_id: str | None = None,
) -> float:
    """Same-class over other-class average k-NN distance for one embedding."""
    ids = [exclude_id] if exclude_id is not None else None
    per_class = topk_by_class(index, np.asarray(u, dtype=np.float64)[None, :], k, ids)
    if not (0 <= y < index.n_classes):
        raise ValidationError(f"class {y} outside [0, {index.n_classes})")
    num_mean, num_count = mean_of_smallest(per_class[y], k)
    den_mean, den_count = mean_of_smallest(pooled_other_topk(per_class, y, k), k)
    alphas = _alpha_from_parts(
        num_mean, num_count, den_mean, den_count, "error", context=f" (class {y})"
    )
    return float(alphas[0])


def nonconformity_batch(
    index: ClassPartitionedIndex,
    queries: np.ndarray,
    k: int,
    query_ids: Sequence[str] | None = None,
    empty_class_action: str = "sentinel",
) -> np.ndarray:
    """(n_queries, n_classes) score matrix: every candidate class per query."""
    per_class = topk_by_class(index, queries, k, query_ids)
    t = per_class.shape[1]
    out = np.empty((t, index.n_classes))
    for y in range(index.n_classes):
        num_mean, num_count = mean_of_smallest(per_class[y], k)
        den_mean, den_count = mean_of_smallest(pooled_other_topk(per_class, y, k), k)
        out[:, y] = _alpha_from_parts(
            num_mean, num_count, den_mean, den_count, empty_class_action, context=f" (class {y})"
        )
    return out


def nonconformity_for_labels(
    index: ClassPartitionedIndex,
    queries: np.ndarray,
    labels: np.ndarray,
    k: int,
    query_ids: Sequence[str] | None = None,
) -> np.ndarray:
    """Score each query under its own given label.

    Unlike the full matrix, only the labels that actually occur are
    touched, and an empty-class failure names the offending example.
    """
    per_class = topk_by_class(index, queries, k, query_ids)
    labels = np.asarray(labels, dtype=np.int64)
    t = labels.size
    out = np.empty(t)
    for y in np.unique(labels):
        rows = np.nonzero(labels == y)[0]
        who = query_ids[rows[0]] if query_ids is not None else f"query {rows[0]}"
        if not (0 <= y < index.n_classes):
            raise ValidationError(f"label {y} of {who} outside [0, {index.n_classes})")
        num_mean, num_count = mean_of_smallest(per_class[y][rows], k)
        den_mean, den_count = mean_of_smallest(pooled_other_topk(per_class, y, k)[rows], k)
        out[rows] = _alpha_from_parts(
            num_mean, num_count, den_mean, den_count, "error",
            context=f" (class {y}, example {who})",
        )
    return out


def calibrate(cal: EmbeddingSet, index: ClassPartitionedIndex, k: int) -> CalibrationTable:
    """Score every calibration example under its true label; sort ascending."""
    if len(cal) == 0:
        raise ValidationError("calibration set is empty")
    overlap = [ex_id for ex_id in cal.ids if index.locate(ex_id) is not None]
    if overlap:
        raise ValidationError(
            f"calibration example {overlap[0]!r} is also a training example (leakage)"
        )
    scores = nonconformity_for_labels(index, cal.features, cal.labels, k, cal.ids)
    return CalibrationTable(np.sort(scores), k=k, fingerprint=index_fingerprint(index, k))


def _p_values_from_alphas(
    alphas: np.ndarray,
    table: CalibrationTable,
    mode: str = "deterministic",
    seed: int = 0,
) -> np.ndarray:
    """Calibration-rank p-values for an array of test scores.

    Deterministic: (#{a_i >= a} + 1) / (n + 1), ties counted in full.
    Randomized: ties enter through a uniform draw u in (0, 1], giving
    (#{a_i > a} + u * (#{a_i = a} + 1)) / (n + 1) -- the smoothed rule,
    never above the deterministic value.
    """
    if mode not in P_VALUE_MODES:
        raise ValidationError(f"mode must be one of {P_VALUE_MODES}, got {mode!r}")
    a = np.asarray(alphas, dtype=np.float64)
    if np.any(np.isnan(a)):
        raise ValidationError("test score is NaN")
    n = table.n
    ge = n - np.searchsorted(table.scores, a, side="left")
    if mode == "deterministic":
        return (ge + 1.0) / (n + 1.0)
    gt = n - np.searchsorted(table.scores, a, side="right")
    ties = ge - gt
    u = 1.0 - np.random.default_rng(seed).random(a.shape)
    return (gt + u * (ties + 1.0)) / (n + 1.0)


def p_value(
    alpha_test: float,
    table: CalibrationTable,
    mode: str = "deterministic",
    seed: int = 0,
) -> float:
    """p-value of one test score against the calibration table."""
    return float(_p_values_from_alphas(np.asarray([alpha_test]), table, mode, seed)[0])


def _check_pairing(index: ClassPartitionedIndex, table: CalibrationTable, k: int) -> None:
    if table.k != k:
        raise ValidationError(f"calibration table was built with k={table.k}, not k={k}")
    fp = index_fingerprint(index, k)
    if fp != table.fingerprint:
        raise ValidationError(
            f"calibration table fingerprint {table.fingerprint} does not match index {fp}"
        )


def p_value_matrix(
    index: ClassPartitionedIndex,
    table: CalibrationTable,
    queries: np.ndarray,
    k: int,
    mode: str = "deterministic",
    seed: int = 0,
    query_ids: Sequence[str] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(alphas, p-values), each (n_queries, n_classes), for a test batch."""
    _check_pairing(index, table, k)
    alphas = nonconformity_batch(index, queries, k, query_ids)
    return alphas, _p_values_from_alphas(alphas, table, mode, seed)


def p_value_row(
    u: np.ndarray,
    index: ClassPartitionedIndex,
    table: CalibrationTable,
    k: int,
    mode: str = "deterministic",
    seed: int = 0,
) -> np.ndarray:
    """Per-class p-values for one test embedding."""
    _, pvals = p_value_matrix(index, table, np.asarray(u, dtype=np.float64)[None, :], k, mode, seed)
    return pvals[0]


def prediction_set(row: np.ndarray, epsilon: float) -> np.ndarray:
    """Labels whose p-value strictly exceeds epsilon; may be empty or full."""
    if not (0.0 < epsilon < 1.0):
        raise ValidationError(f"epsilon must be in (0, 1), got {epsilon}")
    return np.nonzero(np.asarray(row) > epsilon)[0]


def top1(row: np.ndarray, alphas: np.ndarray | None = None) -> int:
    """Argmax p-value; ties broken by lower score, then lower class index."""
    row = np.asarray(row, dtype=np.float64)
    idx = range(row.size)
    if alphas is None:
        return min(idx, key=lambda j: (-row[j], j))
    a = np.asarray(alphas, dtype=np.float64)
    return min(idx, key=lambda j: (-row[j], a[j], j))


def top1_labels(pvals: np.ndarray, alphas: np.ndarray | None = None) -> np.ndarray:
    """Row-wise top-1 labels for a p-value matrix."""
    pvals = np.atleast_2d(pvals)
    if alphas is None:
        return np.argmax(pvals, axis=1)
    return np.asarray([top1(pvals[i], np.atleast_2d(alphas)[i]) for i in range(pvals.shape[0])])


# ---------------------------------------------------------------------------
# persistence


def calibration_table_to_csv(table: CalibrationTable, header_lines: Sequence[str] = ()) -> str:
    lines = [line.rstrip("\n") for line in header_lines]
    lines += [f"# k={table.k}", f"# fingerprint={table.fingerprint}", f"# n={table.n}", "alpha"]
    lines += [format_float(s) for s in table.scores]
    return "\n".join(lines) + "\n"


def save_calibration_table(
    table: CalibrationTable, path: str | Path, header_lines: Sequence[str] = ()
) -> None:
    atomic_write_text(path, calibration_table_to_csv(table, header_lines))


def load_calibration_table(path: str | Path) -> CalibrationTable:
    meta: dict[str, str] = {}
    scores: list[float] = []
    header_seen = False
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line.lstrip("#").strip().partition("=")
                if sep:
                    meta.setdefault(key.strip(), value.strip())
                continue
            if not header_seen:
                if line != "alpha":
                    raise ValidationError(f"row {lineno}: expected 'alpha' header, got {line!r}")
                header_seen = True
                continue
            try:
                scores.append(float(line))
            except ValueError:
                raise ValidationError(f"row {lineno}: bad score {line!r}") from None
    for key in ("k", "fingerprint", "n"):
        if key not in meta:
            raise ValidationError(f"calibration table is missing the '# {key}=' line")
    if int(meta["n"]) != len(scores):
        raise ValidationError(f"table declares n={meta['n']} but has {len(scores)} scores")
    return CalibrationTable(np.asarray(scores), k=int(meta["k"]), fingerprint=meta["fingerprint"])
