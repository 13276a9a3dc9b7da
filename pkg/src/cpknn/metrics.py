"""Evaluation metrics over p-value matrices: coverage, set size, efficiency.

All four metrics are exact tallies; coverage and average set size are
nonincreasing along any increasing epsilon grid because the strict
threshold makes prediction sets nested.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from cpknn.conformal import top1_labels
from cpknn.errors import ValidationError
from cpknn.ioutil import format_float


@dataclass(frozen=True)
class MetricsReport:
    """The four headline metrics at one significance level."""

    epsilon: float
    n_test: int
    coverage: float
    avg_set_size: float
    correct_efficiency: float
    top1_accuracy: float

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self, meta: dict | None = None) -> str:
        payload = self.as_dict()
        if meta:
            payload = {"meta": meta, **payload}
        return json.dumps(payload, indent=2) + "\n"

    def __str__(self) -> str:
        return (
            f"epsilon={self.epsilon:.3f} coverage={self.coverage:.3f} "
            f"avg_set_size={self.avg_set_size:.3f} "
            f"correct_efficiency={self.correct_efficiency:.3f} "
            f"top1_accuracy={self.top1_accuracy:.3f}"
        )


@dataclass(frozen=True)
class CoverageCurve:
    """Metrics swept over an increasing epsilon grid."""

    points: tuple[MetricsReport, ...]

    @property
    def epsilons(self) -> np.ndarray:
        return np.asarray([p.epsilon for p in self.points])

    def column(self, name: str) -> np.ndarray:
        return np.asarray([getattr(p, name) for p in self.points])

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        lines = [line.rstrip("\n") for line in header_lines]
        lines.append("epsilon,coverage,avg_set_size,correct_efficiency")
        for p in self.points:
            lines.append(
                ",".join(
                    format_float(v)
                    for v in (p.epsilon, p.coverage, p.avg_set_size, p.correct_efficiency)
                )
            )
        return "\n".join(lines) + "\n"


def _as_matrix(pvalue_matrix) -> np.ndarray:
    m = np.asarray(pvalue_matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValidationError("p-value matrix must be 2-D and nonempty")
    return m


def evaluate(
    pvalue_matrix,
    alphas,
    truth,
    epsilon: float,
    top1_override: np.ndarray | None = None,
) -> MetricsReport:
    """Tally the four metrics at one epsilon.

    alphas supplies the documented top-1 tie-break (lower score wins);
    top1_override short-circuits the argmax when the caller already has
    the top-1 labels (e.g. read back from a predictions file).
    """
    pvals = _as_matrix(pvalue_matrix)
    truth = np.asarray(truth, dtype=np.int64)
    t, n_classes = pvals.shape
    if truth.shape != (t,):
        raise ValidationError(f"{t} p-value rows but {truth.size} truth labels")
    if np.any((truth < 0) | (truth >= n_classes)):
        raise ValidationError("truth label outside [0, C)")
    if not (0.0 < epsilon < 1.0):
        raise ValidationError(f"epsilon must be in (0, 1), got {epsilon}")

    included = pvals > epsilon
    covered = included[np.arange(t), truth]
    sizes = included.sum(axis=1)
    if top1_override is not None:
        top = np.asarray(top1_override, dtype=np.int64)
        if top.shape != (t,):
            raise ValidationError(f"{t} rows but {top.size} top-1 labels")
    else:
        top = top1_labels(pvals, alphas)
    return MetricsReport(
        epsilon=float(epsilon),
        n_test=int(t),
        coverage=float(np.mean(covered)),
        avg_set_size=float(np.mean(sizes)),
        correct_efficiency=float(np.mean((sizes == 1) & covered)),
        top1_accuracy=float(np.mean(top == truth)),
    )


def sweep(
    pvalue_matrix,
    truth,
    grid: Sequence[float],
    alphas=None,
    top1_override: np.ndarray | None = None,
) -> CoverageCurve:
    """One evaluate() point per grid epsilon, reusing the p-value matrix."""
    grid = [float(e) for e in grid]
    if not grid:
        raise ValidationError("epsilon grid is empty")
    if any(not (0.0 < e < 1.0) for e in grid):
        raise ValidationError("grid epsilons must lie in (0, 1)")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("grid epsilons must be strictly increasing")
    pvals = _as_matrix(pvalue_matrix)
    if top1_override is None:
        top1_override = top1_labels(pvals, alphas)
    points = tuple(evaluate(pvals, alphas, truth, e, top1_override) for e in grid)
    return CoverageCurve(points)


def default_grid(start: float = 0.01, stop: float = 0.5, step: float = 0.01) -> list[float]:
    """The standard sweep grid: 0.01 to 0.5 in steps of 0.01."""
    n = int(round((stop - start) / step))
    return [round(start + i * step, 10) for i in range(n + 1)]
