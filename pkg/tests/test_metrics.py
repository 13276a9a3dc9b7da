"""Coverage, set size, correct efficiency, top-1 accuracy, and sweep curves."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from cpknn.errors import ValidationError
from cpknn.metrics import CoverageCurve, MetricsReport, default_grid, evaluate, sweep


def test_two_row_hand_count():
    # row 0: set {1, 2} with truth 1 (covered, size 2)
    # row 1: set {0} with truth 3 (missed, size 1)
    pvals = np.asarray(
        [
            [0.05, 0.40, 0.30, 0.02],
            [0.90, 0.05, 0.01, 0.08],
        ]
    )
    rep = evaluate(pvals, None, [1, 3], 0.1)
    assert rep.coverage == 0.5
    assert rep.avg_set_size == 1.5
    assert rep.correct_efficiency == 0.0
    assert rep.top1_accuracy == 0.5  # argmaxes are 1 (hit) and 0 (miss)
    assert rep.n_test == 2


def test_full_sets_case():
    pvals = np.full((4, 3), 0.9)
    rep = evaluate(pvals, None, [0, 1, 2, 0], 0.1)
    assert rep.coverage == 1.0 and rep.avg_set_size == 3.0
    assert rep.correct_efficiency == 0.0


def test_perfect_singletons_case():
    pvals = np.asarray([[0.9, 0.01], [0.01, 0.9]])
    rep = evaluate(pvals, None, [0, 1], 0.1)
    assert rep.coverage == rep.correct_efficiency == rep.top1_accuracy == 1.0
    assert rep.avg_set_size == 1.0


def test_ten_row_brute_tally(rng):
    pvals = rng.random((10, 5))
    truth = rng.integers(0, 5, size=10)
    rep = evaluate(pvals, None, truth, 0.3)
    top = np.argmax(pvals, axis=1)
    want = oracles.tally_metrics(pvals.tolist(), truth.tolist(), 0.3, top.tolist())
    assert (rep.coverage, rep.avg_set_size, rep.correct_efficiency, rep.top1_accuracy) == want


def test_counts_are_integral(rng):
    # coverage * n and correct_efficiency * n count whole examples
    pvals = rng.random((23, 4))
    truth = rng.integers(0, 4, size=23)
    rep = evaluate(pvals, None, truth, 0.2)
    assert (rep.coverage * 23) == pytest.approx(round(rep.coverage * 23), abs=1e-9)
    assert (rep.correct_efficiency * 23) == pytest.approx(
        round(rep.correct_efficiency * 23), abs=1e-9
    )


def test_evaluate_validations(rng):
    pvals = rng.random((3, 2))
    with pytest.raises(ValidationError):
        evaluate(pvals, None, [0, 1], 0.1)  # length mismatch
    with pytest.raises(ValidationError):
        evaluate(pvals, None, [0, 1, 5], 0.1)  # label out of range
    with pytest.raises(ValidationError):
        evaluate(pvals, None, [0, 1, 0], 1.0)  # bad epsilon
    with pytest.raises(ValidationError):
        evaluate(np.empty((0, 2)), None, [], 0.1)  # empty input


@settings(max_examples=50, deadline=None)
@given(
    pvals=hnp.arrays(np.float64, (12, 4), elements=st.floats(0.0, 1.0)),
    seed=st.integers(0, 2**32 - 1),
    eps=st.floats(0.05, 0.9),
)
def test_efficiency_bounded_by_coverage_and_top1(pvals, seed, eps):
    truth = np.random.default_rng(seed).integers(0, 4, size=12)
    rep = evaluate(pvals, None, truth, eps)
    assert rep.correct_efficiency <= rep.coverage + 1e-12
    assert rep.correct_efficiency <= rep.top1_accuracy + 1e-12


# ---------------------------------------------------------------------------
# sweep


def test_sweep_singleton_grid(rng):
    pvals = rng.random((8, 3))
    truth = rng.integers(0, 3, size=8)
    curve = sweep(pvals, truth, [0.1])
    assert len(curve.points) == 1
    point = curve.points[0]
    rep = evaluate(pvals, None, truth, 0.1)
    assert point.coverage == rep.coverage and point.avg_set_size == rep.avg_set_size


def test_sweep_monotone_columns(rng):
    pvals = rng.random((40, 5))
    truth = rng.integers(0, 5, size=40)
    curve = sweep(pvals, truth, default_grid())
    assert np.all(np.diff(curve.column("coverage")) <= 1e-12)
    assert np.all(np.diff(curve.column("avg_set_size")) <= 1e-12)
    assert curve.points[-1].coverage <= curve.points[0].coverage


def test_sweep_grid_validation(rng):
    pvals = rng.random((3, 2))
    truth = [0, 1, 0]
    with pytest.raises(ValidationError):
        sweep(pvals, truth, [])
    with pytest.raises(ValidationError):
        sweep(pvals, truth, [0.2, 0.1])
    with pytest.raises(ValidationError):
        sweep(pvals, truth, [0.0, 0.5])


def test_default_grid_shape():
    g = default_grid()
    assert g[0] == 0.01 and g[-1] == 0.5 and len(g) == 50
    assert all(b > a for a, b in zip(g, g[1:]))


# ---------------------------------------------------------------------------
# serialization


def test_report_json_round_trip():
    rep = MetricsReport(0.1, 100, 0.91, 1.2, 0.7, 0.88)
    payload = json.loads(rep.to_json(meta={"k": 10}))
    assert payload["meta"] == {"k": 10}
    assert payload["coverage"] == 0.91 and payload["n_test"] == 100


def test_curve_csv_layout(rng):
    pvals = rng.random((6, 3))
    truth = rng.integers(0, 3, size=6)
    curve = sweep(pvals, truth, [0.1, 0.2, 0.3])
    text = curve.to_csv(["# tool x"])
    lines = text.strip().split("\n")
    assert lines[0] == "# tool x"
    assert lines[1] == "epsilon,coverage,avg_set_size,correct_efficiency"
    assert len(lines) == 2 + 3
    first = lines[2].split(",")
    assert float(first[0]) == 0.1
    back = CoverageCurve(
        points=tuple(
            evaluate(pvals, None, truth, e) for e in (0.1, 0.2, 0.3)
        )
    )
    assert back.to_csv(["# tool x"]) == text
