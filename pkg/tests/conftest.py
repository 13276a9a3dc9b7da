import numpy as np
import pytest

from cpknn.store import EmbeddingSet

# one line per headline acceptance criterion, echoed after the test run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def make_set(
    feats,
    labels,
    prefix: str = "x",
    groups=None,
    n_classes: int | None = None,
) -> EmbeddingSet:
    feats = np.asarray(feats, dtype=np.float64)
    n = feats.shape[0]
    ids = [f"{prefix}{i:04d}" for i in range(n)]
    if groups is None:
        groups = [None] * n
    return EmbeddingSet(ids, groups, np.asarray(labels, dtype=np.int64), feats, n_classes)


def random_labeled_set(
    rng: np.random.Generator, n: int, d: int, n_classes: int, prefix: str = "x"
) -> EmbeddingSet:
    """Random unit embeddings with every class guaranteed nonempty."""
    labels = np.concatenate(
        [np.arange(n_classes), rng.integers(0, n_classes, size=n - n_classes)]
    )
    labels = labels[rng.permutation(n)]
    return make_set(unit_rows(rng, n, d), labels, prefix, n_classes=n_classes)


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
