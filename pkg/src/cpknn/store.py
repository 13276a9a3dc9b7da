"""Labeled embedding datasets: ingestion, validation, splitting, persistence.

The on-disk interchange format is CSV with header ``id,group,label,f0,...``
(group may be empty); JSONL with keys id/group/label/embedding is accepted
on input. Feature values are written with shortest round-trip formatting,
so save/load reproduces them exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from cpknn.errors import ValidationError
from cpknn.ioutil import atomic_write_text, format_float

NORM_ATOL = 1e-9
ZERO_NORM_FLOOR = 1e-12

MANIFEST_NAME = "manifest.txt"
SPLIT_FILES = {"train": "train.csv", "calibration": "calibration.csv", "test": "test.csv"}


@dataclass(frozen=True)
class LabeledExample:
    """One embedding with its class label and optional group (e.g. patient) id."""

    id: str
    group: str | None
    label: int
    embedding: np.ndarray


class EmbeddingSet:
    """Immutable ordered collection of labeled embeddings.

    Stored column-wise: ids and groups as tuples, labels as an int64
    vector, features as an (n, d) float64 matrix (marked read-only).
    """

    def __init__(
        self,
        ids: Sequence[str],
        groups: Sequence[str | None],
        labels: Sequence[int] | np.ndarray,
        features: np.ndarray,
        n_classes: int | None = None,
    ):
        self.ids: tuple[str, ...] = tuple(str(i) for i in ids)
        self.groups: tuple[str | None, ...] = tuple(
            None if g in (None, "") else str(g) for g in groups
        )
        self.labels = np.asarray(labels, dtype=np.int64).copy()
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {features.shape}")
        self.features = features.copy()
        n = len(self.ids)
        if not (len(self.groups) == n and len(self.labels) == n and self.features.shape[0] == n):
            raise ValidationError("ids, groups, labels, and features must have equal length")
        self.d: int = int(self.features.shape[1])

        seen: set[str] = set()
        for ex_id in self.ids:
            if ex_id in seen:
                raise ValidationError(f"duplicate id {ex_id!r}")
            seen.add(ex_id)
        bad = np.nonzero(~np.isfinite(self.features).all(axis=1))[0]
        if bad.size:
            raise ValidationError(f"non-finite feature value in example {self.ids[bad[0]]!r}")
        if n and self.labels.min() < 0:
            worst = int(np.argmin(self.labels))
            raise ValidationError(f"negative label in example {self.ids[worst]!r}")

        inferred = int(self.labels.max()) + 1 if n else 0
        if n_classes is None:
            self.n_classes = inferred
        else:
            self.n_classes = int(n_classes)
            if inferred > self.n_classes:
                worst = int(np.argmax(self.labels))
                raise ValidationError(
                    f"label {int(self.labels[worst])} of example {self.ids[worst]!r} "
                    f"exceeds declared class count {self.n_classes}"
                )
        self.labels.setflags(write=False)
        self.features.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[LabeledExample]:
        for i in range(len(self)):
            yield self.example(i)

    def example(self, i: int) -> LabeledExample:
        return LabeledExample(self.ids[i], self.groups[i], int(self.labels[i]), self.features[i])

    def subset(self, indices: Sequence[int]) -> "EmbeddingSet":
        idx = list(indices)
        return EmbeddingSet(
            [self.ids[i] for i in idx],
            [self.groups[i] for i in idx],
            self.labels[idx],
            self.features[idx],
            n_classes=self.n_classes,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.features, axis=1)

    def is_normalized(self, atol: float = NORM_ATOL) -> bool:
        if len(self) == 0:
            return True
        return bool(np.max(np.abs(self.norms() - 1.0)) <= atol)

    @classmethod
    def from_examples(
        cls, examples: Sequence[LabeledExample], n_classes: int | None = None
    ) -> "EmbeddingSet":
        if not examples:
            return cls([], [], [], np.empty((0, 0)), n_classes=n_classes)
        feats = np.vstack([np.asarray(e.embedding, dtype=np.float64) for e in examples])
        return cls(
            [e.id for e in examples],
            [e.group for e in examples],
            [e.label for e in examples],
            feats,
            n_classes=n_classes,
        )


@dataclass(frozen=True)
class SplitSpec:
    """How to divide one dataset into train/calibration/test."""

    fractions: tuple[float, float, float]
    seed: int
    stratified: bool = True
    group_aware: bool = False

    def __post_init__(self):
        if len(self.fractions) != 3:
            raise ValidationError("fractions must be a (train, cal, test) triple")
        for f in self.fractions:
            if not (0.0 <= f <= 1.0):
                raise ValidationError(f"fraction {f} outside [0, 1]")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValidationError(f"fractions sum to {sum(self.fractions)}, expected 1")


@dataclass(frozen=True)
class DataSplit:
    """Disjoint train/calibration/test sets, with the spec that produced them."""

    train: EmbeddingSet
    calibration: EmbeddingSet
    test: EmbeddingSet
    spec: SplitSpec | None = None


def normalize(emb_set: EmbeddingSet) -> EmbeddingSet:
    """Rescale every embedding to unit L2 norm; order and metadata preserved."""
    if len(emb_set) == 0:
        return emb_set
    norms = emb_set.norms()
    small = np.nonzero(norms < ZERO_NORM_FLOOR)[0]
    if small.size:
        raise ValidationError(f"zero-norm embedding in example {emb_set.ids[small[0]]!r}")
    return EmbeddingSet(
        emb_set.ids,
        emb_set.groups,
        emb_set.labels,
        emb_set.features / norms[:, None],
        n_classes=emb_set.n_classes,
    )


# ---------------------------------------------------------------------------
# loading / saving


def _parse_label(raw: str, where: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"{where}: label {raw!r} is not an integer") from None


def _parse_feature(raw: str, where: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise ValidationError(f"{where}: feature value {raw!r} is not a number") from None
    if not math.isfinite(v):
        raise ValidationError(f"{where}: non-finite feature value {raw!r}")
    return v


def _load_csv(path: Path, n_classes: int | None) -> EmbeddingSet:
    header: list[str] | None = None
    ids: list[str] = []
    groups: list[str | None] = []
    labels: list[int] = []
    rows: list[list[float]] = []
    declared_classes = n_classes
    d = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (row[0].startswith("#") and header is None):
                # leading comment lines may carry a class-count override
                if row and row[0].startswith("#") and declared_classes is None:
                    text = ",".join(row).lstrip("#").strip()
                    if text.startswith("C="):
                        try:
                            declared_classes = int(text[2:].strip())
                        except ValueError:
                            raise ValidationError(
                                f"row {lineno}: malformed class-count override {text!r}"
                            ) from None
                continue
            if header is None:
                header = row
                if len(header) < 3 or header[0] != "id" or header[1] != "group" or header[2] != "label":
                    raise ValidationError(
                        f"row {lineno}: header must start with id,group,label; got {header[:3]}"
                    )
                d = len(header) - 3
                continue
            where = f"row {lineno}"
            if len(row) != len(header):
                raise ValidationError(
                    f"{where}: expected {len(header) - 3} features, got {len(row) - 3}"
                )
            ids.append(row[0])
            groups.append(row[1] or None)
            labels.append(_parse_label(row[2], where))
            rows.append([_parse_feature(v, where) for v in row[3:]])
    if header is None:
        raise ValidationError(f"{path}: empty file, expected a header row")
    feats = np.asarray(rows, dtype=np.float64) if rows else np.empty((0, d))
    return EmbeddingSet(ids, groups, labels, feats, n_classes=declared_classes)


def _load_jsonl(path: Path, n_classes: int | None) -> EmbeddingSet:
    ids: list[str] = []
    groups: list[str | None] = []
    labels: list[int] = []
    rows: list[list[float]] = []
    d = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"row {lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{where}: invalid JSON ({exc})") from None
            try:
                emb = [float(v) for v in obj["embedding"]]
                ids.append(str(obj["id"]))
                groups.append(obj.get("group"))
                labels.append(int(obj["label"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{where}: malformed record ({exc})") from None
            if any(not math.isfinite(v) for v in emb):
                raise ValidationError(f"{where}: non-finite feature value")
            if d is None:
                d = len(emb)
            elif len(emb) != d:
                raise ValidationError(f"{where}: expected {d} features, got {len(emb)}")
            rows.append(emb)
    feats = np.asarray(rows, dtype=np.float64) if rows else np.empty((0, 0))
    return EmbeddingSet(ids, groups, labels, feats, n_classes=n_classes)


def load_embeddings(path: str | Path, fmt: str = "csv", n_classes: int | None = None) -> EmbeddingSet:
    """Load and validate an embedding file.

    Class count is inferred as max label + 1, unless overridden by the
    argument or (CSV only) a leading ``# C=<int>`` comment line.
    """
    path = Path(path)
    if fmt == "csv":
        return _load_csv(path, n_classes)
    if fmt == "jsonl":
        return _load_jsonl(path, n_classes)
    raise ValidationError(f"unknown format {fmt!r}, expected csv or jsonl")


def embeddings_to_csv(emb_set: EmbeddingSet, header_lines: Sequence[str] = ()) -> str:
    import io

    buf = io.StringIO()
    for line in header_lines:
        buf.write(line.rstrip("\n") + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "group", "label"] + [f"f{j}" for j in range(emb_set.d)])
    for i in range(len(emb_set)):
        writer.writerow(
            [emb_set.ids[i], emb_set.groups[i] or "", int(emb_set.labels[i])]
            + [format_float(v) for v in emb_set.features[i]]
        )
    return buf.getvalue()


def save_embeddings(emb_set: EmbeddingSet, path: str | Path, header_lines: Sequence[str] = ()) -> None:
    atomic_write_text(path, embeddings_to_csv(emb_set, header_lines))


# ---------------------------------------------------------------------------
# splitting


def _largest_remainder(total: int, fractions: Sequence[float]) -> list[int]:
    """Integer counts summing to total, proportional to fractions."""
    quotas = [total * f for f in fractions]
    base = [int(math.floor(q)) for q in quotas]
    remainder = total - sum(base)
    order = sorted(range(len(fractions)), key=lambda s: (-(quotas[s] - base[s]), s))
    for s in order[:remainder]:
        base[s] += 1
    return base


def _split_plain(emb_set: EmbeddingSet, spec: SplitSpec, rng: np.random.Generator) -> list[list[int]]:
    perm = rng.permutation(len(emb_set))
    counts = _largest_remainder(len(emb_set), spec.fractions)
    parts, start = [], 0
    for c in counts:
        parts.append(sorted(int(i) for i in perm[start : start + c]))
        start += c
    return parts

def _split_stratified(emb_set: EmbeddingSet, spec: SplitSpec, rng: np.random.Generator) -> list[list[int]]:
    parts: list[list[int]] = [[], [], []]
    for c in range(emb_set.n_classes):
        members = np.nonzero(emb_set.labels == c)[0]
        if members.size == 0:
            raise ValidationError(f"class {c} has no examples; cannot stratify")
        members = members[rng.permutation(members.size)]
        counts = _largest_remainder(members.size, spec.fractions)
        start = 0
        for s, cnt in enumerate(counts):
            parts[s].extend(int(i) for i in members[start : start + cnt])
            start += cnt
    return [sorted(p) for p in parts]


def _split_group_aware(emb_set: EmbeddingSet, spec: SplitSpec, rng: np.random.Generator) -> list[list[int]]:
    # greedy largest-group-first toward the target example counts; ties
    # between equal-sized groups ordered by a seeded shuffle
    by_group: dict[str, list[int]] = {}
    for i, g in enumerate(emb_set.groups):
        if g is None:
            raise ValidationError(f"example {emb_set.ids[i]!r} has no group; group-aware split needs one")
        by_group.setdefault(g, []).append(i)
    keys = sorted(by_group)
    shuffle_rank = {k: int(r) for k, r in zip(keys, rng.permutation(len(keys)))}
    ordered = sorted(keys, key=lambda k: (-len(by_group[k]), shuffle_rank[k]))

    n = len(emb_set)
    targets = [n * f for f in spec.fractions]
    assigned = [0.0, 0.0, 0.0]
    parts: list[list[int]] = [[], [], []]
    for key in ordered:
        deficits = [targets[s] - assigned[s] for s in range(3)]
        s = max(range(3), key=lambda j: (deficits[j], -j))
        parts[s].extend(by_group[key])
        assigned[s] += len(by_group[key])
    return [sorted(p) for p in parts]


def split(emb_set: EmbeddingSet, spec: SplitSpec) -> DataSplit:
    """Deterministically divide a set per the spec.

    Stratified mode keeps each class's share of every split within one
    example of exact proportionality; group-aware mode never separates a
    group and targets the fractions by example count.
    """
    if len(emb_set) == 0:
        raise ValidationError("cannot split an empty set")
    if spec.fractions[0] <= 0.0:
        raise ValidationError("train fraction must be positive (the index needs training data)")
    rng = np.random.default_rng(spec.seed)
    if spec.group_aware:
        parts = _split_group_aware(emb_set, spec, rng)
    elif spec.stratified:
        parts = _split_stratified(emb_set, spec, rng)
    else:
        parts = _split_plain(emb_set, spec, rng)
    train, cal, test = (emb_set.subset(p) for p in parts)
    return DataSplit(train=train, calibration=cal, test=test, spec=spec)


# ---------------------------------------------------------------------------
# split persistence


def manifest_text(data_split: DataSplit, header_lines: Sequence[str] = ()) -> str:
    spec = data_split.spec
    if spec is None:
        raise ValidationError("split carries no spec; cannot write a manifest")
    lines = [line.rstrip("\n") for line in header_lines]
    lines += [
        f"seed={spec.seed}",
        f"frac_train={format_float(spec.fractions[0])}",
        f"frac_cal={format_float(spec.fractions[1])}",
        f"frac_test={format_float(spec.fractions[2])}",
        f"n_train={len(data_split.train)}",
        f"n_cal={len(data_split.calibration)}",
        f"n_test={len(data_split.test)}",
        f"d={data_split.train.d}",
        f"C={data_split.train.n_classes}",
        f"group_aware={'true' if spec.group_aware else 'false'}",
        f"stratified={'true' if spec.stratified else 'false'}",
    ]
    return "\n".join(lines) + "\n"


def save_split(data_split: DataSplit, out_dir: str | Path, header_lines: Sequence[str] = ()) -> None:
    """Write train/calibration/test CSVs plus a key=value manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for attr, fname in SPLIT_FILES.items():
        save_embeddings(getattr(data_split, attr), out_dir / fname, header_lines)
    atomic_write_text(out_dir / MANIFEST_NAME, manifest_text(data_split, header_lines))


def load_manifest(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key] = value
    return out
