"""Synthetic exchangeable embeddings and augmentation-analog test-set shifts.

generate() draws class mean directions on the unit sphere with a minimum
pairwise separation, then samples every split i.i.d. from the same
Gaussian-around-mean mixture, so train/calibration/test are exchangeable
by construction and the conformal guarantee applies.

apply_shift() perturbs ONLY the test set, modeling deployment data that
has drifted away from what the calibration table describes: a fixed
directional mean shift, within-class spread rescaling, and embedding-space
analogs of the Mixup / CutMix sample-mixing augmentations (convex
combinations and coordinate-block swaps between test points, hard labels
from the dominant parent). Neutral parameters are a bit-exact no-op.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Mapping, Sequence

import numpy as np

from cpknn.conformal import p_value_matrix, calibrate
from cpknn.errors import ValidationError
from cpknn.index import build_index
from cpknn.ioutil import format_float
from cpknn.metrics import sweep
from cpknn.store import DataSplit, EmbeddingSet, SplitSpec

MEAN_REJECTION_CAP = 1000


@dataclass(frozen=True)
class GeneratorConfig:
    """Shape of one synthetic exchangeable dataset."""

    n_classes: int
    dim: int
    n_train: int
    n_cal: int
    n_test: int
    separation: float
    spread: float
    seed: int

    def __post_init__(self):
        if self.dim < 2:
            raise ValidationError(f"dim must be >= 2, got {self.dim}")
        if self.n_classes < 2:
            raise ValidationError(f"n_classes must be >= 2, got {self.n_classes}")
        for name in ("n_train", "n_cal", "n_test"):
            if getattr(self, name) < self.n_classes:
                raise ValidationError(f"{name} must be >= n_classes ({self.n_classes})")
        if self.separation <= 0:
            raise ValidationError("separation must be positive")
        if self.spread <= 0:
            raise ValidationError("spread must be positive")


@dataclass(frozen=True)
class ShiftConfig:
    """Test-set perturbation knobs; the defaults form the identity shift."""

    mean_shift: float = 0.0
    scale: float = 1.0
    mixup_rate: float = 0.0
    mixup_concentration: float = 1.0
    cutmix_rate: float = 0.0
    block_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.mean_shift < 0:
            raise ValidationError("mean_shift must be >= 0")
        if self.scale <= 0:
            raise ValidationError("scale must be positive")
        for name in ("mixup_rate", "cutmix_rate"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.mixup_rate + self.cutmix_rate > 1.0 + 1e-12:
            raise ValidationError("mixup_rate + cutmix_rate must not exceed 1")
        if self.mixup_concentration <= 0:
            raise ValidationError("mixup_concentration must be positive")
        if not (0.0 < self.block_fraction < 1.0):
            raise ValidationError("block_fraction must lie in (0, 1)")

    def is_identity(self) -> bool:
        return (
            self.mean_shift == 0.0
            and self.scale == 1.0
            and self.mixup_rate == 0.0
            and self.cutmix_rate == 0.0
        )


def _draw_class_means(rng: np.random.Generator, config: GeneratorConfig) -> np.ndarray:
    means: list[np.ndarray] = []
    attempts = 0
    while len(means) < config.n_classes:
        attempts += 1
        if attempts > MEAN_REJECTION_CAP:
            raise ValidationError(
                f"could not place {config.n_classes} class means at separation "
                f"{config.separation} within {MEAN_REJECTION_CAP} attempts"
            )
        v = rng.standard_normal(config.dim)
        v /= np.linalg.norm(v)
        if all(np.linalg.norm(v - m) >= config.separation for m in means):
            means.append(v)
    return np.vstack(means)


def _balanced_labels(rng: np.random.Generator, n: int, n_classes: int) -> np.ndarray:
    base, extra = divmod(n, n_classes)
    counts = [base + (1 if c < extra else 0) for c in range(n_classes)]
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), counts)
    return labels[rng.permutation(n)]


def _draw_split_part(
    rng: np.random.Generator,
    config: GeneratorConfig,
    means: np.ndarray,
    prefix: str,
    n: int,
) -> EmbeddingSet:
    labels = _balanced_labels(rng, n, config.n_classes)
    feats = means[labels] + config.spread * rng.standard_normal((n, config.dim))
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    feats = feats / norms
    ids = [f"{prefix}{i:06d}" for i in range(n)]
    return EmbeddingSet(ids, [None] * n, labels, feats, n_classes=config.n_classes)


def generate(config: GeneratorConfig) -> DataSplit:
    """Draw an exchangeable train/calibration/test triple, deterministic in seed."""
    rng = np.random.default_rng(config.seed)
    means = _draw_class_means(rng, config)
    train = _draw_split_part(rng, config, means, "tr-", config.n_train)
    cal = _draw_split_part(rng, config, means, "cal-", config.n_cal)
    test = _draw_split_part(rng, config, means, "te-", config.n_test)
    total = config.n_train + config.n_cal + config.n_test
    spec = SplitSpec(
        fractions=(config.n_train / total, config.n_cal / total, config.n_test / total),
        seed=config.seed,
        stratified=True,
        group_aware=False,
    )
    return DataSplit(train=train, calibration=cal, test=test, spec=spec)


# ---------------------------------------------------------------------------
# shift application


def _renormalize(feats: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValidationError("shift produced a zero-norm embedding")
    return feats / norms


def _apply_scale(feats: np.ndarray, labels: np.ndarray, scale: float) -> np.ndarray:
    # rescale around the empirical per-class test means
    out = feats.copy()
    for c in np.unique(labels):
        rows = labels == c
        center = feats[rows].mean(axis=0)
        out[rows] = center + scale * (feats[rows] - center)
    return _renormalize(out)


def mixup_pairs(
    feats: np.ndarray,
    labels: np.ndarray,
    idx: np.ndarray,
    partners: np.ndarray,
    lam: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Convex combinations of test pairs; hard label from the heavier parent."""
    mixed = lam[:, None] * feats[idx] + (1.0 - lam[:, None]) * feats[partners]
    new_labels = np.where(lam >= 0.5, labels[idx], labels[partners])
    return _renormalize(mixed), new_labels


def cutmix_pairs(
    feats: np.ndarray,
    labels: np.ndarray,
    idx: np.ndarray,
    partners: np.ndarray,
    starts: np.ndarray,
    block: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Swap a contiguous coordinate block in from the partner; majority label."""
    d = feats.shape[1]
    out = feats[idx].copy()
    for r in range(idx.size):
        s = int(starts[r])
        out[r, s : s + block] = feats[partners[r], s : s + block]
    new_labels = labels[partners] if block > d - block else labels[idx]
    return _renormalize(out), np.asarray(new_labels)


def _pick_partners(rng: np.random.Generator, idx: np.ndarray, n: int) -> np.ndarray:
    offsets = rng.integers(1, n, size=idx.size)
    return (idx + offsets) % n


def apply_shift(data_split: DataSplit, shift: ShiftConfig) -> DataSplit:
    """Perturb the test set only; train and calibration pass through untouched."""
    if shift.is_identity():
        return data_split
    test = data_split.test
    t, d = len(test), test.d
    feats = test.features.copy()
    labels = np.asarray(test.labels).copy()
    rng = np.random.default_rng(shift.seed)

    if shift.scale != 1.0:
        feats = _apply_scale(feats, labels, shift.scale)

    snapshot = feats.copy()
    snapshot_labels = labels.copy()
    n_mix = int(round(shift.mixup_rate * t))
    mix_idx = np.empty(0, dtype=np.int64)
    if shift.mixup_rate > 0.0 and n_mix > 0:
        if t < 2:
            raise ValidationError("mixup needs at least 2 test examples")
        mix_idx = np.sort(rng.choice(t, size=n_mix, replace=False))
        partners = _pick_partners(rng, mix_idx, t)
        lam = rng.beta(shift.mixup_concentration, shift.mixup_concentration, size=n_mix)
        feats[mix_idx], labels[mix_idx] = mixup_pairs(
            snapshot, snapshot_labels, mix_idx, partners, lam
        )

    if shift.cutmix_rate > 0.0:
        if t < 2:
            raise ValidationError("cutmix needs at least 2 test examples")
        eligible = np.setdiff1d(np.arange(t), mix_idx)
        n_cut = min(int(round(shift.cutmix_rate * t)), eligible.size)
        if n_cut > 0:
            cut_idx = np.sort(rng.choice(eligible, size=n_cut, replace=False))
            partners = _pick_partners(rng, cut_idx, t)
            block = min(max(int(round(shift.block_fraction * d)), 1), d - 1)
            starts = rng.integers(0, d - block + 1, size=n_cut)
            feats[cut_idx], labels[cut_idx] = cutmix_pairs(
                snapshot, snapshot_labels, cut_idx, partners, starts, block
            )

    if shift.mean_shift > 0.0:
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        feats = _renormalize(feats + shift.mean_shift * v)

    shifted = EmbeddingSet(test.ids, test.groups, labels, feats, n_classes=test.n_classes)
    return DataSplit(
        train=data_split.train,
        calibration=data_split.calibration,
        test=shifted,
        spec=data_split.spec,
    )


# ---------------------------------------------------------------------------
# the validity experiment


@dataclass(frozen=True)
class ExperimentRow:
    shift_id: str
    seed: int
    epsilon: float
    coverage: float
    avg_set_size: float
    correct_efficiency: float


@dataclass(frozen=True)
class AggregateRow:
    shift_id: str
    epsilon: float
    mean: dict = field(default_factory=dict)
    sd: dict | None = None


METRIC_COLUMNS = ("coverage", "avg_set_size", "correct_efficiency")


def run_validity_experiment(
    gen: GeneratorConfig,
    shifts: Mapping[str, ShiftConfig] | Sequence[ShiftConfig],
    k: int,
    grid: Sequence[float],
    n_seeds: int,
) -> list[ExperimentRow]:
    """Full pipeline per (shift, seed): generate, calibrate, p-values, sweep.

    Seeds are gen.seed + i (and shift.seed + i) for i in range(n_seeds);
    train and calibration are shared across shifts within a seed since
    shifts touch only the test set.
    """
    if n_seeds < 1:
        raise ValidationError("n_seeds must be >= 1")
    if not isinstance(shifts, Mapping):
        shifts = {f"shift{i}": s for i, s in enumerate(shifts)}
    if not shifts:
        raise ValidationError("at least one shift condition is required")
    per_shift: dict[str, list[ExperimentRow]] = {name: [] for name in shifts}
    for i in range(n_seeds):
        split_i = generate(replace(gen, seed=gen.seed + i))
        index = build_index(split_i.train)
        table = calibrate(split_i.calibration, index, k)
        for name, shift in shifts.items():
            shifted = apply_shift(split_i, replace(shift, seed=shift.seed + i))
            alphas, pvals = p_value_matrix(
                index, table, shifted.test.features, k, query_ids=shifted.test.ids
            )
            curve = sweep(pvals, shifted.test.labels, grid, alphas)
            for point in curve.points:
                per_shift[name].append(
                    ExperimentRow(
                        shift_id=name,
                        seed=gen.seed + i,
                        epsilon=point.epsilon,
                        coverage=point.coverage,
                        avg_set_size=point.avg_set_size,
                        correct_efficiency=point.correct_efficiency,
                    )
                )
    return [row for name in shifts for row in per_shift[name]]


def aggregate_rows(rows: Sequence[ExperimentRow]) -> list[AggregateRow]:
    """Mean and sample sd per (shift, epsilon); sd omitted for single seeds."""
    groups: dict[tuple[str, float], list[ExperimentRow]] = {}
    order: list[tuple[str, float]] = []
    for row in rows:
        key = (row.shift_id, row.epsilon)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)
    out = []
    for shift_id, epsilon in order:
        cell = groups[(shift_id, epsilon)]
        values = {m: np.asarray([getattr(r, m) for r in cell]) for m in METRIC_COLUMNS}
        mean = {m: float(v.mean()) for m, v in values.items()}
        sd = None
        if len(cell) > 1:
            sd = {m: float(v.std(ddof=1)) for m, v in values.items()}
        out.append(AggregateRow(shift_id=shift_id, epsilon=epsilon, mean=mean, sd=sd))
    return out


def experiment_to_csv(rows: Sequence[ExperimentRow], header_lines: Sequence[str] = ()) -> str:
    lines = [line.rstrip("\n") for line in header_lines]
    lines.append("shift_id,seed,epsilon,coverage,avg_set_size,correct_efficiency")
    for r in rows:
        lines.append(
            f"{r.shift_id},{r.seed},"
            + ",".join(
                format_float(v)
                for v in (r.epsilon, r.coverage, r.avg_set_size, r.correct_efficiency)
            )
        )
    return "\n".join(lines) + "\n"


def aggregate_to_csv(agg: Sequence[AggregateRow], header_lines: Sequence[str] = ()) -> str:
    with_sd = any(a.sd is not None for a in agg)
    cols = ["shift_id", "epsilon"]
    for m in METRIC_COLUMNS:
        cols.append(f"{m}_mean")
        if with_sd:
            cols.append(f"{m}_sd")
    lines = [line.rstrip("\n") for line in header_lines]
    lines.append(",".join(cols))
    for a in agg:
        parts = [a.shift_id, format_float(a.epsilon)]
        for m in METRIC_COLUMNS:
            parts.append(format_float(a.mean[m]))
            if with_sd:
                parts.append(format_float(a.sd[m]) if a.sd else "")
        lines.append(",".join(parts))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# config files (flat section.key=value lines)


def parse_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValidationError(f"row {lineno}: expected key=value, got {line!r}")
            out[key.strip()] = value.strip()
    return out


def parse_grid(text: str) -> list[float]:
    """Comma list ('0.05,0.1,0.2') or range syntax ('0.01:0.5:0.01')."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"grid range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValidationError(f"bad grid range {text!r}")
        n = int(round((stop - start) / step))
        return [round(start + i * step, 10) for i in range(n + 1)]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ValidationError(f"bad grid value {text!r}") from None


_GENERATOR_KEYS = {
    "n_classes": int,
    "dim": int,
    "n_train": int,
    "n_cal": int,
    "n_test": int,
    "separation": float,
    "spread": float,
    "seed": int,
}

_SHIFT_KEY_TYPES = {f.name: (int if f.name == "seed" else float) for f in fields(ShiftConfig)}


def experiment_setup_from_config(
    conf: Mapping[str, str],
) -> tuple[GeneratorConfig, dict[str, ShiftConfig], int, list[float], int, float]:
    """(generator, shifts, k, grid, n_seeds, headline_epsilon) from flat keys."""

    def require(key: str) -> str:
        if key not in conf:
            raise ValidationError(f"missing config key {key!r}")
        return conf[key]

    gen_kwargs = {}
    for name, typ in _GENERATOR_KEYS.items():
        raw = require(f"generator.{name}")
        try:
            gen_kwargs[name] = typ(raw)
        except ValueError:
            raise ValidationError(f"bad value for generator.{name}: {raw!r}") from None
    gen = GeneratorConfig(**gen_kwargs)

    k = int(require("run.k"))
    n_seeds = int(require("run.seeds"))
    grid = parse_grid(require("run.grid"))
    headline = float(conf.get("run.epsilon", "0.1"))

    shift_kwargs: dict[str, dict] = {}
    for key, raw in conf.items():
        if not key.startswith("shift."):
            continue
        _, _, rest = key.partition(".")
        name, sep, param = rest.rpartition(".")
        if not sep:
            raise ValidationError(f"shift key {key!r} must be shift.<name>.<param>")
        if param not in _SHIFT_KEY_TYPES:
            raise ValidationError(f"unknown shift parameter {param!r} in {key!r}")
        try:
            value = _SHIFT_KEY_TYPES[param](raw)
        except ValueError:
            raise ValidationError(f"bad value for {key}: {raw!r}") from None
        shift_kwargs.setdefault(name, {})[param] = value
    shifts = {name: ShiftConfig(**kw) for name, kw in shift_kwargs.items()}
    if not shifts:
        shifts = {"none": ShiftConfig()}
    return gen, shifts, k, grid, n_seeds, headline
