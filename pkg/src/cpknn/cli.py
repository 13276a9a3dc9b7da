"""Deterministic command-line pipeline: split, calibrate, predict, evaluate, simulate.

Every subcommand is a pure function of its inputs and seed. Outputs are
written atomically and begin with header lines (CSV comments, a JSON
"meta" object, or an XML comment) recording the tool version and the
run's seed, k, and input fingerprints, so artifacts are self-describing.

Exit codes: 0 success, 1 I/O error, 2 validation error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from cpknn import __version__
from cpknn.charts import bar_chart, line_chart
from cpknn.conformal import (
    P_VALUE_MODES,
    calibrate,
    load_calibration_table,
    p_value_matrix,
    prediction_set,
    save_calibration_table,
    top1_labels,
)
from cpknn.errors import ValidationError
from cpknn.index import build_index, index_fingerprint
from cpknn.ioutil import atomic_write_text, format_float
from cpknn.metrics import default_grid, evaluate, sweep
from cpknn.simulate import (
    aggregate_rows,
    aggregate_to_csv,
    experiment_setup_from_config,
    experiment_to_csv,
    parse_config_file,
    parse_grid,
    run_validity_experiment,
)
from cpknn.store import SplitSpec, load_embeddings, normalize, save_split, split

PROG = "cpknn"


def _header_lines(**meta) -> list[str]:
    """CSV-style comment header; None values are skipped."""
    lines = [f"# {PROG} {__version__}"]
    lines += [f"# {key}={value}" for key, value in meta.items() if value is not None]
    return lines


def _json_meta(**meta) -> dict:
    out = {"tool": f"{PROG} {__version__}"}
    out.update({k: v for k, v in meta.items() if v is not None})
    return out


def _svg_with_header(svg: str, **meta) -> str:
    comment = "\n".join(
        [f"<!-- {PROG} {__version__} -->"]
        + [f"<!-- {k}={v} -->" for k, v in meta.items() if v is not None]
    )
    return comment + "\n" + svg


def _load(path: str, fmt: str, n_classes: int | None = None):
    return load_embeddings(path, fmt=fmt, n_classes=n_classes)


# ---------------------------------------------------------------------------
# split


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValidationError(f"fractions must be three comma-separated numbers, got {text!r}")
    try:
        a, b, c = (float(p) for p in parts)
    except ValueError:
        raise ValidationError(f"bad fractions {text!r}") from None
    return a, b, c


def cmd_split(args) -> int:
    emb = _load(args.input, args.format, args.n_classes)
    if args.group_aware == "auto":
        group_aware = len(emb) > 0 and all(g is not None for g in emb.groups)
    else:
        group_aware = args.group_aware == "on"
    spec = SplitSpec(
        fractions=_parse_fractions(args.fractions),
        seed=args.seed,
        stratified=args.stratified,
        group_aware=group_aware,
    )
    result = split(emb, spec)
    save_split(result, args.out, _header_lines(seed=args.seed, source=args.input))
    print(
        f"wrote {args.out}: train={len(result.train)} "
        f"cal={len(result.calibration)} test={len(result.test)}"
    )
    return 0


# ---------------------------------------------------------------------------
# calibrate


def cmd_calibrate(args) -> int:
    train = normalize(_load(args.train, args.format, args.n_classes))
    cal = normalize(_load(args.cal, args.format, train.n_classes))
    index = build_index(train)
    table = calibrate(cal, index, args.k)
    save_calibration_table(table, args.out, _header_lines(train=args.train, cal=args.cal))
    print(f"wrote {args.out}: n={table.n} k={table.k} fingerprint={table.fingerprint}")
    return 0


# ---------------------------------------------------------------------------
# predict


def _set_to_str(labels: np.ndarray) -> str:
    return "{" + "|".join(str(int(c)) for c in labels) + "}"


def predictions_to_csv(
    ids: Sequence[str],
    labels: np.ndarray,
    pvals: np.ndarray,
    alphas: np.ndarray,
    epsilon: float,
    header_lines: Sequence[str] = (),
) -> str:
    n, n_classes = pvals.shape
    top = top1_labels(pvals, alphas)
    lines = [line.rstrip("\n") for line in header_lines]
    lines.append("id,label," + ",".join(f"p{c}" for c in range(n_classes)) + ",set,top1")
    for i in range(n):
        pset = _set_to_str(prediction_set(pvals[i], epsilon))
        lines.append(
            f"{ids[i]},{int(labels[i])},"
            + ",".join(format_float(p) for p in pvals[i])
            + f",{pset},{int(top[i])}"
        )
    return "\n".join(lines) + "\n"


def load_predictions(path: str | Path):
    """(ids, labels, pvals, top1, meta) parsed back from a predictions CSV."""
    meta: dict[str, str] = {}
    ids: list[str] = []
    labels: list[int] = []
    rows: list[list[float]] = []
    top: list[int] = []
    n_classes = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                key, sep, value = body.partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            cells = line.split(",")
            if n_classes is None:
                if len(cells) < 5 or cells[0] != "id" or cells[1] != "label":
                    raise ValidationError(f"row {lineno}: unrecognized predictions header")
                n_classes = len(cells) - 4
                expected = [f"p{c}" for c in range(n_classes)]
                if cells[2:-2] != expected or cells[-2:] != ["set", "top1"]:
                    raise ValidationError(f"row {lineno}: unrecognized predictions header")
                continue
            if len(cells) != n_classes + 4:
                raise ValidationError(f"row {lineno}: expected {n_classes + 4} cells")
            try:
                ids.append(cells[0])
                labels.append(int(cells[1]))
                rows.append([float(c) for c in cells[2:-2]])
                top.append(int(cells[-1]))
            except ValueError:
                raise ValidationError(f"row {lineno}: malformed prediction row") from None
    if n_classes is None:
        raise ValidationError(f"{path}: no header row found")
    return (
        ids,
        np.asarray(labels, dtype=np.int64),
        np.asarray(rows, dtype=np.float64).reshape(len(rows), n_classes),
        np.asarray(top, dtype=np.int64),
        meta,
    )


def cmd_predict(args) -> int:
    train = normalize(_load(args.train, args.format, args.n_classes))
    index = build_index(train)
    table = load_calibration_table(args.table)
    if args.k is not None and args.k != table.k:
        raise ValidationError(f"--k {args.k} disagrees with the table's k={table.k}")
    test = normalize(_load(args.test, args.format, train.n_classes))
    alphas, pvals = p_value_matrix(
        index,
        table,
        test.features,
        table.k,
        mode=args.mode,
        seed=args.seed,
        query_ids=test.ids,
    )
    header = _header_lines(
        seed=args.seed,
        k=table.k,
        fingerprint=index_fingerprint(index, table.k),
        mode=args.mode,
        epsilon=format_float(args.epsilon),
    )
    text = predictions_to_csv(test.ids, test.labels, pvals, alphas, args.epsilon, header)
    atomic_write_text(args.out, text)
    print(f"wrote {args.out}: {len(test)} rows, epsilon={args.epsilon}")
    return 0


# ---------------------------------------------------------------------------
# evaluate / sweep


def cmd_evaluate(args) -> int:
    ids, labels, pvals, top, meta = load_predictions(args.predictions)
    if not ids:
        raise ValidationError(f"{args.predictions}: no prediction rows")
    grid = parse_grid(args.grid) if args.grid else default_grid()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    carried = {key: meta.get(key) for key in ("seed", "k", "fingerprint", "mode")}

    report = evaluate(pvals, None, labels, args.epsilon, top1_override=top)
    json_meta = _json_meta(source=str(args.predictions), **carried)
    atomic_write_text(out_dir / "report.json", report.to_json(json_meta))

    curve = sweep(pvals, labels, grid, top1_override=top)
    header = _header_lines(source=args.predictions, **carried)
    atomic_write_text(out_dir / "curve.csv", curve.to_csv(header))

    name = Path(args.predictions).stem
    if len(grid) >= 2:
        cov_pts = list(zip(curve.epsilons, curve.column("coverage")))
        ref = [(e, 1.0 - e) for e in grid]
        svg = line_chart(
            {name: cov_pts},
            title="Marginal coverage vs significance level",
            x_label="epsilon",
            y_label="coverage",
            reference=ref,
            reference_label="1 - epsilon",
        )
        atomic_write_text(out_dir / "coverage.svg", _svg_with_header(svg, **carried))
        bars = bar_chart(
            {name: report.correct_efficiency},
            title=f"Correct efficiency at epsilon={args.epsilon:g}",
            y_label="correct efficiency",
        )
        atomic_write_text(out_dir / "efficiency.svg", _svg_with_header(bars, **carried))
    print(f"wrote {out_dir}: {report}")
    return 0


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    conf = parse_config_file(args.config)
    gen, shifts, k, grid, n_seeds, headline = experiment_setup_from_config(conf)
    if args.k is not None:
        k = args.k
    if args.grid:
        grid = parse_grid(args.grid)
    if args.seeds is not None:
        n_seeds = args.seeds
    if args.epsilon is not None:
        headline = args.epsilon
    if args.seed is not None:
        gen = replace(gen, seed=args.seed)

    rows = run_validity_experiment(gen, shifts, k, grid, n_seeds)
    agg = aggregate_rows(rows)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = _header_lines(seed=gen.seed, k=k, seeds=n_seeds, config=args.config)
    atomic_write_text(out_dir / "experiment.csv", experiment_to_csv(rows, header))
    atomic_write_text(out_dir / "aggregate.csv", aggregate_to_csv(agg, header))

    if len(grid) >= 2:
        series = {}
        for a in agg:
            series.setdefault(a.shift_id, []).append((a.epsilon, a.mean["coverage"]))
        ref = [(e, 1.0 - e) for e in grid]
        svg = line_chart(
            series,
            title=f"Mean coverage over {n_seeds} seeds",
            x_label="epsilon",
            y_label="coverage",
            reference=ref,
            reference_label="1 - epsilon",
        )
        atomic_write_text(
            out_dir / "coverage.svg", _svg_with_header(svg, seed=gen.seed, k=k)
        )
        target = min(grid, key=lambda e: abs(e - headline))
        bars = {
            a.shift_id: a.mean["correct_efficiency"] for a in agg if a.epsilon == target
        }
        svg = bar_chart(
            bars,
            title=f"Mean correct efficiency at epsilon={target:g}",
            y_label="correct efficiency",
        )
        atomic_write_text(
            out_dir / "efficiency.svg", _svg_with_header(svg, seed=gen.seed, k=k)
        )
    print(f"wrote {out_dir}: {len(rows)} experiment rows, {len(agg)} aggregate rows")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Split conformal prediction on embedding vectors with k-NN scores.",
    )
    parser.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="partition one embedding file into train/cal/test")
    p.add_argument("--input", required=True, help="embedding CSV or JSONL")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--fractions", default="0.8,0.16,0.04", help="train,cal,test fractions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stratified", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument(
        "--group-aware",
        choices=("auto", "on", "off"),
        default="auto",
        help="auto enables it when every example carries a group",
    )
    p.add_argument("--n-classes", type=int, default=None, help="declare the label space size")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("calibrate", help="score a calibration set against a training index")
    p.add_argument("--train", required=True)
    p.add_argument("--cal", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--n-classes", type=int, default=None)
    p.add_argument("--out", required=True, help="calibration table CSV path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="per-example p-values, prediction sets, top-1")
    p.add_argument("--train", required=True)
    p.add_argument("--table", required=True, help="calibration table CSV")
    p.add_argument("--test", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--k", type=int, default=None, help="must match the table's k if given")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--mode", choices=P_VALUE_MODES, default="deterministic")
    p.add_argument("--seed", type=int, default=0, help="used by randomized mode")
    p.add_argument("--n-classes", type=int, default=None)
    p.add_argument("--out", required=True, help="predictions CSV path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser(
        "evaluate",
        aliases=["sweep"],
        help="metrics report, coverage curve, and charts from a predictions file",
    )
    p.add_argument("--predictions", required=True)
    p.add_argument("--epsilon", type=float, default=0.1, help="headline report level")
    p.add_argument("--grid", default=None, help="comma list or start:stop:step")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="synthetic shift experiment from a config file")
    p.add_argument("--config", required=True, help="flat section.key=value file")
    p.add_argument("--k", type=int, default=None, help="override run.k")
    p.add_argument("--grid", default=None, help="override run.grid")
    p.add_argument("--seeds", type=int, default=None, help="override run.seeds")
    p.add_argument("--epsilon", type=float, default=None, help="override run.epsilon")
    p.add_argument("--seed", type=int, default=None, help="override generator.seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{PROG}: i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
