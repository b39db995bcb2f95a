"""Command-line front end: ``xferscore {score,evaluate,synth,bench,stability}``.

Exit status is 0 on success, 2 for invalid input and 3 for numerical
failure.  Every output starts with a ``#`` header line carrying the
version, seed and thread count.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from threadpoolctl import threadpool_limits

from . import __version__
from ._rng import derive_seed, stream
from .bench import (
    GRIDS,
    PATHOLOGY_COLUMNS,
    STABILITY_COLUMNS,
    STABILITY_PRESETS,
    TIMING_COLUMNS,
    BenchConfig,
    class_count_sweep,
    default_threads,
    imbalance_sweep,
    median_ratios,
    run_header,
    run_stability,
    run_timing,
    stability_records,
    timing_records,
    timing_summary,
    to_json,
    to_tsv,
)
from .errors import NumericalError, ValidationError
from .evalharness import REPORT_COLUMNS, SOFTPRED_METRICS, MetricContext, compute_metric, evaluate, format_report_table, resolve_metrics
from .matrixio import TaskRecord, load_feature_matrix, load_labels, load_soft_predictions, load_task_bundle, write_labels, write_matrix, write_task_bundle
from .projection import common_projection_dim
from .synthgen import SyntheticSpec, linear_soft_predictor, make_classification, nearest_mean_accuracy

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _csv_list(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


def _int_list(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in _csv_list(raw))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}") from exc


def _project_arg(raw: str) -> int | str:
    if raw == "auto":
        return raw
    try:
        return int(raw)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer or 'auto', got {raw!r}") from exc


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _detail(d: dict) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    return ";".join(f"{k}={fmt(v)}" for k, v in d.items()) or "-"


def _blas_limit(threads: int | None):
    return threadpool_limits(limits=threads) if threads else threadpool_limits(limits=None)


def cmd_score(args) -> int:
    metrics = resolve_metrics(_csv_list(args.metrics))
    needs_soft = sorted(m for m in metrics if m in SOFTPRED_METRICS)
    if needs_soft and args.softpred is None:
        raise ValidationError(f"metrics {', '.join(needs_soft)} need --softpred")
    F = load_feature_matrix(args.features)
    labels = load_labels(args.labels)
    if labels.labels.size != F.shape[0]:
        raise ValidationError(f"{labels.labels.size} labels for {F.shape[0]} feature rows")
    soft = load_soft_predictions(args.softpred) if args.softpred is not None else None
    if soft is not None and soft.shape[0] != F.shape[0]:
        raise ValidationError(f"{soft.shape[0]} soft prediction rows for {F.shape[0]} feature rows")
    ctx = MetricContext(F, labels.labels, soft, args.seed, args.project)
    rows = []
    with _blas_limit(args.threads):
        for name in metrics:
            res = compute_metric(name, ctx)
            if not math.isfinite(res.value):
                raise NumericalError(f"metric {name} is not finite")
            rows.append({"metric": name, "value": res.value, "detail": res.detail})
    header = run_header(args.seed, args.threads)
    if args.format == "json":
        text = to_json(rows, header)
    else:
        text = to_tsv([{**r, "value": repr(r["value"]), "detail": _detail(r["detail"])} for r in rows], ("metric", "value", "detail"), header)
    _emit(text, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    bundle = load_task_bundle(args.manifest)
    metrics = _csv_list(args.metrics)
    threads = args.threads or 1
    project = args.project
    if project == "auto":
        project = common_projection_dim(t.load_features().shape[1] for t in bundle)
    result = evaluate(bundle, metrics, target=args.target, seed=args.seed, project_to=project, threads=threads, method=args.pvalue)
    header = run_header(args.seed, args.threads, target=result.reports[0].target, tasks=len(result.task_ids))
    if args.format == "json":
        text = to_json([r.as_dict() for r in result.reports], header)
    elif args.table:
        text = header + "\n" + format_report_table(result.reports)
    else:
        recs = [
            {
                "metric": r.metric_name,
                "r_pearson": r.r_pearson,
                "p_pearson": r.p_pearson,
                "r_spearman": r.r_spearman,
                "p_spearman": r.p_spearman,
                "n": r.n,
                "sig_flag": r.sig_flag,
            }
            for r in result.reports
        ]
        text = to_tsv(recs, REPORT_COLUMNS, header)
    _emit(text, args.out)
    for (task_id, metric), err in sorted(result.errors.items()):
        print(f"warning: {metric} failed on task {task_id}: {err}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "fmb" if args.file_format == "fmb" else "csv"
    lab_ext = "flb" if args.file_format == "fmb" else "txt"
    records = []
    for k in range(args.tasks):
        if args.tasks == 1:
            task_seed, sep, task_id = args.seed, args.class_sep, f"synth-{args.seed}"
        else:
            task_seed = derive_seed(args.seed, "synth-task", k)
            sep = args.class_sep * float(stream(args.seed, "synth-class-sep", k).uniform(0.25, 1.5))
            task_id = f"synth-{args.seed}-{k:03d}"
        spec = SyntheticSpec(
            n=args.n,
            d=args.d,
            d_informative=args.informative,
            C=args.classes,
            class_sep=sep,
            seed=task_seed,
            within_condition=args.within_condition,
        )
        F, y = make_classification(spec)
        feat = out_dir / f"{task_id}.features.{ext}"
        lab = out_dir / f"{task_id}.labels.{lab_ext}"
        write_matrix(feat, F, args.file_format)
        write_labels(lab, y)
        soft = None
        if args.source_classes:
            theta = linear_soft_predictor(F, args.source_classes, stream(task_seed, "synth-softpred"))
            soft = out_dir / f"{task_id}.softpred.{ext}"
            write_matrix(soft, theta, args.file_format)
        acc = nearest_mean_accuracy(F, y, seed=task_seed)
        records.append(TaskRecord(id=task_id, features=feat, labels=lab, accuracy=acc, softpred=soft, num_classes=args.classes, extra={"class_sep": sep}))
    manifest = out_dir / "manifest.tsv"
    write_task_bundle(manifest, records)
    header = run_header(args.seed, args.threads)
    recs = [
        {
            "id": r.id,
            "features": str(r.features),
            "labels": str(r.labels),
            "softpred": str(r.softpred) if r.softpred else "-",
            "accuracy": r.accuracy,
            "num_classes": r.num_classes,
        }
        for r in records
    ]
    if args.format == "json":
        text = to_json(recs, header, manifest=str(manifest))
    else:
        text = to_tsv(recs, ("id", "features", "labels", "softpred", "accuracy", "num_classes"), header)
    _emit(text, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    threads = args.threads or 1
    config = BenchConfig(grid=GRIDS[args.grid], repetitions=args.reps, warmup=args.warmup, seed=args.seed, threads=threads)

    def progress(msg: str) -> None:
        if not args.quiet:
            print(msg, file=sys.stderr)

    cells = run_timing(config, progress)
    header = run_header(args.seed, threads, grid=args.grid, reps=args.reps, warmup=args.warmup)
    records = timing_records(cells)
    if args.format == "json":
        text = to_json(records, header, summary=timing_summary(cells))
    else:
        text = to_tsv(records, TIMING_COLUMNS, header)
    _emit(text, args.out)
    if not args.quiet:
        for s in timing_summary(cells):
            print(f"n={s['n']} d={s['d']} C={s['C']} logme/hscore_shrunk={s['logme_over_hscore_shrunk']:.2f}", file=sys.stderr)
    return EXIT_OK


def cmd_stability(args) -> int:
    header = run_header(args.seed, args.threads, preset=args.preset, sweep=args.sweep)
    with _blas_limit(args.threads):
        if args.sweep == "size":
            config = STABILITY_PRESETS[args.preset]
            seeds = args.seeds if args.seeds is not None else tuple(args.seed + s for s in config.seeds)
            config = replace(config, seeds=seeds)
            if args.n_reference is not None:
                config = replace(config, n_reference=args.n_reference)
            progress = None if args.quiet else (lambda m: print(m, file=sys.stderr))
            rows = run_stability(config, progress)
            records = stability_records(rows)
            columns = STABILITY_COLUMNS
            if not args.quiet:
                med = median_ratios(rows)
                for n in config.sample_sizes:
                    print(f"n={n} median H/ref={med[('hscore', n)]:.3f} H_alpha/ref={med[('hscore_shrunk', n)]:.3f}", file=sys.stderr)
        else:
            sweep = class_count_sweep if args.sweep == "classes" else imbalance_sweep
            rows = sweep(seed=args.seed)
            records = [r.__dict__ for r in rows]
            columns = PATHOLOGY_COLUMNS
    text = to_json(records, header) if args.format == "json" else to_tsv(records, columns, header)
    _emit(text, args.out)
    return EXIT_OK


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--format", choices=("tsv", "json"), default="tsv", help="output format")
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.add_argument("--threads", type=int, default=default_threads(), help="thread count (default $XFERSCORE_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xferscore", description="Transferability scores for pretrained features.")
    parser.add_argument("--version", action="version", version=f"xferscore {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score one feature/label pair")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--softpred", default=None)
    p.add_argument("--metrics", default="hscore_shrunk", help="comma-separated metric names or 'all'")
    p.add_argument("--project", type=int, default=None, help="random projection width for hscore_shrunk")
    _common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="correlate metrics with accuracy over a task manifest")
    p.add_argument("manifest")
    p.add_argument("--metrics", default="all")
    p.add_argument("--target", choices=("accuracy", "relative"), default="accuracy")
    p.add_argument("--project", type=_project_arg, default=None, help="projection width for hscore_shrunk, or 'auto' for min(d) capped at 128")
    p.add_argument("--pvalue", choices=("t", "permutation"), default="t")
    p.add_argument("--table", action="store_true", help="human-readable table instead of TSV")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write synthetic tasks and a manifest")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--informative", type=int, required=True)
    p.add_argument("--class-sep", type=float, default=1.0)
    p.add_argument("--within-condition", type=float, default=1.0)
    p.add_argument("--tasks", type=int, default=1)
    p.add_argument("--source-classes", type=int, default=0, help="also write soft predictions with this many source classes")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--file-format", choices=("fmb", "csv"), default="fmb")
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="timing comparison")
    p.add_argument("--grid", choices=sorted(GRIDS), default="table5")
    p.add_argument("--reps", type=int, default=7)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--quiet", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stability", help="estimator stability versus sample size, or class-count/imbalance sweeps")
    p.add_argument("--preset", choices=sorted(STABILITY_PRESETS), default="desk")
    p.add_argument("--sweep", choices=("size", "classes", "imbalance"), default="size")
    p.add_argument("--seeds", type=_int_list, default=None, help="comma-separated seeds (overrides the preset)")
    p.add_argument("--n-reference", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_stability)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
