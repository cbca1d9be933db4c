"""Command-line entry point: ``dropnet <command> [options]``.

Exit status: 0 success, 2 failed audit or VOT-gate violation, 64 usage
error, 74 input/output or data error. ``DROPNET_SEED`` overrides the seed
when no ``--seed`` flag is given.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .audit import AuditReport, audit_matrix, strip_and_rebuild
from .conet import build_cooccurrence, net_stats
from .curricgraph import CurriculumError, build_graph, graph_stats, identify_bottlenecks
from .evalbench import (
    DEFAULT_CONFIGS,
    AblationReport,
    FoldPlanError,
    emit_reports,
    plan_folds,
    run_ablation,
)
from .featstack import FeatureMatrix, VotViolationError, build_full_matrix
from .ingest import DatasetError, SyntheticConfig, dataset_summary, generate_synthetic, load_dataset, write_dataset
from .learn import DEFAULT_GRID, GridSearchError

EXIT_OK = 0
EXIT_FAIL = 2
EXIT_USAGE = 64
EXIT_IO = 74
SEED_ENV = "DROPNET_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# helpers

def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _grid(args) -> dict:
    if args.grid is None:
        return {k: list(v) for k, v in DEFAULT_GRID.items()}
    grid = args.grid
    if isinstance(grid, str):
        try:
            grid = json.loads(Path(grid).read_text(encoding="utf-8")) if Path(grid).is_file() else json.loads(grid)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--grid is neither a JSON file nor JSON text: {exc}") from None
    if not isinstance(grid, dict):
        raise UsageError("--grid must be a JSON object")
    return {k: [v] if not isinstance(v, list) else v for k, v in grid.items()}


def _audit_matrix_for(ds, vot: int) -> FeatureMatrix:
    """The full M3 matrix with the gate off, so late columns reach the audit."""
    return build_full_matrix(ds, vot, gate=False)


def _run_audit(matrix: FeatureMatrix, args) -> AuditReport:
    return audit_matrix(matrix, args.vot, min_support=args.min_support,
                        purity_threshold=args.purity_threshold, r_threshold=args.r_threshold,
                        auc_threshold=args.auc_threshold)


def _save_audit(report: AuditReport, out: Path | None) -> None:
    sys.stdout.write(report.table())
    if out is not None:
        _write_text(out / "audit.json", report.to_json())
        _write_text(out / "audit.txt", report.table())


def _ablate(ds, args, exclude=()) -> AblationReport:
    plan = plan_folds(ds.cohort_sizes(), args.target_folds, args.min_test)
    shocks = args.shocks or None
    return run_ablation(ds, args.vot, plan, DEFAULT_CONFIGS, _grid(args), args.seed,
                        gate=not args.gate_off, exclude=exclude, inner_k=args.inner_k,
                        with_logit=not args.no_logit, shocks=shocks)


# --------------------------------------------------------------------------
# commands

def cmd_generate(args) -> int:
    cfg = SyntheticConfig(
        n_cohorts=args.n_cohorts,
        total_students=args.total_students,
        seed=args.seed,
        plant_leak_vars=args.plant_leaks,
        leak_purity=args.leak_purity,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = generate_synthetic(cfg)
    out = write_dataset(ds, args.out)
    s = dataset_summary(ds)
    print(f"wrote {s.n_students} students in {len(s.students_per_cohort)} cohorts to {out} "
          f"(dropout rate {s.dropout_rate:.3f})")
    return EXIT_OK


def cmd_export_matrix(args) -> int:
    ds = load_dataset(args.data)
    matrix = _audit_matrix_for(ds, args.vot)
    csv_path, spec_path = matrix.to_csv(args.out)
    print(f"wrote {matrix.n_features} columns x {len(matrix.outcome)} rows to {csv_path} (+ {spec_path.name})")
    return EXIT_OK


def cmd_audit(args) -> int:
    if (args.matrix is None) == (args.data is None):
        raise UsageError("give exactly one of --matrix or --data")
    if args.matrix is not None:
        matrix = FeatureMatrix.from_csv(args.matrix, args.columns)
    else:
        matrix = _audit_matrix_for(load_dataset(args.data), args.vot)
    report = _run_audit(matrix, args)
    _save_audit(report, Path(args.out) if args.out else None)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_ablate(args) -> int:
    ds = load_dataset(args.data)
    report = _ablate(ds, args, exclude=args.exclude or ())
    _write_text(Path(args.out), report.to_json())
    print(f"wrote ablation report for {len(report.plan)} folds to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        report = AblationReport.from_dict(json.loads(Path(args.report).read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{args.report}: not an ablation report ({exc})") from None
    paths = emit_reports(report, args.out, top_k=args.top_k)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    out = Path(args.out)
    ds = load_dataset(args.data)
    exclude: list[str] = []
    if not args.skip_audit:
        matrix = _audit_matrix_for(ds, args.vot)
        report = _run_audit(matrix, args)
        _save_audit(report, out)
        if not report.passed:
            if not args.fix:
                print("audit failed: stopping before ablation (use --fix to strip the flagged columns "
                      "or --skip-audit to proceed anyway)", file=sys.stderr)
                return EXIT_FAIL
            cleaned = strip_and_rebuild(matrix, report)
            recheck = _run_audit(cleaned, args)
            if not recheck.passed:
                print("audit still fails after stripping", file=sys.stderr)
                return EXIT_FAIL
            exclude = report.fatal_columns
            _write_text(out / "audit_fixed.json", recheck.to_json())
            print(f"stripped {', '.join(exclude)}; re-audit passes")
    report = _ablate(ds, args, exclude=exclude)
    _write_text(out / "report.json", report.to_json())
    emit_reports(report, out, top_k=args.top_k)
    sys.stdout.write((out / "model_comparison.csv").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_graph_stats(args) -> int:
    ds = load_dataset(args.data)
    g = build_graph(ds)
    stats = graph_stats(g, identify_bottlenecks(g, ds, vot=args.vot))
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def cmd_net_stats(args) -> int:
    ds = load_dataset(args.data)
    print(json.dumps(net_stats(ds, args.vot, args.seed), indent=2))
    if args.edges:
        rows = [(cohort, i, j, w) for cohort in ds.cohorts
                for i, j, w in build_cooccurrence(ds, cohort, args.vot).edges()]
        path = Path(args.edges)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("cohort_year", "student_i", "student_j", "weight"))
            w.writerows((c, i, j, repr(float(wt))) for c, i, j, wt in rows)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def _add_common(p, seed=True, vot=True):
    p.add_argument("--config", help="JSON file of option defaults (flags win)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    if vot:
        p.add_argument("--vot", type=int, default=3, help="observation boundary term (default 3)")
    if seed:
        p.add_argument("--seed", type=int, default=0, help=f"random seed (env {SEED_ENV} if unset)")


def _add_audit_opts(p):
    p.add_argument("--min-support", type=int, default=None)
    p.add_argument("--purity-threshold", type=float, default=0.995)
    p.add_argument("--r-threshold", type=float, default=0.95)
    p.add_argument("--auc-threshold", type=float, default=0.995)


def _add_ablation_opts(p):
    p.add_argument("--target-folds", type=int, default=16)
    p.add_argument("--min-test", type=int, default=30)
    p.add_argument("--inner-k", type=int, default=3)
    p.add_argument("--grid", default=None, help="JSON object (or file) of grid values")
    p.add_argument("--gate-off", action="store_true", help="let post-VOT columns through")
    p.add_argument("--no-logit", action="store_true", help="skip the logistic companion")
    p.add_argument("--top-k", type=int, default=20)
    p.set_defaults(shocks=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dropnet", description="Leakage-aware dropout prediction benchmark.")
    parser.add_argument("--version", action="version", version=f"dropnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    _add_common(p, vot=False)
    p.set_defaults(seed=42)
    p.add_argument("--out", required=True)
    p.add_argument("--n-cohorts", type=int, default=15)
    p.add_argument("--total-students", type=int, default=1343)
    p.add_argument("--plant-leaks", "--with-leaks", dest="plant_leaks", action="store_true")
    p.add_argument("--leak-purity", type=float, default=SyntheticConfig.leak_purity)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("export-matrix", help="assemble the full matrix (gate off) as CSV + column JSON")
    _add_common(p, seed=False)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_matrix)

    p = sub.add_parser("audit", help="leakage audit; exit 2 on failure")
    _add_common(p, seed=False)
    p.add_argument("--matrix", help="exported matrix CSV")
    p.add_argument("--columns", help="column-spec JSON (default: next to the CSV)")
    p.add_argument("--data", help="dataset directory (matrix is assembled with the gate off)")
    p.add_argument("--out", help="directory for audit.json and audit.txt")
    _add_audit_opts(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("ablate", help="run the M0-M3 ablation and write the report JSON")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--exclude", nargs="*", default=None, help="attributes to leave out")
    _add_ablation_opts(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="write CSV and Markdown tables from a report JSON")
    _add_common(p, seed=False, vot=False)
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", type=int, default=20)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="audit, then ablate and report")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--skip-audit", action="store_true", help="do not audit at all")
    p.add_argument("--fix", action="store_true", help="strip fatal columns and continue")
    _add_audit_opts(p)
    _add_ablation_opts(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("graph-stats", help="curriculum DAG summary as JSON")
    _add_common(p, seed=False)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_graph_stats)

    p = sub.add_parser("net-stats", help="per-cohort co-enrolment communities as JSON")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--edges", help="also write every cohort's edge list to this CSV")
    p.set_defaults(func=cmd_net_stats)
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv) -> argparse.Namespace:
    """Parse flags, layering config-file values and the seed variable under them."""
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = _subparser(parser, args.command)
    defaults = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        known = {a.dest for a in sub._actions}
        for key, value in doc.items():
            dest = key.replace("-", "_")
            if dest not in known and dest != "shocks":
                raise UsageError(f"config key {key!r} is not an option of {args.command}")
            defaults[dest] = value
    env = os.environ.get(SEED_ENV)
    if env is not None and hasattr(args, "seed"):
        try:
            defaults["seed"] = int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if defaults:
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"dropnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"dropnet: error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dropnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GridSearchError, FoldPlanError) as exc:
        print(f"dropnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VotViolationError as exc:
        print(f"dropnet: VOT gate: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, DatasetError, CurriculumError) as exc:
        print(f"dropnet: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
