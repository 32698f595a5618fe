"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .data import DatasetNotFoundError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("ntk_lens")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; usage errors are 1 here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ntk-lens", description="Empirical NTK observables across model, data and noise sweeps.")
    parser.add_argument("--version", action="version", version=f"ntk-lens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required: bool):
        p.add_argument("--config", required=config_required, type=Path, help="experiment YAML file")
        p.add_argument("--out", type=Path, help="output directory (default: output.dir from the config)")
        p.add_argument("--seed", type=int, help="override ensemble.base_seed")
        p.add_argument("--ntk-every", type=int, help="override training.ntk_every")
        p.add_argument("--verbose", "-v", action="store_true")

    p = sub.add_parser("run", help="train a single ensemble member at one sweep value")
    common(p, True)
    p.add_argument("--value", type=float, help="sweep value (default: the first one)")
    p.add_argument("--member", type=int, default=0, help="ensemble member index (default 0)")

    p = sub.add_parser("sweep", help="run every sweep value and ensemble member")
    common(p, True)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: logical cores)")
    p.add_argument("--resume", action="store_true", help="skip jobs already present in the records file")

    p = sub.add_parser("analyze", help="ensemble statistics, loss scaling and transition of a records file")
    p.add_argument("records", type=Path, help="records.jsonl or the directory holding it")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.add_argument("--verbose", "-v", action="store_true")

    p = sub.add_parser("verify", help="run the built-in numerical property suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", "-v", action="store_true")

    p = sub.add_parser("export-plots", help="write TSV panel data and SVG charts from records")
    p.add_argument("records", type=Path, help="records.jsonl or the directory holding it")
    p.add_argument("--out", type=Path, required=True, help="directory for TSV and SVG files")
    p.add_argument("--no-svg", action="store_true")
    p.add_argument("--verbose", "-v", action="store_true")
    return parser


def _records_path(p: Path) -> Path:
    from .experiments.records import RECORDS_FILE

    return p / RECORDS_FILE if p.is_dir() else p


def _load_config(args):
    from .experiments.config import load_config, with_overrides

    cfg = load_config(args.config)
    return with_overrides(cfg, ntk_every=args.ntk_every, seed=args.seed, output_dir=args.out)


def _progress(rec, done, total):
    k = rec.key
    summary = (
        f"L_min={k.min_test_loss:.4f} beta={k.trace_ratio:.3f} G_min={k.effective_rank_min:.2f} ep={k.epochs_to_min}"
        if k is not None
        else f"FAILED after epoch {rec.failed_epoch}"
    )
    print(f"[{done}/{total}] {rec.sweep_axis}={rec.sweep_value:g} seed={rec.seed} {summary} ({rec.wall_seconds:.1f}s)", flush=True)
    for w in rec.warnings:
        print(f"    warning: {w}", flush=True)


def cmd_run(args) -> int:
    from .experiments import records as rec_mod
    from .experiments.runner import run_single

    cfg = _load_config(args)
    value = cfg.sweep.values[0] if args.value is None else args.value
    if value not in cfg.sweep.values:
        print(f"error: --value {value:g} is not one of the sweep values {list(cfg.sweep.values)}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = run_single(cfg, value, args.member)
    writer = rec_mod.RecordWriter(out / rec_mod.RECORDS_FILE, cfg.config_hash)
    writer.append(rec)
    _, all_records = rec_mod.read_records(writer.path)
    rec_mod.write_summary(out / rec_mod.SUMMARY_FILE, all_records, cfg.config_hash)
    _progress(rec, 1, 1)
    return EXIT_OK if rec.ok else EXIT_RUNTIME


def cmd_sweep(args) -> int:
    from .experiments.runner import default_jobs, run_sweep

    cfg = _load_config(args)
    jobs = args.jobs if args.jobs is not None else default_jobs()
    if jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    print(f"sweep {cfg.name}: {cfg.sweep.axis} {list(cfg.sweep.values)} x {cfg.ensemble.count} members, config {cfg.config_hash}", flush=True)
    result = run_sweep(cfg, cfg.output_dir, jobs=jobs, resume=args.resume, progress=_progress)
    failed = sum(not r.ok for r in result.records)
    print(f"{result.executed} jobs run; {len(result.records)} records in {cfg.output_dir} ({failed} failed)", flush=True)
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .experiments.analysis import analyze, format_report
    from .experiments.records import read_records

    path = _records_path(args.records)
    if not path.exists():
        print(f"error: records not found: {path}", file=sys.stderr)
        return EXIT_USAGE
    _, records = read_records(path)
    if not records:
        print(f"error: no records in {path}", file=sys.stderr)
        return EXIT_RUNTIME
    report = analyze(records)
    print(json.dumps(report, indent=2, sort_keys=True) if args.json else format_report(report))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import format_table, run_checks

    checks = run_checks(args.seed)
    print(format_table(checks))
    failed = [c for c in checks if not c.passed]
    if failed:
        for c in failed:
            print(f"FAILED: {c.name} (residual {c.residual:.3e} > tolerance {c.tolerance:.1e})", file=sys.stderr)
        return EXIT_VERIFY
    print(f"all {len(checks)} checks passed")
    return EXIT_OK


def cmd_export_plots(args) -> int:
    from .experiments.plots import export_plots
    from .experiments.records import read_records

    path = _records_path(args.records)
    if not path.exists():
        print(f"error: records not found: {path}", file=sys.stderr)
        return EXIT_USAGE
    _, records = read_records(path)
    if not records:
        print(f"error: no records in {path}", file=sys.stderr)
        return EXIT_RUNTIME
    written = export_plots(records, args.out, svg=not args.no_svg)
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "verify": cmd_verify,
    "export-plots": cmd_export_plots,
}


def main(argv=None) -> int:
    from .experiments.config import ConfigError
    from .experiments.runner import SweepError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DatasetNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except PermissionError as exc:
        print(f"error: cannot write: {exc.filename or exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except SweepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
