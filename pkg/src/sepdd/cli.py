"""Command-line entry point.

Verbs: ``run``, ``resume``, ``check-triggers``, ``tree``, ``report``, and
``replay-record``. Every verb is a thin shell over library calls; the same
outputs are available programmatically. Exit codes: 0 success, 2 config
error, 3 run failed (no valid node), 4 corrupt state.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backends import recordings_to_table
from .config import RunConfig
from .engine import resume_run
from .errors import (
    ConfigError,
    ConfigMismatch,
    CorruptJournal,
    MalformedEvent,
    MissingRunStarted,
    SepddError,
    SequenceGap,
)
from .gateway import TokenLedger
from .journal import JOURNAL_FILENAME, Journal, load_run
from .report import build_full_report, render_tree, tree_from_run_dir
from .triggers import check_triggers_now

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN_FAILED = 3
EXIT_CORRUPT = 4

_CORRUPT_ERRORS = (CorruptJournal, MissingRunStarted, SequenceGap, MalformedEvent)


def _error_record(exc: Exception) -> None:
    """Machine-readable error record on stderr."""
    print(
        json.dumps({"error": type(exc).__name__, "message": str(exc)}),
        file=sys.stderr,
    )


def _write_artifacts(run_dir: Path) -> None:
    replay = load_run(run_dir)
    report, text = build_full_report(replay)
    (run_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True), encoding="utf-8"
    )
    (run_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
    (run_dir / "tree.txt").write_text(
        render_tree(replay.graph, replay.metric_specs) + "\n", encoding="utf-8"
    )


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = RunConfig.load(args.config, overrides=args.set or ())
    except ConfigError as exc:
        _error_record(exc)
        return EXIT_CONFIG
    run_dir = config.run_dir
    journal_path = run_dir / JOURNAL_FILENAME
    if journal_path.exists() and journal_path.stat().st_size > 0:
        _error_record(ConfigError(f"run_dir already holds a journal: {journal_path}"))
        return EXIT_CONFIG
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.resolved.yaml").write_text(config.to_yaml(), encoding="utf-8")
    try:
        journal = Journal.create(run_dir)
        ledger = TokenLedger()
        engine = config.build_engine(journal, ledger)
        result = engine.run()
        journal.close()
    except SepddError as exc:
        _error_record(exc)
        return EXIT_RUN_FAILED
    _write_artifacts(run_dir)
    print((run_dir / "report.txt").read_text(encoding="utf-8"))
    return EXIT_OK if result.best is not None else EXIT_RUN_FAILED


def cmd_resume(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    config_path = Path(args.config) if args.config else run_dir / "config.resolved.yaml"
    try:
        config = RunConfig.load(config_path, overrides=args.set or ())
    except ConfigError as exc:
        _error_record(exc)
        return EXIT_CONFIG
    try:
        result = resume_run(
            run_dir,
            build_engine=lambda journal, ledger: config.build_engine(journal, ledger),
            config_hash=config.config_hash(),
            allow_config_mismatch=args.force_config,
        )
    except ConfigMismatch as exc:
        _error_record(exc)
        return EXIT_CONFIG
    except _CORRUPT_ERRORS as exc:
        _error_record(exc)
        return EXIT_CORRUPT
    except SepddError as exc:
        _error_record(exc)
        return EXIT_RUN_FAILED
    _write_artifacts(run_dir)
    print((run_dir / "report.txt").read_text(encoding="utf-8"))
    return EXIT_OK if result.best is not None else EXIT_RUN_FAILED


def cmd_check_triggers(args: argparse.Namespace) -> int:
    try:
        trigger = check_triggers_now(args.indicators, now=args.now)
    except ConfigError as exc:
        _error_record(exc)
        return EXIT_CONFIG
    print(json.dumps({"trigger": trigger.to_dict() if trigger else None}))
    return EXIT_OK


def cmd_tree(args: argparse.Namespace) -> int:
    try:
        print(tree_from_run_dir(args.run_dir))
    except _CORRUPT_ERRORS as exc:
        _error_record(exc)
        return EXIT_CORRUPT
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        replay = load_run(args.run_dir)
    except _CORRUPT_ERRORS as exc:
        _error_record(exc)
        return EXIT_CORRUPT
    report, text = build_full_report(replay)
    if args.json:
        Path(args.json).write_text(
            json.dumps(report, indent=2, sort_keys=True), encoding="utf-8"
        )
    print(text)
    return EXIT_OK


def cmd_replay_record(args: argparse.Namespace) -> int:
    recordings = Path(args.run_dir) / "recordings"
    if not recordings.is_dir():
        _error_record(ConfigError(f"no recordings directory under {args.run_dir}"))
        return EXIT_CONFIG
    count = recordings_to_table(recordings, args.out)
    print(f"wrote {count} playback entries to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sepdd",
        description="Self-evolving pipeline search: run, resume, inspect.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="start a fresh evolution run")
    run_p.add_argument("--config", required=True, help="YAML run configuration")
    run_p.add_argument(
        "--set",
        action="append",
        metavar="KEY.PATH=VALUE",
        help="override a config key (repeatable)",
    )
    run_p.set_defaults(func=cmd_run)

    resume_p = sub.add_parser("resume", help="continue an interrupted run")
    resume_p.add_argument("--run-dir", required=True)
    resume_p.add_argument(
        "--config",
        help="config file (default: <run-dir>/config.resolved.yaml)",
    )
    resume_p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE")
    resume_p.add_argument(
        "--force-config",
        action="store_true",
        help="resume even if the config hash differs from the journal",
    )
    resume_p.set_defaults(func=cmd_resume)

    check_p = sub.add_parser("check-triggers", help="evaluate evolution triggers")
    check_p.add_argument("--indicators", required=True, help="indicator file (YAML/JSON)")
    check_p.add_argument("--now", type=float, default=None, help="unix timestamp override")
    check_p.set_defaults(func=cmd_check_triggers)

    tree_p = sub.add_parser("tree", help="render the evolution tree")
    tree_p.add_argument("--run-dir", required=True)
    tree_p.set_defaults(func=cmd_tree)

    report_p = sub.add_parser("report", help="emit the run report")
    report_p.add_argument("--run-dir", required=True)
    report_p.add_argument("--json", help="also write the structured report here")
    report_p.set_defaults(func=cmd_report)

    record_p = sub.add_parser(
        "replay-record", help="convert recordings into a playback table"
    )
    record_p.add_argument("--run-dir", required=True)
    record_p.add_argument("--out", required=True, help="playback table directory")
    record_p.set_defaults(func=cmd_replay_record)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
