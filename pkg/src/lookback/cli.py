"""Command line entry points: probe, mine, decode, eval, report.

Every subcommand takes --config pointing at a TOML run file; --set overrides
individual keys; --dry-run reports the planned backend call count and stops
before any backend work. Exit codes: 0 success, 2 config error, 3 backend
error, 4 data-coverage error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from typing import Optional, Sequence

from .config import RunConfig, load_config
from .errors import (
    BackendError,
    ConfigError,
    CoverageError,
    DataIntegrityError,
    EmptyInputError,
    InsufficientDataError,
    LookbackError,
    ManifestError,
    PreconditionError,
    ProtocolViolationError,
    StreamInterruptedError,
    TransportError,
    UndefinedRateError,
)
from .pipeline import (
    StageResult,
    plan_decode,
    plan_probe,
    run_decode_stage,
    run_eval_stage,
    run_mine_stage,
    run_probe_stage,
    run_report_stage,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_DATA = 4

THRESHOLD_GUIDANCE = (
    "guidance: gather more traces, or set probe.q_p, probe.q_c and "
    "probe.q_g in the config to use manual thresholds"
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lookback",
        description="Uncertainty-guided lookback decoding pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True,
                       help="TOML run configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override a config value (JSON-parsed; repeatable)")
        p.add_argument("--dry-run", action="store_true",
                       help="print planned backend call count and exit")

    probe = sub.add_parser("probe", help="score traces under the three "
                                          "visual contexts and derive curves")
    common(probe)
    probe.add_argument("--traces", help="trace JSONL to probe "
                                        "(overrides paths.traces)")
    probe.add_argument("--force", action="store_true",
                       help="resume on top of outputs from a different config")

    mine = sub.add_parser("mine", help="mine pause phrases and lookback "
                                       "templates from probe records")
    common(mine)

    decode = sub.add_parser("decode", help="run controlled decoding passes")
    common(decode)
    decode.add_argument("--vocab", help="phrase vocabulary JSON "
                                        "(overrides paths.vocab)")
    decode.add_argument("--questions", help="question JSONL "
                                            "(overrides paths.questions)")
    decode.add_argument("--out", help="output trace JSONL "
                                      "(overrides paths.traces)")
    decode.add_argument("--passthrough", action="store_true",
                        help="decode without any injections (baseline)")
    decode.add_argument("--force", action="store_true",
                        help="resume on top of outputs from a different config")

    ev = sub.add_parser("eval", help="judge decoded traces against gold "
                                     "answers")
    common(ev)
    ev.add_argument("--method", default="ours",
                    help="method id stamped into the eval records")
    ev.add_argument("--traces", help="trace JSONL to judge "
                                     "(overrides paths.traces)")
    ev.add_argument("--out", help="output eval JSONL (default "
                                  "reports/eval_<method>.jsonl)")

    report = sub.add_parser("report", help="aggregate eval records into "
                                           "comparison tables")
    common(report)
    report.add_argument("--force", action="store_true",
                        help="combine eval records with mixed config hashes")

    return parser


def _apply_path_flags(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    paths = config.paths
    if getattr(args, "questions", None):
        paths = replace(paths, questions=args.questions)
    if getattr(args, "vocab", None):
        paths = replace(paths, vocab=args.vocab)
    if args.command in ("probe", "decode") and getattr(args, "traces", None):
        paths = replace(paths, traces=args.traces)
    if args.command == "decode" and getattr(args, "out", None):
        paths = replace(paths, traces=args.out)
    return replace(config, paths=paths)


def _print_result(command: str, result: StageResult) -> None:
    print(f"{command}: {result.backend_calls} backend call(s), "
          f"{result.skipped} skipped, {result.failures} failure(s)")
    for note in result.notes:
        print(f"  note: {note}")
    for output in result.outputs:
        print(f"  wrote {output}")


def _run(args: argparse.Namespace) -> int:
    config = load_config(args.config, overrides=args.overrides)
    config = _apply_path_flags(config, args)

    if args.dry_run:
        if args.command == "probe":
            planned = plan_probe(config)
        elif args.command == "decode":
            planned = plan_decode(config)
        else:
            planned = 0
        print(f"{args.command}: {planned} backend call(s) planned")
        return EXIT_OK

    if args.command == "probe":
        result = run_probe_stage(config, force=args.force)
    elif args.command == "mine":
        result = run_mine_stage(config)
    elif args.command == "decode":
        result = run_decode_stage(config, passthrough=args.passthrough,
                                  force=args.force)
    elif args.command == "eval":
        result = run_eval_stage(config, method_id=args.method,
                                traces_path=args.traces, out_path=args.out)
    elif args.command == "report":
        result = run_report_stage(config, force=args.force)
    else:  # pragma: no cover - argparse enforces the choices
        raise ConfigError(f"unknown command {args.command!r}")

    _print_result(args.command, result)
    if args.command == "decode" and result.failures:
        print(f"decode: {result.failures} pass(es) failed hard", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, EmptyInputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportError, ProtocolViolationError,
            StreamInterruptedError, BackendError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except InsufficientDataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        print(THRESHOLD_GUIDANCE, file=sys.stderr)
        return EXIT_DATA
    except (CoverageError, DataIntegrityError, ManifestError,
            UndefinedRateError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LookbackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
