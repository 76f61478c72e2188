"""Command-line interface.

Subcommands:
  verify       score candidates against the configured constraints
  build        full pipeline: verify, resolve groups, select pairs, report
  losses       loss reference values over a scored file
  mock-sample  generate a synthetic corpus from the config's mock grammar
  report       recompute the CSR report (and figures) from a scored file

Exit codes: 0 success, 1 configuration error, 2 data error beyond the
reject threshold, 3 internal invariant violation or runtime failure.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from .config import load_config
from .errors import CsrPipeError
from .pipeline import (
    RunOptions,
    run_losses,
    run_pipeline,
    run_report,
    run_verify,
    write_mock_corpus,
)


def _add_common_run_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="pipeline config (YAML)")
    parser.add_argument("--input", required=True, help="line-delimited instance file")
    parser.add_argument("--out-dir", required=True, help="output directory")
    parser.add_argument("--workers", type=int, default=1, help="verification workers")
    parser.add_argument(
        "--deterministic-order",
        action="store_true",
        help="force byte-stable output order even with multiple workers",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csrpipe",
        description=(
            "Verify instruction constraints over sampled candidate responses "
            "and emit CSR-ranked preference data."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="score candidates, emit scores only")
    _add_common_run_args(p_verify)

    p_build = sub.add_parser("build", help="run the full pipeline")
    _add_common_run_args(p_build)
    p_build.add_argument("--seed", type=int, default=None, help="override config seed")
    p_build.add_argument(
        "--holdout",
        type=float,
        default=0.0,
        help="fraction of groups routed to the holdout split",
    )
    p_build.add_argument("--emit-loss", action="store_true", help="write losses.jsonl")
    p_build.add_argument(
        "--emit-ranked", action="store_true", help="write ranked.jsonl"
    )
    p_build.add_argument(
        "--emit-scores", action="store_true", help="write scores.jsonl"
    )
    p_build.add_argument(
        "--no-figures", action="store_true", help="skip rendering report figures"
    )

    p_losses = sub.add_parser("losses", help="loss oracle over a scored file")
    p_losses.add_argument("--config", required=True)
    p_losses.add_argument("--scores", required=True, help="scores.jsonl from verify")
    p_losses.add_argument("--out", required=True, help="output losses file")

    p_mock = sub.add_parser("mock-sample", help="generate a synthetic corpus")
    p_mock.add_argument("--config", required=True)
    p_mock.add_argument("--n", type=int, required=True, help="number of prompts/groups")
    p_mock.add_argument(
        "--candidates", type=int, default=2, help="candidates per instance"
    )
    p_mock.add_argument("--seed", type=int, default=None, help="override config seed")
    p_mock.add_argument("--out", required=True, help="output instance file")

    p_report = sub.add_parser("report", help="CSR report from a scored file")
    p_report.add_argument("--scores", required=True, help="scores.jsonl from verify")
    p_report.add_argument("--out-dir", required=True)
    p_report.add_argument("--no-figures", action="store_true")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            config = load_config(args.config)
            report = run_verify(
                config,
                args.input,
                args.out_dir,
                RunOptions(
                    workers=args.workers,
                    deterministic_order=args.deterministic_order,
                ),
            )
            print(
                f"scored {report.candidates_scored} candidates over "
                f"{report.instances_in - report.lines_rejected} instances "
                f"({report.lines_rejected} lines rejected) -> "
                f"{Path(args.out_dir) / 'scores.jsonl'}"
            )
        elif args.command == "build":
            config = load_config(args.config)
            report = run_pipeline(
                config,
                args.input,
                args.out_dir,
                RunOptions(
                    seed=args.seed,
                    holdout=args.holdout,
                    emit_loss=args.emit_loss,
                    emit_ranked=args.emit_ranked,
                    emit_scores=args.emit_scores,
                    workers=args.workers,
                    deterministic_order=args.deterministic_order,
                    figures=not args.no_figures,
                ),
            )
            print(
                f"emitted {report.pairs_emitted} pairs "
                f"(+{report.holdout_pairs_emitted} holdout) from "
                f"{report.instances_in} input lines; "
                f"{report.instances_skipped} instances yielded no pairs"
            )
        elif args.command == "losses":
            config = load_config(args.config)
            count = run_losses(config, args.scores, args.out)
            print(f"wrote {count} loss records -> {args.out}")
        elif args.command == "mock-sample":
            config = load_config(args.config)
            count = write_mock_corpus(
                config,
                args.out,
                n_prompts=args.n,
                n_candidates=args.candidates,
                seed=args.seed,
            )
            print(f"wrote {count} instances -> {args.out}")
        elif args.command == "report":
            report = run_report(
                args.scores, args.out_dir, figures=not args.no_figures
            )
            print(
                f"report over {report.candidates_scored} scored candidates -> "
                f"{Path(args.out_dir) / 'report.txt'}"
            )
        else:  # pragma: no cover - argparse enforces the choices
            raise AssertionError(args.command)
    except CsrPipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception:  # unexpected crash: report as an internal failure
        traceback.print_exc()
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
