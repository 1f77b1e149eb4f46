"""Command-line interface.

Subcommands: synth-corpus, train, estimate-rt60, evaluate, report.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .audio import read_wav
from .config import load_config
from .errors import DataError, NumericError
from .pipeline import (
    build_corpus,
    emit_report,
    load_report,
    report_paths,
    run_evaluation,
    run_training,
)
from .rt60 import EstimatorConfig, estimate_utterance

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ejam", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="synthesize the labeled corpus")
    p.add_argument("--config", required=True, help="experiment config JSON")

    p = sub.add_parser("train", help="train banks and baselines")
    p.add_argument("--config", required=True)
    p.add_argument("--only", choices=["eam", "ejam", "sbm", "esbm"], action="append",
                   help="train only the given system (repeatable)")

    p = sub.add_parser("estimate-rt60", help="blind RT60 estimate for a WAV file")
    p.add_argument("--in", dest="infile", required=True, help="mono 16-bit PCM WAV")
    p.add_argument("--grid-min", type=float, default=0.2, help="grid lower RT60 (s)")
    p.add_argument("--grid-max", type=float, default=1.2, help="grid upper RT60 (s)")
    p.add_argument("--grid-step", type=float, default=0.01, help="grid step (s)")
    p.add_argument("--json", action="store_true", help="emit machine-readable JSON")

    p = sub.add_parser("evaluate", help="run the system x condition sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--manifests", help="models directory (default <output_dir>/models)")

    p = sub.add_parser("report", help="re-emit report artifacts from a report.json")
    p.add_argument("--in", dest="indir", required=True,
                   help="directory containing report.json")
    p.add_argument("--format", choices=["csv", "json"], action="append",
                   help="output format (repeatable; default both)")
    return parser


def _cmd_synth_corpus(args) -> int:
    manifest = build_corpus(load_config(args.config))
    print(f"corpus written: {manifest}")
    return EXIT_OK


def _cmd_train(args) -> int:
    manifest = run_training(load_config(args.config), only=args.only)
    print(f"models written: {manifest}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    signal = read_wav(args.infile)
    cfg = EstimatorConfig(
        grid_min_rt60_s=args.grid_min,
        grid_max_rt60_s=args.grid_max,
        grid_step_s=args.grid_step,
    )
    estimate = estimate_utterance(signal, cfg)
    if args.json:
        curve = estimate.aggregated_curve
        payload = {
            "file": str(args.infile),
            "rt60_s": estimate.rt60_s,
            "rho_hat": estimate.rho_hat,
            "num_segments": len(estimate.per_segment),
            "aggregated_curve": {
                "rho": curve.rho.tolist(),
                "rt60_s": curve.rt60_s.tolist(),
                "mean_loglik": curve.loglik.tolist(),
            },
        }
        print(json.dumps(payload, indent=2))
    else:
        print(f"RT60 estimate: {estimate.rt60_s:.3f} s "
              f"(rho={estimate.rho_hat:.3f} 1/s, "
              f"{len(estimate.per_segment)} decay segments)")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    report = run_evaluation(cfg, models_dir=args.manifests)
    written = emit_report(report, report_paths(cfg))
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_report(args) -> int:
    indir = Path(args.indir)
    report_file = indir / "report.json" if indir.is_dir() else indir
    report = load_report(report_file)
    formats = tuple(args.format) if args.format else ("csv", "json")
    written = emit_report(report, report_file.parent, formats=formats)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "synth-corpus": _cmd_synth_corpus,
    "train": _cmd_train,
    "estimate-rt60": _cmd_estimate,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"ejam: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"ejam: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"ejam: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"ejam: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
