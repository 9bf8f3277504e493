"""Command-line entry points.

``steerbench run --config cfg.json``    execute a benchmark sweep
``steerbench annotate --suite id ...``  emit an annotated demo dataset
``steerbench report --in trials.csv``   recompute summary tables
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import annotate as annotate_mod
from . import bench


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = bench.load_config(args.config)
    except bench.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        result = bench.run_suite(cfg)
    except bench.SelfCheckError as e:
        print(f"self-check failed: {e}", file=sys.stderr)
        return 1
    for key, value in result.items():
        print(f"{key}: {value}")
    return 0


def _cmd_annotate(args: argparse.Namespace) -> int:
    dataset = annotate_mod.build_dataset(args.suite, args.episodes, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    annotate_mod.write_dataset(out, dataset)
    report = annotate_mod.validate_annotations(dataset)
    report_path = out.with_suffix(out.suffix + ".report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"dataset: {out}")
    print(f"report: {report_path}")
    print(
        f"episodes: {report.episodes}  segments: {report.segments}  "
        f"violations: {len(report.violations)}"
    )
    return 0 if report.ok() else 1


def _cmd_report(args: argparse.Namespace) -> int:
    records = bench.read_trials_csv(args.infile)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = bench.summarize(records)
    bench.write_summary_csv(out_dir / "summary.csv", summary)
    breakdown = bench.latency_breakdown(records)
    with open(out_dir / "latency_breakdown.csv", "w", encoding="utf-8") as fh:
        fh.write("k,sample_ms_per_step,verify_ms_per_step,total_ms_per_step\n")
        for row in breakdown:
            fh.write(
                f"{row['k']},{row['sample_ms_per_step']:.6f},"
                f"{row['verify_ms_per_step']:.6f},{row['total_ms_per_step']:.6f}\n"
            )
    print(f"summary: {out_dir / 'summary.csv'}")
    print(f"latency: {out_dir / 'latency_breakdown.csv'}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="steerbench",
        description="virtual-time benchmark for verifier-steered policies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a benchmark sweep from a JSON config")
    p_run.add_argument("--config", required=True, help="path to config JSON")
    p_run.set_defaults(func=_cmd_run)

    p_ann = sub.add_parser("annotate", help="emit an annotated expert dataset")
    p_ann.add_argument("--suite", default="id")
    p_ann.add_argument("--episodes", type=int, required=True)
    p_ann.add_argument("--seed", type=int, default=0)
    p_ann.add_argument("--out", required=True)
    p_ann.set_defaults(func=_cmd_annotate)

    p_rep = sub.add_parser("report", help="summarize a trial CSV")
    p_rep.add_argument("--in", dest="infile", required=True)
    p_rep.add_argument("--out", required=True)
    p_rep.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
