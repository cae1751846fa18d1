"""Command-line entry point.

    energycomp train    --config cfg.json [--data DIR] [--out DIR] [--seed N]
    energycomp compress --method {stego,prune,lowrank} --config cfg.json
                        [--model FILE] [--data DIR] [--out DIR] [--seed N]
    energycomp report   --out DIR [--records DIR]

`train` runs the uncompressed baseline and saves its model; `compress`
loads that model, runs the method's search plus constrained retraining, and
writes its record; `report` collects the record JSONs into report.csv and
report.json. Any failure exits nonzero with a diagnostic instead of leaving
partial silent output. The seed falls back to $ENERGYCOMP_SEED, then 0.
"""

from __future__ import annotations

import argparse
import sys

from .experiment import (ExperimentConfig, collect_records, emit_report,
                         run_experiment)

__all__ = ["main"]


def _add_common(parser: argparse.ArgumentParser, model_flag: bool):
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--data", help="dataset directory (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    if model_flag:
        parser.add_argument("--model", help="baseline model file (overrides config)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="energycomp",
        description="Train desk-scale networks, compress them, and account "
                    "for the energy each run consumes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the uncompressed baseline")
    _add_common(p_train, model_flag=False)

    p_comp = sub.add_parser("compress", help="compress a trained baseline and retrain")
    p_comp.add_argument("--method", required=True,
                        choices=("stego", "prune", "lowrank"))
    _add_common(p_comp, model_flag=True)

    p_rep = sub.add_parser("report", help="collect records into report.csv/.json")
    p_rep.add_argument("--out", required=True, help="directory for report.csv/.json")
    p_rep.add_argument("--records", help="directory holding record_*.json "
                                         "(default: --out)")
    return parser


def _run(args) -> int:
    if args.command == "report":
        records = collect_records(args.records or args.out)
        if not records:
            print(f"error: no record_*.json files in "
                  f"{args.records or args.out}", file=sys.stderr)
            return 2
        from pathlib import Path

        csv_path = Path(args.out) / "report.csv"
        emit_report(records, csv_path)
        print(f"wrote {csv_path} and {csv_path.with_suffix('.json')} "
              f"({len(records)} records)")
        return 0

    overrides = {"data": args.data, "out": args.out, "seed": args.seed}
    if args.command == "train":
        overrides["method"] = "baseline"
    else:
        overrides["method"] = args.method
        overrides["model"] = args.model
    cfg = ExperimentConfig.from_json(args.config, **overrides)
    record = run_experiment(cfg)
    print(f"{record.model}/{record.method}: compression {record.compression_rate:.4f}, "
          f"accuracy {record.accuracy_baseline:.4f} -> {record.accuracy_compressed:.4f}, "
          f"{record.epochs} epochs, {record.kwh_it:.3e} kWh IT "
          f"({record.kwh_dc:.3e} kWh facility)")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _run(args)
    except Exception as exc:  # CLI boundary: turn failures into diagnostics
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
