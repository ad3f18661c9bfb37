# -*- coding: utf-8 -*-
"""
Command line entry point.

    img2rna synth --out DIR
    img2rna preprocess [RAW_DIR] --out DIR
    img2rna train [COHORT_DIR] --out DIR
    img2rna eval CHECKPOINT_DIR [COHORT_DIR] --out DIR [--alpha X] [--oracle]
    img2rna compare REPORT_A REPORT_B

Omitted RAW_DIR and COHORT_DIR fall back to data.raw_dir and data.cohort_dir.

Progress goes to standard error, a one-line ``key=value`` summary to standard
output. Exit codes: 0 success, 2 configuration error, 3 input error (including
mismatched array shapes), 4 numeric failure.
"""
import argparse
import logging
import sys

from img2rna.config import data_dir, load_config
from img2rna.exceptions import ConfigError, DimensionError, InputError, NumericError
from img2rna.pipeline import cmd_compare, cmd_eval, cmd_preprocess, cmd_synth, cmd_train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4


def _common(parser):
    parser.add_argument("--config", help="YAML run configuration.")
    parser.add_argument("--seed", type=int, help="Overrides the configured seed.")
    parser.add_argument("--threads", type=int, default=1, help="Maximum worker processes.")
    parser.add_argument("--overwrite", action="store_true",
                        help="Allow writing into a non-empty output directory.")
    parser.add_argument("--verbose", "-v", action="store_true", help="Log progress.")


def build_parser():
    parser = argparse.ArgumentParser(prog="img2rna",
                                     description="Predict gene expression from tumour imaging.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate a synthetic cohort.")
    _common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("preprocess", help="Build a cohort from raw data.")
    _common(p)
    p.add_argument("raw_dir", nargs="?", help="Defaults to data.raw_dir of the config.")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="Train a model on a cohort.")
    _common(p)
    p.add_argument("cohort_dir", nargs="?", help="Defaults to data.cohort_dir of the config.")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="Evaluate a checkpoint on the test split.")
    _common(p)
    p.add_argument("checkpoint_dir")
    p.add_argument("cohort_dir", nargs="?", help="Defaults to data.cohort_dir of the config.")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, help="Family-wise error rate.")
    p.add_argument("--oracle", action="store_true",
                   help="Use the true targets as predictions (pipeline check).")

    p = sub.add_parser("compare", help="Compare two evaluation reports.")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--verbose", "-v", action="store_true", help="Log progress.")
    return parser


def format_summary(summary):
    """Format a flat summary as space-separated ``key=value`` pairs."""
    parts = []
    for key, value in summary.items():
        if isinstance(value, float):
            value = "%.6g" % value
        parts.append("%s=%s" % (key, "none" if value is None else value))
    return " ".join(parts)


def run(args):
    if args.command == "compare":
        return cmd_compare(args.report_a, args.report_b)

    overrides = {"seed": args.seed}
    if args.command == "eval":
        overrides["eval.alpha"] = args.alpha
    config = load_config(args.config, overrides)

    if args.command == "synth":
        return cmd_synth(config, args.out, overwrite=args.overwrite)
    if args.command == "preprocess":
        return cmd_preprocess(config, data_dir(config, "raw_dir", args.raw_dir), args.out,
                              overwrite=args.overwrite, worker_cnt=args.threads)

    cohort_dir = data_dir(config, "cohort_dir", args.cohort_dir)
    if args.command == "train":
        return cmd_train(config, cohort_dir, args.out, overwrite=args.overwrite)
    return cmd_eval(config, args.checkpoint_dir, cohort_dir, args.out,
                    overwrite=args.overwrite, oracle=args.oracle, worker_cnt=args.threads)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    try:
        summary = run(args)
    except ConfigError as e:
        logging.getLogger("img2rna").error("Configuration error: %s", e)
        return EXIT_CONFIG
    except NumericError as e:
        logging.getLogger("img2rna").error("Numeric failure: %s", e)
        return EXIT_NUMERIC
    except (InputError, DimensionError) as e:
        logging.getLogger("img2rna").error("Input error: %s", e)
        return EXIT_INPUT
    print(format_summary(summary))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
