import argparse

import metrics
import pipeline
from corpus import SPLITS


def _probability(value: str) -> float:
    t = float(value)
    if not 0 <= t <= 1:
        raise argparse.ArgumentTypeError(f"threshold must lie in [0, 1], got {value}")
    return t


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="evaluate a trained run on one split")
    parser.add_argument("--run", required=True, help="run directory written by train")
    parser.add_argument("--split", choices=SPLITS, default="test")
    parser.add_argument("--threshold", type=_probability, help="override the dev-tuned threshold")
    parser.add_argument("--dump-attention", type=int, default=0, metavar="K",
                        help="write the top-K attended positions per label to attention.jsonl")
    parser.set_defaults(func=run)


def run(args) -> None:
    report = pipeline.evaluate(args.run, args.split, args.threshold, args.dump_attention)
    print(metrics.format_table(report))
