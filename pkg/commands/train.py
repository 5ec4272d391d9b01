import logging

import pipeline
from commands.common import add_config_args, add_data_args, data_overrides, load

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="fine-tune encoder and head, keeping the best dev checkpoint")
    add_config_args(parser)
    add_data_args(parser)
    parser.add_argument("--init", default="random", help="pretrained encoder checkpoint, or 'random'")
    parser.add_argument("--out", required=True, help="run directory")
    parser.set_defaults(func=run)


def run(args) -> None:
    result = pipeline.train(load(args, data_overrides(args)), args.out, args.init)
    logger.info("train_done | best_epoch=%d | dev_micro_f1=%.4f", result.best_epoch, result.best_report.micro_f1)
