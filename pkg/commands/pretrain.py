import pipeline
from commands.common import add_config_args, add_data_args, data_overrides, load


def register(subparsers) -> None:
    parser = subparsers.add_parser("pretrain", help="masked-language-model pretraining of a fresh encoder")
    add_config_args(parser)
    add_data_args(parser)
    parser.add_argument("--out", required=True, help="checkpoint path")
    parser.set_defaults(func=run)


def run(args) -> None:
    pipeline.pretrain(load(args, data_overrides(args)), args.out)
