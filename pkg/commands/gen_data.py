import pipeline
from commands.common import add_config_args, load


def register(subparsers) -> None:
    parser = subparsers.add_parser("gen-data", help="generate a synthetic corpus with stats")
    add_config_args(parser)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, help="overrides both the run seed and corpus.seed")
    parser.set_defaults(func=run)


def run(args) -> None:
    overrides = {} if args.seed is None else {"seed": args.seed, "corpus.seed": args.seed}
    pipeline.gen_data(load(args, overrides), args.out)
