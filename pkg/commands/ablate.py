import ablations
from commands.common import add_config_args, add_data_args, data_overrides, load


def register(subparsers) -> None:
    parser = subparsers.add_parser("ablate", help="train and compare the variants of one ablation suite")
    add_config_args(parser)
    parser.add_argument("--suite", required=True, choices=ablations.SUITES)
    add_data_args(parser)
    parser.add_argument("--out", required=True, help="suite output directory")
    parser.set_defaults(func=run)


def run(args) -> None:
    rows = ablations.run_suite(args.suite, load(args, data_overrides(args)), args.out)
    print(ablations.markdown_table(rows), end="")
