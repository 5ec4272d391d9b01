import argparse
import logging
import sys

from commands import ablate, evaluate, gen_data, pretrain, report, train
from errors import DocCoderError
from settings import configure_logging

logger = logging.getLogger("doccoder")

COMMANDS = (gen_data, pretrain, train, evaluate, ablate, report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="doccoder", description="Long-document multi-label coding experiments")
    parser.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"),
                        help="overrides DOCCODER_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Exit codes: 0 success, 2 config or usage error, 3 numerical failure, 4 I/O error."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        args.func(args)
    except DocCoderError as e:
        logger.error("command_failed | command=%s | error=%s", args.command, e.detail)
        return e.exit_code
    except OSError as e:
        logger.error("command_failed | command=%s | error=%s", args.command, e)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
