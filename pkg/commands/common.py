import argparse
from pathlib import Path

import pipeline


def add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config JSON file or preset name (default, quick, ablation)")
    parser.add_argument("--quick", action="store_true", help="use the quick preset when --config is not given")


def add_data_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="corpus directory written by gen-data (default: generate from config)")
    parser.add_argument("--permissive-labels", action="store_true",
                        help="drop dev/test label codes the training split never uses instead of failing")


def data_overrides(args) -> dict:
    overrides = {"permissive_labels": True} if args.permissive_labels else {}
    if args.data is None:
        return overrides
    path = Path(args.data).resolve()
    return {**overrides, "data_path": str(path), "corpus": None}


def load(args, overrides: dict | None = None):
    return pipeline.load_config(args.config, args.quick, overrides)
