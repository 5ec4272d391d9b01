import io
import json
import logging
from pathlib import Path

import numpy as np

import ablations
import metrics
import pipeline
from corpus import SPLITS, LabelSpace
from errors import DataError, StorageError
from schemas.metrics_schema import MetricsReport

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("report", help="merge the reports of several runs into one table")
    parser.add_argument("--runs", nargs="+", required=True, help="run or ablation-suite directories")
    parser.add_argument("--format", choices=("json", "csv", "md"), default="md")
    parser.add_argument("--split", choices=SPLITS, default="test")
    parser.add_argument("--recompute", action="store_true",
                        help="rebuild metrics from the prediction dumps instead of the stored reports")
    parser.add_argument("--out", help="write the table here instead of stdout")
    parser.set_defaults(func=run)


def recompute_report(run_dir: Path, split: str) -> MetricsReport:
    label_space = LabelSpace.load(run_dir / "labels.tsv")
    _, scores, gold = metrics.load_predictions(run_dir / f"{split}_predictions.jsonl", label_space)
    config = pipeline.parse_config(pipeline.read_json(run_dir / "config.json"))
    threshold = pipeline.read_json(run_dir / "history.json")["threshold"]
    source = "per-label" if isinstance(threshold, list) else "dev"
    return metrics.evaluate(gold, scores, np.asarray(threshold), label_space, config.eval, split, source)


def collect_rows(run_dir: Path, split: str, recompute: bool) -> list[dict]:
    if (run_dir / "ablation.json").exists():
        return [{**row, "variant": f"{run_dir.name}/{row['variant']}"}
                for row in pipeline.read_json(run_dir / "ablation.json")]
    if recompute:
        return [ablations.report_row(run_dir.name, recompute_report(run_dir, split))]
    path = run_dir / f"{split}_report.json"
    if not path.exists():
        raise StorageError(f"{run_dir} has no {split}_report.json; run eval first or pass --recompute")
    return [ablations.report_row(run_dir.name, MetricsReport.model_validate(pipeline.read_json(path)))]


def render(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    if fmt == "csv":
        buffer = io.StringIO(newline="")
        ablations.write_csv_stream(buffer, rows)
        return buffer.getvalue()
    return ablations.markdown_table(rows)


def run(args) -> None:
    rows = []
    for run_dir in args.runs:
        rows.extend(collect_rows(Path(run_dir), args.split, args.recompute))
    if not rows:
        raise DataError("no runs to report")
    text = render(rows, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="")
        logger.info("report_written | runs=%d | path=%s", len(rows), args.out)
    else:
        print(text, end="")
