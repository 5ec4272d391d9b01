"""Ablation suites: each varies one factor over shared data and seed, trains
every variant, evaluates it on the test split and writes one comparison table.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

from tqdm import tqdm

import pipeline
from errors import ConfigError
from schemas.experiment_schema import ExperimentConfig
from schemas.metrics_schema import MetricsReport
from settings import progress_disabled

logger = logging.getLogger(__name__)

REDUCED_LR = 2e-5
LENGTH_PAIRS = ((6144, 128), (3072, 256), (3072, 128), (3072, 64), (3072, 32))
COLUMNS = ("micro_f1", "macro_f1", "micro_auc", "macro_auc", "head_micro_f1", "tail_micro_f1")


@dataclass
class Variant:
    name: str
    overrides: dict = field(default_factory=dict)  # section -> field updates
    init: str = "random"


def _scaled(value: int, scale: float) -> int:
    return max(1, round(value * scale))


def suite_variants(suite: str, config: ExperimentConfig) -> list[Variant]:
    ablation = config.ablation
    if suite == "heads":
        return [Variant(kind, {"head": {"kind": kind}}) for kind in ("laat", "caml", "bertxml", "clsmean")]
    if suite == "pretrain":
        return [Variant("random-init"), Variant("mlm-init", init="mlm")]
    if suite == "lengths":
        variants = []
        for max_len, c in LENGTH_PAIRS:
            max_len, c = _scaled(max_len, ablation.length_scale), _scaled(c, ablation.length_scale)
            variants.append(Variant(f"len{max_len}-seg{c}", {"segmenter": {"max_doc_len": max_len, "segment_length": c},
                                                            "encoder": {"max_positions": c + 2}}))
        return variants
    if suite == "truncation":
        return [Variant("segment-pooling"),
                Variant("front-truncation", {"segmenter": {"truncation": "front"}}),
                Variant("back-truncation", {"segmenter": {"truncation": "back"}})]
    if suite == "top-k":
        variants = []
        for kind in ("laat", "clsmean"):
            variants.append(Variant(f"{kind}-full", {"head": {"kind": kind}}))
            variants.append(Variant(f"{kind}-top{ablation.top_k}",
                                    {"head": {"kind": kind}, "top_k_labels": ablation.top_k}))
        return variants
    if suite == "schedule":
        reduced = REDUCED_LR * ablation.lr_scale
        return [Variant("linear-peak"),
                Variant(f"linear-{reduced:.0e}", {"train": {"learning_rate": reduced}}),
                Variant("constant", {"train": {"schedule": "constant"}})]
    raise ConfigError(f"unknown ablation suite '{suite}'")


SUITES = ("heads", "pretrain", "lengths", "truncation", "top-k", "schedule")


def apply_variant(config: ExperimentConfig, variant: Variant, data_path: Path) -> ExperimentConfig:
    data = config.model_dump()
    data["corpus"] = None
    data["data_path"] = str(data_path)
    for section, updates in variant.overrides.items():
        if isinstance(updates, dict):
            data[section] = {**(data.get(section) or {}), **updates}
        else:
            data[section] = updates
    return pipeline.parse_config(data)


def report_row(name: str, report: MetricsReport) -> dict:
    row = {"variant": name, "micro_f1": report.micro_f1, "macro_f1": report.macro_f1,
           "micro_auc": report.micro_auc, "macro_auc": report.macro_auc,
           "head_micro_f1": report.head_micro_f1, "tail_micro_f1": report.tail_micro_f1}
    row.update({f"p@{k}": v for k, v in report.precision_at.items()})
    return row


def run_suite(suite: str, config: ExperimentConfig, out: str | Path) -> list[dict]:
    variants = suite_variants(suite, config)
    out_dir = pipeline.prepare_dir(out)
    data_path = Path(config.data_path) if config.data_path else pipeline.gen_data(config, out_dir / "data")
    data_path = data_path.resolve()

    pretrained = None
    if any(v.init == "mlm" for v in variants):
        base = apply_variant(config, Variant("pretrain"), data_path)
        pretrained = pipeline.pretrain(base, out_dir / "pretrain" / "encoder.ckpt")

    rows = []
    for variant in tqdm(variants, desc=suite, disable=progress_disabled()):
        logger.info("ablation_variant | suite=%s | variant=%s", suite, variant.name)
        variant_config = apply_variant(config, variant, data_path)
        run_dir = out_dir / variant.name
        init = str(pretrained) if variant.init == "mlm" else "random"
        pipeline.train(variant_config, run_dir, init)
        rows.append(report_row(variant.name, pipeline.evaluate(run_dir, "test")))

    write_tables(out_dir / "ablation", rows)
    logger.info("ablation_done | suite=%s | variants=%d | out=%s", suite, len(rows), out_dir)
    return rows


# --- Tables ---

def _cell(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{100 * value:.1f}"
    return str(value)


def _columns(rows: list[dict]) -> list[str]:
    """Fixed metric columns, with the p@K columns of the rows slotted in after the AUCs."""
    at_k = list(dict.fromkeys(key for row in rows for key in row if key.startswith("p@")))
    present = [c for c in COLUMNS if any(c in r for r in rows)]
    return ["variant"] + present[:4] + at_k + present[4:]


def markdown_table(rows: list[dict]) -> str:
    """Metric columns as percentages with one decimal, one row per variant."""
    columns = _columns(rows)
    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join(["---"] + ["---:"] * (len(columns) - 1)) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(_cell(row.get(c)) for c in columns) + " |")
    return "\n".join(lines) + "\n"


def write_csv_stream(stream, rows: list[dict]) -> None:
    """RFC-4180: CRLF line ends, quoting only where needed."""
    columns = _columns(rows)
    writer = csv.DictWriter(stream, fieldnames=columns, extrasaction="ignore", lineterminator="\r\n")
    writer.writeheader()
    writer.writerows(rows)


def write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        write_csv_stream(f, rows)


def write_tables(stem: Path, rows: list[dict]) -> None:
    pipeline.write_json(stem.with_suffix(".json"), rows)
    write_csv(stem.with_suffix(".csv"), rows)
    stem.with_suffix(".md").write_text(markdown_table(rows), encoding="utf-8")
