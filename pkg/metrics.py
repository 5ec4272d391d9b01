"""Multi-label evaluation: micro/macro F1, micro/macro ROC-AUC, precision@K and
head/tail breakdowns, plus the prediction dump format.

Inputs are documents×labels arrays: ``gold`` and ``decisions`` hold 0/1,
``scores`` hold probabilities. Conventions:

- F1 is 0 whenever its denominator 2TP+FP+FN is 0; macro-F1 averages over every
  label, zero-support labels included.
- AUC is the Mann-Whitney statistic with midranks for ties; macro-AUC skips
  labels that lack either class and reports how many it skipped.
- precision@K breaks score ties by the lower label id.
"""
import json
import logging
import math
from pathlib import Path

import numpy as np
from pydantic import ValidationError
from scipy.stats import rankdata

from corpus import LabelSpace
from errors import DataError, ShapeError, StorageError
from schemas.metrics_schema import EvalConfig, LabelRow, MetricsReport, PredictionRecord

logger = logging.getLogger(__name__)


def _as_batch(op: str, gold, other) -> tuple[np.ndarray, np.ndarray]:
    gold = np.atleast_2d(np.asarray(gold))
    other = np.atleast_2d(np.asarray(other))
    if gold.shape != other.shape:
        raise ShapeError(op, gold.shape, other.shape)
    if gold.shape[0] == 0:
        raise DataError(f"{op}: empty batch")
    return gold.astype(bool), other


def _f1(tp, fp, fn):
    tp, fp, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn))
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(denom), where=denom > 0)


def confusion(gold, decisions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-label TP, FP, FN counts."""
    gold, decisions = _as_batch("confusion", gold, decisions)
    decisions = decisions.astype(bool)
    tp = (gold & decisions).sum(axis=0)
    fp = (~gold & decisions).sum(axis=0)
    fn = (gold & ~decisions).sum(axis=0)
    return tp, fp, fn


def micro_f1(gold, decisions) -> float:
    tp, fp, fn = confusion(gold, decisions)
    return float(_f1(tp.sum(), fp.sum(), fn.sum()))


def micro_precision_recall(gold, decisions) -> tuple[float, float]:
    tp, fp, fn = (int(v.sum()) for v in confusion(gold, decisions))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def macro_f1(gold, decisions) -> float:
    return float(_f1(*confusion(gold, decisions)).mean())


def per_label(gold, decisions) -> dict[str, np.ndarray]:
    tp, fp, fn = confusion(gold, decisions)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
    return {"precision": precision, "recall": recall, "f1": _f1(tp, fp, fn), "support": tp + fn}


def binary_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    positives = int(labels.sum())
    negatives = labels.size - positives
    if positives == 0 or negatives == 0:
        raise DataError("AUC is undefined without both positive and negative cells")
    ranks = rankdata(np.asarray(scores, dtype=np.float64).reshape(-1), method="average")
    u = ranks[labels].sum() - positives * (positives + 1) / 2
    return float(u / (positives * negatives))


def micro_auc(gold, scores) -> float:
    gold, scores = _as_batch("micro_auc", gold, scores)
    return binary_auc(gold, scores)


def macro_auc(gold, scores) -> tuple[float | None, int]:
    """Mean per-label AUC over labels with both classes, and the number of labels skipped."""
    gold, scores = _as_batch("macro_auc", gold, scores)
    values, skipped = [], 0
    for label in range(gold.shape[1]):
        column = gold[:, label]
        if column.all() or not column.any():
            skipped += 1
            continue
        values.append(binary_auc(column, scores[:, label]))
    return (float(np.mean(values)) if values else None), skipped


def precision_at_k(gold, scores, k: int) -> float:
    if k < 1:
        raise DataError(f"precision@k needs k >= 1, got {k}")
    gold, scores = _as_batch("precision_at_k", gold, scores)
    label_ids = np.arange(gold.shape[1])
    hits = []
    for row_gold, row_scores in zip(gold, np.asarray(scores, dtype=np.float64)):
        top = np.lexsort((label_ids, -row_scores))[:k]
        hits.append(row_gold[top].sum() / k)
    return float(np.mean(hits))


def head_labels(frequencies, fraction: float = 0.1) -> np.ndarray:
    """The most frequent ``fraction`` of labels (at least one; ties go to the lower id)."""
    frequencies = np.asarray(frequencies)
    count = max(1, math.ceil(fraction * frequencies.size))
    ranked = np.lexsort((np.arange(frequencies.size), -frequencies))
    mask = np.zeros(frequencies.size, dtype=bool)
    mask[ranked[:count]] = True
    return mask


def stratified_report(gold, decisions, frequencies, head_fraction: float = 0.1) -> tuple[float, float]:
    """Micro-F1 over head-label cells and over tail-label cells."""
    gold, decisions = _as_batch("stratified_report", gold, decisions)
    head = head_labels(frequencies, head_fraction)
    tail_f1 = micro_f1(gold[:, ~head], decisions[:, ~head]) if (~head).any() else 0.0
    return micro_f1(gold[:, head], decisions[:, head]), tail_f1


def evaluate(gold, scores, threshold, label_space: LabelSpace, config: EvalConfig, split: str,
             threshold_source: str = "dev") -> MetricsReport:
    gold, scores = _as_batch("evaluate", gold, scores)
    decisions = (scores >= np.asarray(threshold)).astype(np.uint8)
    precision, recall = micro_precision_recall(gold, decisions)
    try:
        mauc = micro_auc(gold, scores)
    except DataError:
        logger.warning("micro_auc_undefined | split=%s", split)
        mauc = None
    macro, skipped = macro_auc(gold, scores)
    head_f1, tail_f1 = stratified_report(gold, decisions, label_space.train_frequency, config.head_fraction)
    rows = per_label(gold, decisions)
    table = [
        LabelRow(code=code, train_frequency=label_space.train_frequency[i], support=int(rows["support"][i]),
                 precision=float(rows["precision"][i]), recall=float(rows["recall"][i]), f1=float(rows["f1"][i]))
        for i, code in enumerate(label_space.codes)
    ]
    return MetricsReport(
        split=split,
        documents=int(gold.shape[0]),
        threshold=float(np.mean(threshold)),
        threshold_source=threshold_source,
        micro_precision=precision,
        micro_recall=recall,
        micro_f1=micro_f1(gold, decisions),
        macro_f1=macro_f1(gold, decisions),
        micro_auc=mauc,
        macro_auc=macro,
        auc_skipped_labels=skipped,
        precision_at={str(k): precision_at_k(gold, scores, k) for k in config.precision_at},
        head_micro_f1=head_f1,
        tail_micro_f1=tail_f1,
        per_label=table,
    )


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def format_table(report: MetricsReport, top_labels: int = 10) -> str:
    summary = [
        ("split", report.split), ("documents", str(report.documents)),
        ("threshold", f"{report.threshold:.2f} ({report.threshold_source})"),
        ("micro_p", _fmt(report.micro_precision)), ("micro_r", _fmt(report.micro_recall)),
        ("micro_f1", _fmt(report.micro_f1)), ("macro_f1", _fmt(report.macro_f1)),
        ("micro_auc", _fmt(report.micro_auc)),
        ("macro_auc", f"{_fmt(report.macro_auc)} (skipped {report.auc_skipped_labels})"),
        *((f"p@{k}", _fmt(v)) for k, v in report.precision_at.items()),
        ("head_micro_f1", _fmt(report.head_micro_f1)), ("tail_micro_f1", _fmt(report.tail_micro_f1)),
    ]
    width = max(len(name) for name, _ in summary)
    lines = [f"{name:<{width}}  {value}" for name, value in summary]
    if report.per_label and top_labels:
        rows = sorted(report.per_label, key=lambda r: (-r.train_frequency, r.code))[:top_labels]
        code_width = max(4, *(len(r.code) for r in rows))
        lines.append("")
        lines.append(f"{'code':<{code_width}}  {'freq':>6}  {'supp':>5}  {'P':>6}  {'R':>6}  {'F1':>6}")
        for r in rows:
            lines.append(f"{r.code:<{code_width}}  {r.train_frequency:>6}  {r.support:>5}  "
                         f"{r.precision:>6.4f}  {r.recall:>6.4f}  {r.f1:>6.4f}")
    return "\n".join(lines)


# --- Prediction dumps ---

def write_predictions(path: str | Path, ids, scores, gold, label_space: LabelSpace) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for doc_id, row, gold_row in zip(ids, np.asarray(scores), np.asarray(gold)):
                record = PredictionRecord(id=doc_id, scores=[float(s) for s in row],
                                          gold=[label_space.codes[i] for i in np.flatnonzero(gold_row)])
                f.write(json.dumps(record.model_dump()) + "\n")
    except OSError as e:
        raise StorageError(f"cannot write predictions {path}: {e}") from e


def load_predictions(path: str | Path, label_space: LabelSpace) -> tuple[list[str], np.ndarray, np.ndarray]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise StorageError(f"cannot read predictions {path}: {e}") from e
    ids, scores, gold = [], [], []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = PredictionRecord.model_validate_json(line)
        except ValidationError as e:
            raise DataError(f"{path}: line {lineno}: {e.errors()[0]['msg']}") from None
        if len(record.scores) != len(label_space):
            raise DataError(f"{path}: line {lineno}: {len(record.scores)} scores for {len(label_space)} labels")
        unknown = [c for c in record.gold if c not in label_space.index]
        if unknown:
            raise DataError(f"{path}: line {lineno}: unknown label '{unknown[0]}'")
        ids.append(record.id)
        scores.append(record.scores)
        gold.append(label_space.vector(label_space.index[c] for c in record.gold))
    if not ids:
        raise DataError(f"{path}: no predictions")
    return ids, np.asarray(scores), np.asarray(gold)
