"""Fine-tuning and masked-language-model pretraining.

Both loops share the AdamW optimizer and the warmup/decay schedule. Each
document (or pretraining batch) runs on its own tape; a fine-tuning step
accumulates the gradients of ``batch_size`` documents in shuffled order, each
scaled by 1/B, before one optimizer step.
"""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

import encoder
import heads
import metrics
import tensor as T
from corpus import LabelSpace
from errors import ConfigError, DataError, NumericalError, ShapeError, StorageError
from schemas.metrics_schema import EvalConfig, MetricsReport
from schemas.model_schema import EncoderConfig, HeadConfig, SegmenterConfig
from schemas.train_schema import PretrainConfig, ThresholdGrid, TrainConfig
from segmenter import encode_document, split
from settings import progress_disabled
from tensor import Matrix, Parameter, Tape

logger = logging.getLogger(__name__)

BETAS = (0.9, 0.999)
EPSILON = 1e-8


# --- Loss and schedule ---

def bce_loss(y, p: Matrix) -> Matrix:
    """Mean binary cross-entropy over all |Y| labels of one prediction."""
    y = np.asarray(y).reshape(-1)
    if y.size != p.value.size:
        raise ShapeError("bce_loss", y.shape, p.shape)
    return T.binary_cross_entropy(p, y)


def lr_at(step: int, config: TrainConfig | PretrainConfig, total_steps: int) -> float:
    """Linear warmup from 0 to the peak, then linear decay to 0 at ``total_steps`` (or flat when constant)."""
    peak, warmup = config.learning_rate, config.warmup_steps
    if step < warmup:
        return peak * step / warmup
    if config.schedule == "constant":
        return peak
    if step >= total_steps:
        return 0.0
    return peak * ((total_steps - step) / (total_steps - warmup))


# --- AdamW ---

@dataclass
class OptimizerState:
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    step: int = 0


def decays(param: Parameter) -> bool:
    """Biases and layer-norm gains are exempt from weight decay."""
    return not (param.name.endswith("bias") or param.name.endswith("norm.gain"))


def adamw_step(params: list[Parameter], state: OptimizerState, lr: float, weight_decay: float = 0.01,
               betas: tuple[float, float] = BETAS, eps: float = EPSILON) -> None:
    """Decoupled weight decay, then the bias-corrected adaptive step.

    The step is refused (nothing is updated) if any gradient is non-finite.
    """
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter '{p.name}'",
                                 {"parameter": p.name, "step": state.step})
    state.step += 1
    b1, b2 = betas
    correction1 = 1 - b1 ** state.step
    correction2 = 1 - b2 ** state.step
    for p in params:
        m = state.first.setdefault(p.name, np.zeros_like(p.value))
        v = state.second.setdefault(p.name, np.zeros_like(p.value))
        if m.shape != p.shape:
            raise ShapeError(f"adamw {p.name}", m.shape, p.shape)
        if weight_decay and decays(p):
            p.value *= 1 - lr * weight_decay
        m *= b1
        m += (1 - b1) * p.grad
        v *= b2
        v += (1 - b2) * p.grad * p.grad
        p.value -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)


class AdamW:
    def __init__(self, weight_decay: float = 0.01, betas: tuple[float, float] = BETAS, eps: float = EPSILON):
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = OptimizerState()

    def step(self, params: list[Parameter], lr: float) -> None:
        adamw_step(params, self.state, lr, self.weight_decay, self.betas, self.eps)


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))
    if norm > max_norm:
        for p in params:
            p.grad *= max_norm / norm
    return norm


# --- Model ---

@dataclass
class EncodedDocument:
    id: str
    tokens: np.ndarray
    labels: np.ndarray  # LabelVector


@dataclass
class Model:
    encoder: encoder.EncoderState
    head: object
    head_config: HeadConfig
    segmenter: SegmenterConfig
    num_labels: int
    segment_batch: int | None = None

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.head.parameters()

    def predict(self, tokens, rng: np.random.Generator | None = None, workers: int = 1) -> heads.Prediction:
        hidden = encode_document(tokens, self.encoder, self.segmenter, rng, self.segment_batch, workers)
        prediction = heads.forward(self.head, hidden)
        prediction.positions = hidden.positions
        return prediction


def build_model(encoder_state: encoder.EncoderState, head_config: HeadConfig, segmenter: SegmenterConfig,
                num_labels: int, seed: int, segment_batch: int | None = None) -> Model:
    head = heads.init_head(head_config, encoder_state.config.hidden, num_labels, seed)
    return Model(encoder_state, head, head_config, segmenter, num_labels, segment_batch)


def save_model(model: Model, path: str | Path, extra: dict | None = None) -> None:
    manifest = {
        "encoder": model.encoder.config.model_dump(),
        "head": model.head_config.model_dump(),
        "segmenter": model.segmenter.model_dump(),
        "num_labels": model.num_labels,
        **(extra or {}),
    }
    encoder.save_checkpoint(path, model.parameters(), manifest)


def load_model(path: str | Path) -> tuple[Model, dict]:
    manifest, arrays = encoder.read_checkpoint(path)
    if "head" not in manifest:
        raise StorageError(f"{path}: checkpoint holds an encoder only, not a trained model")
    source = str(path)
    state = encoder.init_random(encoder.manifest_section(manifest, "encoder", EncoderConfig, source), seed=0)
    head_config = encoder.manifest_section(manifest, "head", HeadConfig, source)
    segmenter_config = encoder.manifest_section(manifest, "segmenter", SegmenterConfig, source)
    num_labels = manifest.get("num_labels")
    if not isinstance(num_labels, int) or num_labels < 1:
        raise StorageError(f"{path}: checkpoint num_labels={num_labels!r} is not a positive integer")
    model = build_model(state, head_config, segmenter_config, num_labels, seed=0)
    encoder.restore_parameters(model.parameters(), arrays, str(path))
    return model, manifest


def predict_scores(model: Model, docs: list[EncodedDocument], workers: int = 1,
                   keep_attention: bool = False) -> tuple[np.ndarray, list]:
    """Probabilities for every document (documents×labels), in document order."""
    def run(doc):
        prediction = model.predict(doc.tokens)
        attention = None
        if keep_attention and prediction.attention is not None:
            attention = (prediction.attention.numpy(), prediction.positions)
        return prediction.p.astype(np.float64), attention

    if workers > 1 and len(docs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, docs))
    else:
        results = [run(doc) for doc in docs]
    scores = np.stack([r[0] for r in results]) if results else np.zeros((0, model.num_labels))
    return scores, [r[1] for r in results]


# --- Threshold tuning ---

def tune_threshold(scores, gold, grid: ThresholdGrid | None = None, per_label: bool = False):
    """Grid value maximizing dev micro-F1, smallest value on ties.

    With ``per_label`` each label gets the grid value maximizing its own F1;
    labels without dev positives keep the global value.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold)
    if scores.size == 0 or scores.shape[0] == 0:
        raise DataError("threshold tuning needs a non-empty dev set")
    values = (grid or ThresholdGrid()).values()

    best_t, best_f1 = values[0], -1.0
    for t in values:
        f1 = metrics.micro_f1(gold, scores >= t)
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    if not per_label:
        return best_t

    thresholds = np.full(gold.shape[1], best_t)
    best = np.full(gold.shape[1], -1.0)
    positives = gold.astype(bool).any(axis=0)
    for t in values:
        f1 = metrics.per_label(gold, scores >= t)["f1"]
        better = positives & (f1 > best)
        thresholds[better] = t
        best[better] = f1[better]
    return thresholds


# --- Fine-tuning ---

@dataclass
class TrainResult:
    best_epoch: int
    threshold: float | list
    best_report: MetricsReport
    history: list = field(default_factory=list)


def _epoch_dev(model: Model, dev: list[EncodedDocument], config: TrainConfig, eval_config: EvalConfig,
               label_space: LabelSpace, workers: int) -> tuple[MetricsReport, object]:
    scores, _ = predict_scores(model, dev, workers)
    gold = np.stack([d.labels for d in dev])
    threshold = tune_threshold(scores, gold, config.threshold_grid, eval_config.per_label_thresholds)
    source = "per-label" if eval_config.per_label_thresholds else "dev"
    report = metrics.evaluate(gold, scores, threshold, label_space, eval_config, "dev", source)
    return report, threshold


def _dump_diagnostics(out_dir: Path, diagnostics: dict) -> None:
    (out_dir / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2), encoding="utf-8")


def train(model: Model, train_docs: list[EncodedDocument], dev_docs: list[EncodedDocument], config: TrainConfig,
          eval_config: EvalConfig, label_space: LabelSpace, out_dir: str | Path, seed: int,
          workers: int = 1) -> TrainResult:
    """Train for ``config.epochs`` epochs and keep the best-dev-micro-F1 model in ``best.ckpt``.

    Writes ``train_log.jsonl`` with one record per step and one per epoch.
    """
    if not train_docs or not dev_docs:
        raise DataError("training needs non-empty train and dev splits")
    if len(label_space) != model.num_labels:
        raise ConfigError(f"model predicts {model.num_labels} labels, data has {len(label_space)}")
    out_dir = Path(out_dir)
    steps_per_epoch = math.ceil(len(train_docs) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    if config.warmup_steps > total_steps:
        raise ConfigError(f"train.warmup_steps={config.warmup_steps} exceeds the {total_steps} total steps")

    shuffle_rng = np.random.default_rng([seed, 0])
    dropout_rng = np.random.default_rng([seed, 1])
    optimizer = AdamW(config.weight_decay)
    params = model.parameters()
    result, best_f1, step = None, -1.0, 0
    logger.info("train_started | docs=%d | labels=%d | epochs=%d | total_steps=%d | head=%s",
                len(train_docs), model.num_labels, config.epochs, total_steps, model.head_config.kind)

    with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as log:
        for epoch in tqdm(range(1, config.epochs + 1), desc="epochs", disable=progress_disabled()):
            order = shuffle_rng.permutation(len(train_docs))
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                T.zero_grads(params)
                batch_loss = 0.0
                for index in batch:
                    doc = train_docs[index]
                    with Tape() as tape:
                        loss = bce_loss(doc.labels, model.predict(doc.tokens, dropout_rng).probs)
                        scaled = T.scale(loss, 1.0 / len(batch))
                    if not math.isfinite(loss.item()):
                        diagnostics = {"step": step, "epoch": epoch, "document": doc.id, "loss": str(loss.item())}
                        _dump_diagnostics(out_dir, diagnostics)
                        raise NumericalError(f"non-finite loss at step {step} on document '{doc.id}'", diagnostics)
                    tape.backward(scaled)
                    batch_loss += loss.item() / len(batch)
                if config.max_grad_norm is not None:
                    clip_grad_norm(params, config.max_grad_norm)
                lr = lr_at(step, config, total_steps)
                try:
                    optimizer.step(params, lr)
                except NumericalError as e:
                    _dump_diagnostics(out_dir, {**e.diagnostics, "epoch": epoch})
                    raise
                step += 1
                log.write(json.dumps({"step": step, "lr": lr, "loss": batch_loss}) + "\n")
                logger.debug("train_step | step=%d | lr=%.3g | loss=%.4f", step, lr, batch_loss)

            report, threshold = _epoch_dev(model, dev_docs, config, eval_config, label_space, workers)
            log.write(json.dumps({"epoch": epoch, "dev": report.model_dump(exclude={"per_label"})}) + "\n")
            log.flush()
            logger.info("epoch_done | epoch=%d | dev_micro_f1=%.4f | dev_macro_f1=%.4f | threshold=%.2f",
                        epoch, report.micro_f1, report.macro_f1, report.threshold)
            entry = {"epoch": epoch, "dev_micro_f1": report.micro_f1, "dev_macro_f1": report.macro_f1}
            if report.micro_f1 > best_f1:
                best_f1 = report.micro_f1
                threshold_out = threshold.tolist() if isinstance(threshold, np.ndarray) else threshold
                save_model(model, out_dir / "best.ckpt", {"epoch": epoch, "threshold": threshold_out})
                logger.info("checkpoint_saved | epoch=%d | path=%s", epoch, out_dir / "best.ckpt")
                history = result.history if result else []
                result = TrainResult(epoch, threshold_out, report, history)
            result.history.append(entry)
    return result


# --- MLM pretraining ---

def pretraining_segments(docs_tokens: list, segmenter: SegmenterConfig) -> np.ndarray:
    segments = [s.ids for tokens in docs_tokens if len(tokens)
                for s in split(tokens, segmenter.segment_length, segmenter.max_doc_len)]
    if not segments:
        raise DataError("pretraining needs at least one non-empty document")
    return np.stack(segments)


def pretrain(state: encoder.EncoderState, segments: np.ndarray, config: PretrainConfig, log_path: str | Path,
             seed: int) -> list[float]:
    """Masked-language-model pretraining over pre-built segments; returns the per-step losses."""
    rng = np.random.default_rng([seed, 2])
    optimizer = AdamW(config.weight_decay)
    steps_per_epoch = math.ceil(len(segments) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    warmup = min(config.warmup_steps, total_steps)
    if warmup != config.warmup_steps:
        logger.warning("pretrain_warmup_clamped | requested=%d | used=%d", config.warmup_steps, warmup)
        config = config.model_copy(update={"warmup_steps": warmup})

    losses, step = [], 0
    with open(log_path, "w", encoding="utf-8") as log:
        progress = tqdm(total=total_steps, desc="pretrain", disable=progress_disabled())
        for _ in range(config.epochs):
            order = rng.permutation(len(segments))
            for start in range(0, len(order), config.batch_size):
                lr = lr_at(step, config, total_steps)
                loss = encoder.mlm_pretrain_step(segments[order[start:start + config.batch_size]], state,
                                                 optimizer, lr, rng, config.mask_rate)
                step += 1
                progress.update(1)
                if loss is None:
                    continue
                if not math.isfinite(loss):
                    raise NumericalError(f"non-finite MLM loss at step {step}", {"step": step})
                losses.append(loss)
                log.write(json.dumps({"step": step, "lr": lr, "loss": loss}) + "\n")
        progress.close()
    logger.info("pretrain_done | steps=%d | first_loss=%.4f | last_loss=%.4f",
                step, losses[0] if losses else float("nan"), losses[-1] if losses else float("nan"))
    return losses
