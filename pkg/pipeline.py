"""Run-level orchestration shared by the CLI commands and the ablation suites.

A run directory holds everything needed to re-execute it: ``config.json``
(resolved), ``tokenizer/``, ``labels.tsv``, ``best.ckpt``, ``train_log.jsonl``,
the reports and ``manifest.json``.
"""
import contextlib
import json
import logging
from datetime import datetime
from pathlib import Path

import numpy as np
import pytz
from pydantic import ValidationError

import corpus
import encoder
import metrics
import settings
import tensor
import tokenizer
import training
from corpus import CorpusSplits, LabelSpace
from errors import ConfigError, DataError, StorageError
from heads import top_attention
from schemas.experiment_schema import ExperimentConfig, RunManifest
from schemas.metrics_schema import MetricsReport

logger = logging.getLogger(__name__)

VERSION = "0.3.0"
CONFIG_DIR = Path(__file__).resolve().parent / "configs"
PRESETS = ("default", "quick", "ablation")


# --- Configuration ---

def _dotted(error: ValidationError) -> str:
    parts = []
    for e in error.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{where}: {e['msg']}")
    return "; ".join(parts)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid config: {_dotted(e)}") from None


def read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON ({e})") from None


def load_config(path: str | Path | None = None, quick: bool = False, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file (or a built-in preset) and apply top-level section overrides."""
    if path is None:
        path = CONFIG_DIR / ("quick.json" if quick else "default.json")
    elif str(path) in PRESETS:
        path = CONFIG_DIR / f"{path}.json"
    data = read_json(path)
    for key, value in (overrides or {}).items():
        section, _, field = key.partition(".")
        if field:
            data.setdefault(section, {})
            if data[section] is None:
                data[section] = {}
            data[section][field] = value
        else:
            data[key] = value
    return parse_config(data)


def write_json(path: Path, payload) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        tmp.replace(path)
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e


def prepare_dir(path: str | Path) -> Path:
    path = settings.resolve_out(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create {path}: {e}") from e
    return path


def now() -> str:
    return datetime.now(pytz.utc).isoformat(timespec="seconds")


def write_manifest(out_dir: Path, command: str, config: ExperimentConfig, started_at: str,
                   report: MetricsReport | None = None) -> None:
    files = sorted(str(p.relative_to(out_dir)) for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = RunManifest(
        command=command,
        build=f"doccoder {VERSION} numpy {np.__version__}",
        started_at=started_at,
        finished_at=now(),
        config=config.model_dump(),
        files=files,
        report=report.model_dump(exclude={"per_label"}) if report else None,
    )
    write_json(out_dir / "manifest.json", manifest.model_dump())


@contextlib.contextmanager
def precision(float64: bool):
    with tensor.float64() if float64 else contextlib.nullcontext():
        yield


# --- Data and tokenizer ---

def load_data(config: ExperimentConfig) -> CorpusSplits:
    if config.data_path is not None:
        data = corpus.load_splits(config.data_path, config.permissive_labels)
    else:
        data = corpus.generate_synthetic(config.corpus)
    if config.top_k_labels is not None:
        data = corpus.filter_top_labels(data, config.top_k_labels)
    return data


def train_tokenizer(config: ExperimentConfig, texts: list[str]):
    if config.tokenizer.kind == "bpe":
        return tokenizer.train_bpe(texts, config.tokenizer.num_merges)
    return tokenizer.train_word_vocab(texts, config.tokenizer.max_size)


def save_tokenizer(model, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(model, tokenizer.BpeModel):
        model.save(directory)
    else:
        model.save(directory / "vocab.txt")


def load_tokenizer(directory: Path):
    if (directory / "merges.txt").exists():
        return tokenizer.BpeModel.load(directory)
    return tokenizer.Vocabulary.load(directory / "vocab.txt")


def encode_documents(docs, tok, label_space: LabelSpace) -> list[training.EncodedDocument]:
    encoded = []
    for doc in docs:
        ids = np.asarray(tok.encode_words([w.lower() for w in doc.words]), dtype=np.int64)
        encoded.append(training.EncodedDocument(doc.id, ids, label_space.vector(doc.labels)))
    return encoded


def corpus_stats(data: CorpusSplits, config: ExperimentConfig) -> dict:
    texts = [d.text for d in data.train]
    report = corpus.stats(data.train, data.label_space, (512, config.segmenter.max_doc_len))
    word = tokenizer.train_word_vocab(texts, config.tokenizer.max_size)
    bpe = tokenizer.train_bpe(texts, config.tokenizer.num_merges)
    report.fragmentation_ratio = {
        "word": tokenizer.fragmentation_ratio(texts, word),
        "bpe": tokenizer.fragmentation_ratio(texts, bpe),
    }
    return report.model_dump()


# --- Commands ---

def gen_data(config: ExperimentConfig, out: str | Path) -> Path:
    if config.corpus is None:
        raise ConfigError("gen-data needs a corpus section")
    started = now()
    out_dir = prepare_dir(out)
    data = corpus.generate_synthetic(config.corpus)
    corpus.save_splits(data, out_dir)
    write_json(out_dir / "stats.json", corpus_stats(data, config))
    write_json(out_dir / "config.json", config.model_dump())
    write_manifest(out_dir, "gen-data", config, started)
    logger.info("gen_data_done | out=%s | train=%d | labels=%d", out_dir, len(data.train), len(data.label_space))
    return out_dir


def tokenizer_dir(checkpoint: Path) -> Path:
    return checkpoint.with_name(checkpoint.name + ".tokenizer")


def pretrain(config: ExperimentConfig, out: str | Path) -> Path:
    """MLM-pretrain a fresh encoder on the train split; the tokenizer is saved beside the checkpoint."""
    started = now()
    checkpoint = settings.resolve_out(out)
    prepare_dir(checkpoint.parent)
    data = load_data(config)
    tok = train_tokenizer(config, [d.text for d in data.train])
    enc_config = config.encoder.model_copy(update={"vocab_size": len(tok.vocab)})
    with precision(config.train.float64):
        state = encoder.init_random(enc_config)
        docs = encode_documents(data.train, tok, data.label_space)
        segments = training.pretraining_segments([d.tokens for d in docs], config.segmenter)
        loss_log = checkpoint.with_name(checkpoint.name + ".loss.jsonl")
        training.pretrain(state, segments, config.pretrain, loss_log, config.pretrain.seed)
        encoder.save(state, checkpoint, {"config": config.model_dump()})
    save_tokenizer(tok, tokenizer_dir(checkpoint))
    write_manifest(checkpoint.parent, "pretrain", config, started)
    logger.info("pretrain_saved | path=%s", checkpoint)
    return checkpoint


def train(config: ExperimentConfig, out: str | Path, init: str | None = None) -> training.TrainResult:
    started = now()
    out_dir = prepare_dir(out)
    data = load_data(config)
    if init and init != "random":
        checkpoint = Path(init)
        tok = load_tokenizer(tokenizer_dir(checkpoint))
    else:
        checkpoint, tok = None, train_tokenizer(config, [d.text for d in data.train])
    config = config.model_copy(update={"encoder": config.encoder.model_copy(update={"vocab_size": len(tok.vocab)})})

    with precision(config.train.float64):
        if checkpoint is not None:
            state = encoder.load(checkpoint, expected=config.encoder)
        else:
            state = encoder.init_random(config.encoder)
        model = training.build_model(state, config.head, config.segmenter, len(data.label_space),
                                     config.train.seed, config.train.segment_batch)
        train_docs = encode_documents(data.train, tok, data.label_space)
        dev_docs = encode_documents(data.dev, tok, data.label_space)
        write_json(out_dir / "config.json", config.model_dump())
        save_tokenizer(tok, out_dir / "tokenizer")
        data.label_space.save(out_dir / "labels.tsv")
        result = training.train(model, train_docs, dev_docs, config.train, config.eval, data.label_space, out_dir,
                                config.train.seed, workers=config.eval.workers or settings.THREADS)
    write_json(out_dir / "dev_report.json", result.best_report.model_dump())
    write_json(out_dir / "history.json", {"best_epoch": result.best_epoch, "threshold": result.threshold,
                                          "epochs": result.history, "init": init or "random"})
    write_manifest(out_dir, "train", config, started, result.best_report)
    return result


def evaluate(run_dir: str | Path, split: str = "test", threshold: float | None = None,
             dump_attention: int = 0) -> MetricsReport:
    run_dir = Path(run_dir)
    if not (run_dir / "best.ckpt").exists():
        raise StorageError(f"{run_dir} has no best.ckpt; is it a train run directory?")
    started = now()
    config = parse_config(read_json(run_dir / "config.json"))
    data = load_data(config)
    docs = data.split(split)
    if not docs:
        raise DataError(f"split '{split}' is empty")
    tok = load_tokenizer(run_dir / "tokenizer")

    with precision(config.train.float64):
        model, manifest = training.load_model(run_dir / "best.ckpt")
        encoded = encode_documents(docs, tok, data.label_space)
        scores, attention = training.predict_scores(model, encoded, config.eval.workers or settings.THREADS,
                                                    keep_attention=dump_attention > 0)
    gold = np.stack([d.labels for d in encoded])
    if threshold is not None:
        t, source = threshold, "override"
    else:
        t = np.asarray(manifest["threshold"]) if isinstance(manifest["threshold"], list) else manifest["threshold"]
        source = "per-label" if isinstance(manifest["threshold"], list) else "dev"
    report = metrics.evaluate(gold, scores, t, data.label_space, config.eval, split, source)

    write_json(run_dir / f"{split}_report.json", report.model_dump())
    (run_dir / f"{split}_report.txt").write_text(metrics.format_table(report) + "\n", encoding="utf-8")
    metrics.write_predictions(run_dir / f"{split}_predictions.jsonl", [d.id for d in encoded], scores, gold,
                              data.label_space)
    if dump_attention:
        _write_attention(run_dir / "attention.jsonl", encoded, scores, attention, t, data.label_space, dump_attention)
    write_manifest(run_dir, "eval", config, started, report)
    logger.info("eval_done | split=%s | micro_f1=%.4f | macro_f1=%.4f", split, report.micro_f1, report.macro_f1)
    return report


def _write_attention(path: Path, docs, scores, attention, threshold, label_space: LabelSpace, k: int) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc, row, maps in zip(docs, scores, attention):
            if maps is None:
                continue
            weights, positions = maps
            labels = sorted(set(np.flatnonzero(doc.labels)) | set(np.flatnonzero(row >= threshold)))
            record = {"id": doc.id, "attention": top_attention(weights, positions, labels, label_space.codes, k)}
            f.write(json.dumps(record) + "\n")
