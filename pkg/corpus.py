"""Synthetic long-document multi-label corpora, JSONL ingestion, label filtering and stats.

Every stochastic step of generation draws from one ``numpy`` PCG64 stream
seeded by ``SyntheticSpec.seed``, so a (spec, seed) pair always yields the
same bytes.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from pydantic import ValidationError

from errors import ConfigError, DataError, StorageError
from schemas.corpus_schema import CorpusStats, DocumentRecord, SyntheticSpec

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")

_ONSETS = "b c d f g h j k l m n p r s t v z br ch cl dr gr pl st th tr".split()
_VOWELS = "a e i o u ai ea io ou".split()
_CODAS = ["", "", "", "n", "r", "s", "l", "x"]


@dataclass(frozen=True)
class Document:
    id: str
    words: tuple
    labels: frozenset = frozenset()

    @property
    def text(self) -> str:
        return " ".join(self.words)


@dataclass
class LabelSpace:
    codes: list
    train_frequency: list = field(default_factory=list)

    def __post_init__(self):
        self.index = {code: i for i, code in enumerate(self.codes)}
        if len(self.index) != len(self.codes):
            raise DataError("label codes must be unique")
        if not self.train_frequency:
            self.train_frequency = [0] * len(self.codes)

    def __len__(self) -> int:
        return len(self.codes)

    def add(self, code: str) -> int:
        self.index[code] = len(self.codes)
        self.codes.append(code)
        self.train_frequency.append(0)
        return self.index[code]

    def vector(self, labels: Iterable[int]) -> np.ndarray:
        """The binary LabelVector of length |Y| for a set of label ids."""
        bits = np.zeros(len(self.codes), dtype=np.uint8)
        bits[list(labels)] = 1
        return bits

    def matrix(self, docs: Sequence[Document]) -> np.ndarray:
        out = np.zeros((len(docs), len(self.codes)), dtype=np.uint8)
        for row, doc in enumerate(docs):
            out[row, list(doc.labels)] = 1
        return out

    def recount(self, train: Sequence[Document]) -> None:
        freq = [0] * len(self.codes)
        for doc in train:
            for label in doc.labels:
                freq[label] += 1
        self.train_frequency = freq

    def save(self, path: str | Path) -> None:
        lines = "".join(f"{c}\t{f}\n" for c, f in zip(self.codes, self.train_frequency))
        Path(path).write_text(lines, encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path: str | Path) -> "LabelSpace":
        try:
            rows = [line.split("\t") for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
        except OSError as e:
            raise StorageError(f"cannot read label space {path}: {e}") from e
        return cls([r[0] for r in rows], [int(r[1]) for r in rows])


@dataclass
class CorpusSplits:
    train: list
    dev: list
    test: list
    label_space: LabelSpace

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ConfigError(f"unknown split '{name}', expected one of {', '.join(SPLITS)}")
        return getattr(self, name)


# --- Synthetic generation ---

def _make_lexicon(rng: np.random.Generator, size: int) -> list[str]:
    words, seen = [], set()
    while len(words) < size:
        syllables = int(rng.integers(2, 5))
        word = "".join(
            _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(syllables)
        ) + _CODAS[rng.integers(len(_CODAS))]
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def zipf_probabilities(n: int, exponent: float) -> np.ndarray:
    weights = np.arange(1, n + 1, dtype=np.float64) ** -exponent
    return weights / weights.sum()


def _sample_document(rng, doc_id, spec: SyntheticSpec, label_probs, keywords, noise, noise_probs) -> Document:
    sd = (spec.doc_length_max - spec.doc_length_min) / 6
    length = int(np.clip(round(rng.normal(spec.doc_length_mean, sd)), spec.doc_length_min, spec.doc_length_max))
    m = min(spec.num_labels, max(1, int(rng.poisson(spec.labels_per_doc_mean))))
    labels = np.sort(rng.choice(spec.num_labels, size=m, replace=False, p=label_probs))

    gold_keywords = keywords[labels].reshape(-1)
    length = max(length, gold_keywords.size)
    n_kw = min(length, max(gold_keywords.size, int(round((1 - spec.noise_rate) * length))))
    extra = rng.choice(gold_keywords, size=n_kw - gold_keywords.size)
    positions = rng.choice(length, size=n_kw, replace=False)

    words = noise[rng.choice(noise.size, size=length, p=noise_probs)]
    words[positions] = np.concatenate([gold_keywords, extra])
    return Document(doc_id, tuple(words.tolist()), frozenset(int(i) for i in labels))


def generate_synthetic(spec: SyntheticSpec) -> CorpusSplits:
    """Zipf-distributed labels whose keyword evidence is spread uniformly over each document."""
    if spec.labels_per_doc_mean > spec.num_labels:
        raise ConfigError("corpus.labels_per_doc_mean cannot exceed corpus.num_labels")
    rng = np.random.default_rng(spec.seed)
    n_keywords = spec.num_labels * spec.keywords_per_label
    lexicon = np.array(_make_lexicon(rng, n_keywords + spec.noise_vocab_size), dtype=object)
    keywords = lexicon[:n_keywords].reshape(spec.num_labels, spec.keywords_per_label)
    noise = lexicon[n_keywords:]

    label_probs = zipf_probabilities(spec.num_labels, spec.zipf_exponent)
    noise_probs = zipf_probabilities(noise.size, 1.0)
    width = len(str(spec.num_labels - 1))
    label_space = LabelSpace([f"c{rank:0{width}d}" for rank in range(spec.num_labels)])

    splits = {}
    for name, count in zip(SPLITS, (spec.train_docs, spec.dev_docs, spec.test_docs)):
        splits[name] = [
            _sample_document(rng, f"{name}-{j:06d}", spec, label_probs, keywords, noise, noise_probs)
            for j in range(count)
        ]
    label_space.recount(splits["train"])
    logger.info("corpus_generated | labels=%d | train=%d | dev=%d | test=%d | seed=%d",
                spec.num_labels, spec.train_docs, spec.dev_docs, spec.test_docs, spec.seed)
    return CorpusSplits(splits["train"], splits["dev"], splits["test"], label_space)


# --- JSONL ---

def write_jsonl(docs: Sequence[Document], label_space: LabelSpace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for doc in docs:
            record = {"id": doc.id, "text": doc.text, "labels": [label_space.codes[i] for i in sorted(doc.labels)]}
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def _describe(error: ValidationError, lineno: int) -> str:
    first = error.errors()[0]
    if first["type"].startswith("json"):
        return f"line {lineno}: malformed JSON ({first['msg']})"
    where = ".".join(str(p) for p in first["loc"])
    if first["type"] == "missing":
        return f"line {lineno}: missing field '{where}'"
    return f"line {lineno}: field '{where}': {first['msg']}"


def load_jsonl(path: str | Path, label_space: LabelSpace, split: str = "train",
               permissive: bool = False) -> list[Document]:
    """Read one split.

    Unknown label codes extend ``label_space`` on the train split; elsewhere
    they are an error unless ``permissive``, in which case they are dropped
    and counted.
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e

    docs, seen, dropped = [], set(), 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = DocumentRecord.model_validate_json(line)
        except ValidationError as e:
            raise DataError(f"{path}: {_describe(e, lineno)}") from None
        if record.id in seen:
            raise DataError(f"{path}: duplicate document id '{record.id}'")
        seen.add(record.id)
        words = tuple(record.text.split())
        if not words:
            raise DataError(f"{path}: line {lineno}: document '{record.id}' has no words")

        labels = set()
        for code in record.labels:
            if code in label_space.index:
                labels.add(label_space.index[code])
            elif split == "train":
                labels.add(label_space.add(code))
            elif permissive:
                dropped += 1
            else:
                raise DataError(f"{path}: line {lineno}: unknown label '{code}' in {split} split")
        docs.append(Document(record.id, words, frozenset(labels)))

    if dropped:
        logger.warning("unknown_labels_dropped | split=%s | count=%d", split, dropped)
    if split == "train":
        label_space.recount(docs)
    return docs


def save_splits(data: CorpusSplits, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        write_jsonl(data.split(name), data.label_space, directory / f"{name}.jsonl")
    data.label_space.save(directory / "labels.tsv")


def load_splits(directory: str | Path, permissive: bool = False) -> CorpusSplits:
    directory = Path(directory)
    labels_file = directory / "labels.tsv"
    label_space = LabelSpace.load(labels_file) if labels_file.exists() else LabelSpace([])
    loaded = {name: load_jsonl(directory / f"{name}.jsonl", label_space, name, permissive) for name in SPLITS}
    return CorpusSplits(loaded["train"], loaded["dev"], loaded["test"], label_space)


# --- Label filtering ---

def filter_top_labels(data: CorpusSplits, k: int) -> CorpusSplits:
    """Restrict to the k most frequent training labels (ties go to the lower id).

    Training documents left without labels are dropped; dev/test documents
    keep an empty gold set so they still count in evaluation.
    """
    if k < 1:
        raise ConfigError(f"top-k filtering needs k >= 1, got {k}")
    space = data.label_space
    if k > len(space):
        logger.warning("top_k_clamped | requested=%d | labels=%d", k, len(space))
        k = len(space)
    ranked = sorted(range(len(space)), key=lambda i: (-space.train_frequency[i], i))
    kept = sorted(ranked[:k])
    remap = {old: new for new, old in enumerate(kept)}

    def restrict(doc: Document) -> Document:
        return replace(doc, labels=frozenset(remap[i] for i in doc.labels if i in remap))

    train = [d for d in map(restrict, data.train) if d.labels]
    new_space = LabelSpace([space.codes[i] for i in kept])
    new_space.recount(train)
    logger.info("labels_filtered | kept=%d | train_docs=%d->%d", k, len(data.train), len(train))
    return CorpusSplits(train, [restrict(d) for d in data.dev], [restrict(d) for d in data.test], new_space)


# --- Statistics ---

def _histogram(frequencies: Sequence[int]) -> dict[str, int]:
    buckets = {"0": 0, "1-9": 0, "10-99": 0, "100-999": 0, "1000+": 0}
    for f in frequencies:
        key = "0" if f == 0 else "1-9" if f < 10 else "10-99" if f < 100 else "100-999" if f < 1000 else "1000+"
        buckets[key] += 1
    return buckets


def stats(docs: Sequence[Document], label_space: LabelSpace, length_thresholds: Sequence[int] = (512,)) -> CorpusStats:
    if not docs:
        raise DataError("stats needs at least one document")
    lengths = np.array([len(d.words) for d in docs])
    return CorpusStats(
        documents=len(docs),
        mean_words=float(lengths.mean()),
        median_words=float(np.median(lengths)),
        max_words=int(lengths.max()),
        labels=len(label_space),
        labels_per_doc_mean=float(np.mean([len(d.labels) for d in docs])),
        label_frequency_histogram=_histogram(label_space.train_frequency),
        over_length={str(t): float((lengths > t).mean()) for t in length_thresholds},
    )
