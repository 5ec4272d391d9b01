"""Word-level and subword (BPE) tokenizers plus the fragmentation-ratio diagnostic.

Text is lowercased and split on whitespace before any subword processing.
BPE merges stay inside words; the last symbol of every word carries the
end-of-word marker so that detokenizing restores word boundaries.
"""
import logging
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Sequence

from errors import ConfigError, DataError, StorageError

logger = logging.getLogger(__name__)

PAD, CLS, SEP, UNK, MASK = "[PAD]", "[CLS]", "[SEP]", "[UNK]", "[MASK]"
SPECIAL_TOKENS = (PAD, CLS, SEP, UNK, MASK)
PAD_ID, CLS_ID, SEP_ID, UNK_ID, MASK_ID = range(len(SPECIAL_TOKENS))
END_OF_WORD = "</w>"


def normalize(text: str) -> list[str]:
    return text.lower().split()


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ConfigError("vocabulary must start with the special tokens " + " ".join(SPECIAL_TOKENS))
        self.tokens = list(tokens)
        self.index = {token: i for i, token in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ConfigError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode_words(self, words: Sequence[str]) -> list[int]:
        return [self.index.get(w, UNK_ID) for w in words]

    @property
    def vocab(self) -> "Vocabulary":
        return self

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        try:
            lines = Path(path).read_text(encoding="utf-8").split("\n")
        except OSError as e:
            raise StorageError(f"cannot read vocabulary {path}: {e}") from e
        return cls([line for line in lines if line])


class BpeModel:
    def __init__(self, merges: Sequence[tuple[str, str]], vocab: Vocabulary):
        self.merges = [tuple(m) for m in merges]
        self.vocab = vocab
        self.ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._cache: dict[str, tuple[str, ...]] = {}

    def __eq__(self, other) -> bool:
        return isinstance(other, BpeModel) and self.merges == other.merges and self.vocab == other.vocab

    def segment_word(self, word: str) -> tuple[str, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = initial_symbols(word)
        while len(symbols) > 1:
            best = min(zip(symbols, symbols[1:]), key=lambda p: self.ranks.get(p, len(self.ranks)))
            if best not in self.ranks:
                break
            symbols = merge_pair(symbols, best)
        result = tuple(symbols)
        self._cache[word] = result
        return result

    def encode_words(self, words: Sequence[str]) -> list[int]:
        return [self.vocab.id_of(s) for w in words for s in self.segment_word(w)]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.vocab.save(directory / "vocab.txt")
        (directory / "merges.txt").write_text("".join(f"{a}\t{b}\n" for a, b in self.merges), encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "BpeModel":
        directory = Path(directory)
        try:
            lines = (directory / "merges.txt").read_text(encoding="utf-8").split("\n")
        except OSError as e:
            raise StorageError(f"cannot read merges in {directory}: {e}") from e
        merges = [tuple(line.split("\t")) for line in lines if line]
        return cls(merges, Vocabulary.load(directory / "vocab.txt"))


def initial_symbols(word: str) -> list[str]:
    chars = list(word)
    chars[-1] += END_OF_WORD
    return chars


def merge_pair(symbols: Sequence[str], pair: tuple[str, str]) -> list[str]:
    out, i = [], 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            out.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def _word_counts(corpus: Iterable[str]) -> Counter:
    counts = Counter()
    for text in corpus:
        counts.update(normalize(text))
    if not counts:
        raise DataError("cannot train a tokenizer on an empty corpus")
    return counts


def train_word_vocab(corpus: Iterable[str], max_size: int = 8192) -> Vocabulary:
    """Keep the most frequent words; ties go to the lexicographically smaller word."""
    if max_size < len(SPECIAL_TOKENS) + 1:
        raise ConfigError(f"tokenizer.max_size must be at least {len(SPECIAL_TOKENS) + 1}, got {max_size}")
    counts = _word_counts(corpus)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [w for w, _ in ranked[:max_size - len(SPECIAL_TOKENS)]]
    logger.info("word_vocab_trained | words=%d | kept=%d", len(counts), len(kept))
    return Vocabulary(list(SPECIAL_TOKENS) + kept)


def train_bpe(corpus: Iterable[str], num_merges: int = 4096) -> BpeModel:
    """Greedy byte-pair merging within words.

    Each round merges the most frequent adjacent pair; ties go to the
    lexicographically smaller pair.
    """
    counts = _word_counts(corpus)
    words = sorted(counts)
    freq = [counts[w] for w in words]
    symbols = [initial_symbols(w) for w in words]

    pair_counts: Counter = Counter()
    where: dict[tuple, set] = defaultdict(set)
    for i, syms in enumerate(symbols):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += freq[i]
            where[pair].add(i)

    merges = []
    for _ in range(num_merges):
        if not pair_counts:
            break
        best = min(pair_counts, key=lambda p: (-pair_counts[p], p))
        merges.append(best)
        for i in sorted(where.pop(best, ())):
            old = symbols[i]
            new = merge_pair(old, best)
            if new == old:
                continue
            for pair in zip(old, old[1:]):
                pair_counts[pair] -= freq[i]
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
            for pair in zip(new, new[1:]):
                pair_counts[pair] += freq[i]
                where[pair].add(i)
            symbols[i] = new
        pair_counts.pop(best, None)

    base = sorted({s for w in words for s in initial_symbols(w)})
    tokens = list(SPECIAL_TOKENS)
    seen = set(tokens)
    for token in base + [a + b for a, b in merges]:
        if token not in seen:
            seen.add(token)
            tokens.append(token)
    logger.info("bpe_trained | words=%d | merges=%d | vocab=%d", len(words), len(merges), len(tokens))
    return BpeModel(merges, Vocabulary(tokens))


def tokenize(text: str, model: Vocabulary | BpeModel) -> list[int]:
    return model.encode_words(normalize(text))


def detokenize(ids: Sequence[int], model: Vocabulary | BpeModel) -> str:
    tokens = [model.vocab.tokens[i] for i in ids if i not in (PAD_ID, CLS_ID, SEP_ID)]
    if isinstance(model, BpeModel):
        return "".join(tokens).replace(END_OF_WORD, " ").strip()
    return " ".join(tokens)


def fragmentation_ratio(corpus: Iterable[str], model: Vocabulary | BpeModel) -> float:
    """Subword tokens emitted per whitespace word."""
    words = tokens = 0
    for text in corpus:
        split = normalize(text)
        words += len(split)
        tokens += len(model.encode_words(split))
    if words == 0:
        raise DataError("fragmentation_ratio needs at least one word")
    return tokens / words
