"""Segment pooling: split a tokenized document into fixed-length segments, encode
each one independently and concatenate the real-token states into H (d×n).

Segments do not share context. Every segment is laid out as
``[CLS] tokens [SEP] [PAD]...`` with a total length of ``c + 2``.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

import tensor as T
from encoder import EncoderState, encode_tokens
from errors import ConfigError, DataError, LengthError
from schemas.model_schema import SegmenterConfig
from tensor import Matrix
from tokenizer import CLS_ID, PAD_ID, SEP_ID

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Segment:
    index: int
    ids: np.ndarray
    mask: np.ndarray
    positions: np.ndarray  # document position of each real token

    @property
    def real_count(self) -> int:
        return len(self.positions)


@dataclass
class HiddenStates:
    tokens: Matrix  # n×d, one row per kept position in document order
    positions: np.ndarray
    cls: Matrix  # segments×d
    bounds: np.ndarray  # row range of each segment inside ``tokens``

    @property
    def H(self) -> Matrix:
        return T.transpose(self.tokens)

    @property
    def n(self) -> int:
        return self.tokens.rows

    def segment(self, i: int) -> Matrix:
        """The d×r_i slice of H belonging to segment i."""
        return T.transpose(T.take_rows(self.tokens, np.arange(self.bounds[i], self.bounds[i + 1])))

    def segments(self) -> list[Matrix]:
        return [self.segment(i) for i in range(len(self.bounds) - 1)]


def effective_max_len(segment_length: int, max_doc_len: int) -> int:
    """Round max_doc_len down to a whole number of segments."""
    rounded = (max_doc_len // segment_length) * segment_length
    if rounded == 0:
        raise ConfigError(f"segmenter.max_doc_len={max_doc_len} is shorter than one segment ({segment_length})")
    if rounded != max_doc_len:
        logger.warning("max_doc_len_rounded | requested=%d | used=%d | segment_length=%d",
                       max_doc_len, rounded, segment_length)
    return rounded


def split(tokens, segment_length: int, max_doc_len: int) -> list[Segment]:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise DataError("cannot segment an empty document")
    c = segment_length
    tokens = tokens[:effective_max_len(c, max_doc_len)]

    segments = []
    for i, start in enumerate(range(0, tokens.size, c)):
        chunk = tokens[start:start + c]
        ids = np.full(c + 2, PAD_ID, dtype=np.int64)
        ids[0] = CLS_ID
        ids[1:1 + chunk.size] = chunk
        ids[1 + chunk.size] = SEP_ID
        mask = np.zeros(c + 2, dtype=bool)
        mask[:chunk.size + 2] = True
        segments.append(Segment(i, ids, mask, np.arange(start, start + chunk.size)))
    return segments


def truncate_mode(tokens, mode: str, limit: int):
    if limit < 1:
        raise ConfigError(f"truncation limit must be >= 1, got {limit}")
    if mode == "front":
        return tokens[:limit]
    if mode == "back":
        return tokens[-limit:] if len(tokens) > limit else tokens
    raise ConfigError(f"unknown truncation mode '{mode}', expected front or back")


def _encode_batches(ids: np.ndarray, mask: np.ndarray, state: EncoderState, batch: int, workers: int,
                    rng: np.random.Generator | None) -> list[Matrix]:
    starts = range(0, len(ids), batch)

    def run(start):
        return encode_tokens(ids[start:start + batch], state, mask[start:start + batch], rng)

    # Worker threads have no tape, so parallel encoding is for inference only.
    if workers > 1 and rng is None and T.current_tape() is None and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, starts))
    return [run(start) for start in starts]


def encode_document(tokens, state: EncoderState, config: SegmenterConfig, rng: np.random.Generator | None = None,
                    segment_batch: int | None = None, workers: int = 1) -> HiddenStates:
    """Encode a whole document through its segments.

    ``segment_batch`` bounds how many segments share one encoder call (all by
    default); the output does not depend on it. With ``include_specials`` the
    CLS and SEP columns of every segment are kept in H as well.
    """
    c = config.segment_length
    if c + 2 > state.config.max_positions:
        raise LengthError(f"segment_length={c} needs max_positions >= {c + 2}, "
                          f"encoder has {state.config.max_positions}")
    if config.truncation != "none":
        tokens = truncate_mode(tokens, config.truncation, config.truncation_limit or c)
    segments = split(tokens, c, config.max_doc_len)
    ids = np.stack([s.ids for s in segments])
    mask = np.stack([s.mask for s in segments])

    width = c + 2
    outputs = _encode_batches(ids, mask, state, segment_batch or len(segments), workers, rng)
    flat = T.concat_rows([T.reshape(out, (-1, state.config.hidden)) for out in outputs])

    rows, positions, bounds = [], [], [0]
    for s in segments:
        base = s.index * width
        if config.include_specials:
            rows.extend(range(base, base + s.real_count + 2))
            positions.extend([-1, *s.positions, -1])
        else:
            rows.extend(range(base + 1, base + 1 + s.real_count))
            positions.extend(s.positions)
        bounds.append(len(rows))
    cls = T.take_rows(flat, [s.index * width for s in segments])
    return HiddenStates(T.take_rows(flat, rows), np.asarray(positions), cls, np.asarray(bounds))
