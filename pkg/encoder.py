"""Miniature post-norm transformer encoder and its masked-language-model objective.

The positional table holds exactly ``max_positions`` rows, so a segment longer
than that cannot be encoded; callers split documents first.
"""
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ValidationError
from scipy.stats import truncnorm

import tensor as T
from errors import ContractError, LengthError, StorageError
from schemas.model_schema import EncoderConfig
from tensor import Matrix, Parameter, Tape
from tokenizer import MASK_ID, PAD_ID, SPECIAL_TOKENS

logger = logging.getLogger(__name__)

CHECKPOINT_DIMENSIONS = ("layers", "heads", "hidden", "ffn", "max_positions", "vocab_size")


@dataclass
class EncoderLayer:
    query: Parameter
    query_bias: Parameter
    key: Parameter
    key_bias: Parameter
    value: Parameter
    value_bias: Parameter
    output: Parameter
    output_bias: Parameter
    attention_norm_gain: Parameter
    attention_norm_bias: Parameter
    ffn_in: Parameter
    ffn_in_bias: Parameter
    ffn_out: Parameter
    ffn_out_bias: Parameter
    ffn_norm_gain: Parameter
    ffn_norm_bias: Parameter

    def parameters(self) -> list[Parameter]:
        return list(vars(self).values())


@dataclass
class EncoderState:
    config: EncoderConfig
    token_embeddings: Parameter
    position_embeddings: Parameter
    embedding_norm_gain: Parameter
    embedding_norm_bias: Parameter
    layers: list
    mlm_bias: Parameter  # output projection weight is tied to token_embeddings

    def parameters(self) -> list[Parameter]:
        params = [self.token_embeddings, self.position_embeddings,
                  self.embedding_norm_gain, self.embedding_norm_bias]
        for layer in self.layers:
            params.extend(layer.parameters())
        params.append(self.mlm_bias)
        return params


def truncated_normal(rng: np.random.Generator, shape: tuple, std: float) -> np.ndarray:
    return truncnorm.rvs(-2.0, 2.0, scale=std, size=shape, random_state=rng)


def init_random(config: EncoderConfig, seed: int | None = None) -> EncoderState:
    if config.vocab_size is None:
        raise ContractError("encoder.vocab_size must be resolved before initialization")
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    d, f, std = config.hidden, config.ffn, config.init_std

    def weight(name, shape):
        return Parameter(truncated_normal(rng, shape, std), name)

    def zeros(name, width):
        return Parameter(np.zeros((1, width)), name)

    def ones(name, width):
        return Parameter(np.ones((1, width)), name)

    layers = []
    for i in range(config.layers):
        p = f"layers.{i}."
        layers.append(EncoderLayer(
            weight(p + "attention.query.weight", (d, d)), zeros(p + "attention.query.bias", d),
            weight(p + "attention.key.weight", (d, d)), zeros(p + "attention.key.bias", d),
            weight(p + "attention.value.weight", (d, d)), zeros(p + "attention.value.bias", d),
            weight(p + "attention.output.weight", (d, d)), zeros(p + "attention.output.bias", d),
            ones(p + "attention.norm.gain", d), zeros(p + "attention.norm.bias", d),
            weight(p + "ffn.in.weight", (d, f)), zeros(p + "ffn.in.bias", f),
            weight(p + "ffn.out.weight", (f, d)), zeros(p + "ffn.out.bias", d),
            ones(p + "ffn.norm.gain", d), zeros(p + "ffn.norm.bias", d),
        ))
    state = EncoderState(
        config=config,
        token_embeddings=weight("embeddings.token", (config.vocab_size, d)),
        position_embeddings=weight("embeddings.position", (config.max_positions, d)),
        embedding_norm_gain=ones("embeddings.norm.gain", d),
        embedding_norm_bias=zeros("embeddings.norm.bias", d),
        layers=layers,
        mlm_bias=zeros("mlm.bias", config.vocab_size),
    )
    logger.info("encoder_initialized | layers=%d | hidden=%d | vocab=%d | seed=%s",
                config.layers, d, config.vocab_size, seed)
    return state


# --- Forward ---

def _self_attention(x: Matrix, layer: EncoderLayer, key_bias: Matrix, heads: int) -> Matrix:
    batch, length, d = x.shape
    dh = d // heads

    def project(weight, bias):
        out = T.add(T.matmul(x, weight), bias)
        return T.permute(T.reshape(out, (batch, length, heads, dh)), (0, 2, 1, 3))

    q = project(layer.query, layer.query_bias)
    k = project(layer.key, layer.key_bias)
    v = project(layer.value, layer.value_bias)
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(dh))
    weights = T.softmax_rows(T.add(scores, key_bias))
    context = T.reshape(T.permute(T.matmul(weights, v), (0, 2, 1, 3)), (batch, length, d))
    return T.add(T.matmul(context, layer.output), layer.output_bias)


def encode_tokens(ids, state: EncoderState, mask=None, rng: np.random.Generator | None = None) -> Matrix:
    """Hidden states for a batch of segments, shaped (segments, length, d).

    ``mask`` marks real positions (True) and defaults to ``ids != PAD``; PAD
    keys receive no attention weight. Dropout is applied only when ``rng`` is
    given.
    """
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    config = state.config
    length = ids.shape[1]
    if length > config.max_positions:
        raise LengthError(f"segment of {length} tokens exceeds max_positions={config.max_positions}")
    mask = ids != PAD_ID if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
    dtype = state.token_embeddings.value.dtype
    key_bias = T.constant(np.where(mask, 0.0, T.MASK_FILL)[:, None, None, :], dtype=dtype)
    rate = config.dropout if rng is not None else 0.0

    x = T.add(T.embedding_lookup(state.token_embeddings, ids),
              T.embedding_lookup(state.position_embeddings, np.arange(length)))
    x = T.dropout(T.layer_norm(x, state.embedding_norm_gain, state.embedding_norm_bias), rate, rng)
    for layer in state.layers:
        attended = T.dropout(_self_attention(x, layer, key_bias, config.heads), rate, rng)
        x = T.layer_norm(T.add(x, attended), layer.attention_norm_gain, layer.attention_norm_bias)
        hidden = T.gelu_elem(T.add(T.matmul(x, layer.ffn_in), layer.ffn_in_bias))
        out = T.dropout(T.add(T.matmul(hidden, layer.ffn_out), layer.ffn_out_bias), rate, rng)
        x = T.layer_norm(T.add(x, out), layer.ffn_norm_gain, layer.ffn_norm_bias)
    return x


def encode_segment(ids, state: EncoderState, mask=None) -> Matrix:
    """Encode one segment; the result is d×len (one column per position)."""
    return T.transpose(T.reshape(encode_tokens(ids, state, mask), (len(ids), state.config.hidden)))


# --- Masked language modeling ---

def mask_tokens(ids: np.ndarray, vocab_size: int, rng: np.random.Generator, rate: float = 0.15):
    """Select ``rate`` of the non-special positions; of those 80% become MASK, 10% a random token, 10% stay."""
    maskable = ids >= len(SPECIAL_TOKENS)
    selected = maskable & (rng.random(ids.shape) < rate)
    roll = rng.random(ids.shape)
    random_tokens = rng.integers(len(SPECIAL_TOKENS), vocab_size, size=ids.shape)
    corrupted = ids.copy()
    corrupted[selected & (roll < 0.8)] = MASK_ID
    swap = selected & (roll >= 0.8) & (roll < 0.9)
    corrupted[swap] = random_tokens[swap]
    return corrupted, selected


def mlm_loss(ids: np.ndarray, state: EncoderState, rng: np.random.Generator, train: bool = True,
             rate: float = 0.15) -> Matrix | None:
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    corrupted, selected = mask_tokens(ids, state.config.vocab_size, rng, rate)
    if not selected.any():
        return None
    hidden = encode_tokens(corrupted, state, mask=ids != PAD_ID, rng=rng if train else None)
    flat = T.reshape(hidden, (-1, state.config.hidden))
    picked = T.take_rows(flat, np.flatnonzero(selected))
    logits = T.add(T.matmul(picked, T.transpose(state.token_embeddings)), state.mlm_bias)
    return T.cross_entropy_rows(logits, ids[selected])


def mlm_pretrain_step(batch, state: EncoderState, optimizer, lr: float, rng: np.random.Generator,
                      mask_rate: float = 0.15) -> float | None:
    """One optimizer step on the masked-token loss; None when nothing could be masked."""
    params = state.parameters()
    T.zero_grads(params)
    with Tape() as tape:
        loss = mlm_loss(batch, state, rng, rate=mask_rate)
        if loss is None:
            logger.warning("mlm_step_skipped | reason=no_maskable_positions")
            return None
    tape.backward(loss)
    optimizer.step(params, lr)
    return loss.item()


# --- Checkpoints ---

def save_checkpoint(path: str | Path, params: list[Parameter], manifest: dict) -> None:
    """JSON manifest line, then little-endian float32 values in manifest order."""
    manifest = dict(manifest, parameters=[{"name": p.name, "shape": list(p.shape)} for p in params])
    header = json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n"
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(header)
            for p in params:
                f.write(np.ascontiguousarray(p.value, dtype="<f4").tobytes())
        tmp.replace(path)
    except OSError as e:
        raise StorageError(f"cannot write checkpoint {path}: {e}") from e


def read_checkpoint(path: str | Path) -> tuple[dict, dict]:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read checkpoint {path}: {e}") from e
    try:
        split = raw.index(b"\n")
        manifest = json.loads(raw[:split])
        arrays, offset = {}, split + 1
        for entry in manifest["parameters"]:
            count = int(np.prod(entry["shape"]))
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
            offset += 4 * count
    except (ValueError, KeyError, TypeError) as e:
        raise StorageError(f"corrupt checkpoint {path}: {e}") from e
    if offset != len(raw):
        raise StorageError(f"corrupt checkpoint {path}: {len(raw) - offset} bytes after the last parameter")
    return manifest, arrays


def manifest_section(manifest: dict, key: str, model: type[BaseModel], source: str):
    """Validate one config section of a checkpoint manifest."""
    try:
        return model.model_validate(manifest[key])
    except KeyError as e:
        raise StorageError(f"{source}: checkpoint manifest has no '{key}' section") from e
    except ValidationError as e:
        raise StorageError(f"{source}: checkpoint '{key}' section is invalid: {e.error_count()} error(s)") from e


def restore_parameters(params: list[Parameter], arrays: dict, source: str) -> None:
    for p in params:
        if p.name not in arrays:
            raise StorageError(f"{source}: checkpoint has no parameter '{p.name}'")
        stored = arrays[p.name]
        if stored.shape != p.shape:
            raise StorageError(f"{source}: parameter '{p.name}' has shape {stored.shape}, expected {p.shape}")
        p.assign(stored.astype(p.value.dtype))


def save(state: EncoderState, path: str | Path, extra: dict | None = None) -> None:
    save_checkpoint(path, state.parameters(), {"encoder": state.config.model_dump(), **(extra or {})})


def load(path: str | Path, expected: EncoderConfig | None = None) -> EncoderState:
    manifest, arrays = read_checkpoint(path)
    stored = manifest_section(manifest, "encoder", EncoderConfig, str(path))
    if expected is not None:
        for dim in CHECKPOINT_DIMENSIONS:
            want, have = getattr(expected, dim), getattr(stored, dim)
            if want is not None and want != have:
                raise StorageError(f"{path}: checkpoint {dim}={have} does not match config {dim}={want}")
    state = init_random(stored, seed=0)
    restore_parameters(state.parameters(), arrays, str(path))
    return state
