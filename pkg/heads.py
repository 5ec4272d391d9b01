"""Prediction heads over document hidden states.

``laat``     label-wise attention: Z = tanh(VH), A = softmax(WZ), D = HAᵀ,
             p_i = sigmoid(<L_i, D_i> + b_i)
``caml``     A = softmax(UᵀH) without the tanh projection, per-label output vectors
``bertxml``  the laat head applied to each segment alone, max over segment probabilities
``clsmean``  mean of the segment CLS vectors through one linear layer

Probabilities come back as a |Y|×1 column.
"""
from dataclasses import dataclass, field

import numpy as np

import tensor as T
from encoder import truncated_normal
from errors import ConfigError, ShapeError
from schemas.model_schema import HeadConfig
from segmenter import HiddenStates
from tensor import Matrix, Parameter


@dataclass
class Prediction:
    probs: Matrix  # |Y|×1
    attention: Matrix | None = None  # |Y|×n
    positions: np.ndarray | None = None  # document position of each attention column

    @property
    def p(self) -> np.ndarray:
        return self.probs.value.reshape(-1)


@dataclass
class LaatHead:
    projection: Parameter  # V, d_a×d
    attention: Parameter  # W, |Y|×d_a
    output: Parameter  # L, |Y|×d
    bias: Parameter | None = None  # |Y|×1
    projection_bias: Parameter | None = None  # d_a×1
    kind: str = field(default="laat")

    def parameters(self) -> list[Parameter]:
        return [p for p in (self.projection, self.attention, self.output, self.bias, self.projection_bias)
                if p is not None]


@dataclass
class CamlHead:
    label_embeddings: Parameter  # U, d×|Y|
    output: Parameter  # beta, |Y|×d
    bias: Parameter | None = None
    kind: str = field(default="caml")

    def parameters(self) -> list[Parameter]:
        return [p for p in (self.label_embeddings, self.output, self.bias) if p is not None]


@dataclass
class ClsMeanHead:
    weight: Parameter  # |Y|×d
    bias: Parameter | None = None
    kind: str = field(default="clsmean")

    def parameters(self) -> list[Parameter]:
        return [p for p in (self.weight, self.bias) if p is not None]


def xavier_uniform(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_head(config: HeadConfig, hidden: int, num_labels: int, seed: int):
    rng = np.random.default_rng(seed)
    std = config.init_std
    d_a = config.attention_dim or hidden

    def weight(name, shape):
        return Parameter(truncated_normal(rng, shape, std), f"head.{name}")

    def attention_weight(name, shape):
        if config.attention_init == "normal":
            return weight(name, shape)
        return Parameter(xavier_uniform(rng, shape), f"head.{name}")

    bias = Parameter(np.full((num_labels, 1), config.bias_init), "head.bias") if config.label_bias else None
    if config.kind in ("laat", "bertxml"):
        head = LaatHead(attention_weight("projection", (d_a, hidden)),
                        attention_weight("attention", (num_labels, d_a)),
                        weight("output", (num_labels, hidden)), bias)
        if config.projection_bias:
            head.projection_bias = Parameter(np.zeros((d_a, 1)), "head.projection_bias")
        head.kind = config.kind
        return head
    if config.kind == "caml":
        return CamlHead(attention_weight("label_embeddings", (hidden, num_labels)),
                        weight("output", (num_labels, hidden)), bias)
    if config.kind == "clsmean":
        return ClsMeanHead(weight("weight", (num_labels, hidden)), bias)
    raise ConfigError(f"unknown head kind '{config.kind}'")


def _check_hidden(op: str, H: Matrix, d: int) -> None:
    if H.value.ndim != 2 or H.rows != d or H.cols < 1:
        raise ShapeError(op, H.shape, (d, "n>=1"))


def _label_scores(output: Parameter, D: Matrix, bias: Parameter | None) -> Matrix:
    """sigmoid(<L_i, D_i> + b_i) with D_i the i-th column of D."""
    logits = T.row_sum(T.mul(output, T.transpose(D)))
    if bias is not None:
        logits = T.add(logits, bias)
    return T.sigmoid_elem(logits)


def laat_forward(H: Matrix, head: LaatHead) -> Prediction:
    _check_hidden("laat_forward", H, head.output.cols)
    projected = T.matmul(head.projection, H)
    if head.projection_bias is not None:
        projected = T.add_bias(projected, head.projection_bias)
    Z = T.tanh_elem(projected)
    A = T.softmax_rows(T.matmul(head.attention, Z))
    D = T.matmul(H, T.transpose(A))
    return Prediction(_label_scores(head.output, D, head.bias), A)


def caml_forward(H: Matrix, head: CamlHead) -> Prediction:
    _check_hidden("caml_forward", H, head.output.cols)
    A = T.softmax_rows(T.matmul(T.transpose(head.label_embeddings), H))
    D = T.matmul(H, T.transpose(A))
    return Prediction(_label_scores(head.output, D, head.bias), A)


def bertxml_forward(segments: list[Matrix], head: LaatHead) -> Prediction:
    if not segments:
        raise ShapeError("bertxml_forward", (0,))
    per_segment = [T.transpose(laat_forward(H, head).probs) for H in segments]
    return Prediction(T.transpose(T.max_rows(T.concat_rows(per_segment))))


def clsmean_forward(cls: Matrix, head: ClsMeanHead) -> Prediction:
    """``cls`` holds one CLS vector per row."""
    if cls.value.ndim != 2 or cls.rows < 1 or cls.cols != head.weight.cols:
        raise ShapeError("clsmean_forward", cls.shape, head.weight.shape)
    logits = T.matmul(head.weight, T.transpose(T.mean_rows(cls)))
    if head.bias is not None:
        logits = T.add(logits, head.bias)
    return Prediction(T.sigmoid_elem(logits))


def forward(head, hidden: HiddenStates) -> Prediction:
    if head.kind == "laat":
        return laat_forward(hidden.H, head)
    if head.kind == "caml":
        return caml_forward(hidden.H, head)
    if head.kind == "bertxml":
        return bertxml_forward(hidden.segments(), head)
    return clsmean_forward(hidden.cls, head)


def decide(p, threshold) -> np.ndarray:
    """Bit i is set iff p_i >= t; ``threshold`` may be one value or one per label."""
    t = np.asarray(threshold, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ConfigError(f"threshold must lie in [0, 1], got {threshold}")
    return (np.asarray(p, dtype=np.float64) >= t).astype(np.uint8)


def top_attention(attention: np.ndarray, positions: np.ndarray, labels, codes, k: int) -> dict:
    """Per label, the k most attended document positions as (position, weight) pairs."""
    out = {}
    for label in labels:
        row = attention[label]
        order = np.argsort(-row, kind="stable")[:k]
        out[codes[label]] = [(int(positions[j]), round(float(row[j]), 6)) for j in order]
    return out
