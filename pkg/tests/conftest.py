import copy
import json

import numpy as np
import pytest

import tensor
from schemas.model_schema import EncoderConfig
from tensor import Tape


def _numeric_grad(loss_fn, param, h):
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        up = loss_fn().item()
        flat[i] = original - h
        down = loss_fn().item()
        flat[i] = original
        grad.reshape(-1)[i] = (up - down) / (2 * h)
    return grad


def _max_relative_error(params, loss_fn, h=1e-6, floor=1e-8):
    """Compare tape gradients of ``loss_fn`` against central differences."""
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    worst = 0.0
    for p in params:
        numeric = _numeric_grad(loss_fn, p, h)
        denom = np.maximum(np.maximum(np.abs(p.grad), np.abs(numeric)), floor)
        worst = max(worst, float((np.abs(p.grad - numeric) / denom).max()))
    return worst


@pytest.fixture
def gradcheck():
    return _max_relative_error


@pytest.fixture
def f64():
    with tensor.float64():
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_encoder_config():
    return EncoderConfig(layers=1, heads=2, hidden=8, ffn=16, max_positions=10, vocab_size=30, dropout=0.0, seed=0)


TINY_CONFIG = {
    "seed": 7,
    "corpus": {"num_labels": 12, "train_docs": 40, "dev_docs": 10, "test_docs": 10, "doc_length_mean": 60,
               "doc_length_min": 40, "doc_length_max": 80, "labels_per_doc_mean": 2.0, "noise_rate": 0.8,
               "noise_vocab_size": 60, "seed": 7},
    "tokenizer": {"kind": "word", "max_size": 2000},
    "encoder": {"layers": 1, "heads": 2, "hidden": 16, "ffn": 32, "dropout": 0.1},
    "segmenter": {"segment_length": 16, "max_doc_len": 64},
    "head": {"kind": "laat"},
    "train": {"epochs": 2, "learning_rate": 0.001, "warmup_steps": 2, "batch_size": 8},
    "pretrain": {"epochs": 1, "learning_rate": 0.001, "warmup_steps": 1, "batch_size": 8},
    "eval": {"precision_at": [1, 3]},
    "ablation": {"length_scale": 0.25, "lr_scale": 20.0, "top_k": 4},
}


@pytest.fixture
def tiny_config_dict():
    """A complete experiment small enough to train in seconds."""
    return copy.deepcopy(TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("config") / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG), encoding="utf-8")
    return path
