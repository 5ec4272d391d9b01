from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class TokenizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["word", "bpe"] = "word"
    max_size: int = Field(8192, ge=6)
    num_merges: int = Field(4096, ge=0)


class EncoderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    layers: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    hidden: int = Field(128, ge=1)
    ffn: int = Field(512, ge=1)
    max_positions: int = Field(130, ge=8)  # one segment plus CLS and SEP
    vocab_size: Optional[int] = Field(None, ge=6)  # filled in from the trained tokenizer
    dropout: float = Field(0.1, ge=0, lt=1)
    init_std: float = Field(0.02, gt=0)
    seed: Optional[int] = None

    @model_validator(mode="after")
    def check_heads(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        return self


class SegmenterConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    segment_length: int = Field(128, ge=1)
    max_doc_len: int = Field(3072, ge=1)
    include_specials: bool = False
    truncation: Literal["none", "front", "back"] = "none"
    truncation_limit: Optional[int] = Field(None, ge=1)  # defaults to one segment


class HeadConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["laat", "caml", "bertxml", "clsmean"] = "laat"
    attention_dim: Optional[int] = Field(None, ge=1)  # d_a; None means d
    label_bias: bool = True
    projection_bias: bool = False
    bias_init: float = -2.0
    init_std: float = Field(0.02, gt=0)
    # V and W (and CAML's U); "normal" draws them like every other weight
    attention_init: Literal["xavier", "normal"] = "xavier"
