from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from schemas.corpus_schema import SyntheticSpec
from schemas.metrics_schema import EvalConfig
from schemas.model_schema import EncoderConfig, HeadConfig, SegmenterConfig, TokenizerConfig
from schemas.train_schema import PretrainConfig, TrainConfig


class AblationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    length_scale: float = Field(1.0, gt=0)  # multiplies every (max_doc_len, c) pair of the lengths suite
    lr_scale: float = Field(1.0, gt=0)  # multiplies the reduced learning rate of the schedule suite
    top_k: int = Field(50, ge=1)


class ExperimentConfig(BaseModel):
    """Everything one run needs. Validation fills in the derived values so the
    dumped config is complete."""
    model_config = ConfigDict(extra="forbid")

    seed: int
    corpus: Optional[SyntheticSpec] = None
    data_path: Optional[str] = None
    top_k_labels: Optional[int] = Field(None, ge=1)
    permissive_labels: bool = False  # drop unknown dev/test codes instead of failing
    tokenizer: TokenizerConfig = TokenizerConfig()
    encoder: EncoderConfig = EncoderConfig()
    segmenter: SegmenterConfig = SegmenterConfig()
    head: HeadConfig = HeadConfig()
    train: TrainConfig = TrainConfig()
    pretrain: PretrainConfig = PretrainConfig()
    eval: EvalConfig = EvalConfig()
    ablation: AblationConfig = AblationConfig()

    @model_validator(mode="after")
    def resolve(self):
        if self.corpus is not None and self.data_path is not None:
            raise ValueError("give either corpus or data_path, not both")
        if self.corpus is None and self.data_path is None:
            self.corpus = SyntheticSpec(seed=self.seed)
        elif self.corpus is not None and "seed" not in self.corpus.model_fields_set:
            self.corpus = self.corpus.model_copy(update={"seed": self.seed})
        c = self.segmenter.segment_length
        if "max_positions" not in self.encoder.model_fields_set:
            self.encoder = self.encoder.model_copy(update={"max_positions": c + 2})
        if c + 2 > self.encoder.max_positions:
            raise ValueError(f"segmenter.segment_length={c} needs encoder.max_positions >= {c + 2}")
        for section in ("encoder", "train", "pretrain"):
            part = getattr(self, section)
            if part.seed is None:
                setattr(self, section, part.model_copy(update={"seed": self.seed}))
        return self


class RunManifest(BaseModel):
    command: str
    build: str
    started_at: str
    finished_at: str
    config: Dict[str, Any]
    files: List[str]
    report: Optional[Dict[str, Any]] = None
