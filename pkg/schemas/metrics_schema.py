from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    threshold: Optional[float] = Field(None, ge=0, le=1)  # overrides the dev-tuned value
    per_label_thresholds: bool = False
    precision_at: List[int] = [5, 8, 15]
    head_fraction: float = Field(0.1, gt=0, lt=1)
    workers: Optional[int] = Field(None, ge=1)  # None means DOCCODER_THREADS
    dump_attention: int = Field(0, ge=0)


class LabelRow(BaseModel):
    code: str
    train_frequency: int
    support: int
    precision: float
    recall: float
    f1: float


class MetricsReport(BaseModel):
    split: str
    documents: int
    threshold: float
    threshold_source: str  # "dev", "per-label" or "override"
    micro_precision: float
    micro_recall: float
    micro_f1: float
    macro_f1: float
    micro_auc: Optional[float]
    macro_auc: Optional[float]
    auc_skipped_labels: int
    precision_at: Dict[str, float]
    head_micro_f1: float
    tail_micro_f1: float
    per_label: List[LabelRow] = []


class PredictionRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    scores: List[float]
    gold: List[str]
