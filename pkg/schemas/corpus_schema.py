from typing import Dict, List

from pydantic import BaseModel, ConfigDict, Field, model_validator


class SyntheticSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_labels: int = Field(200, gt=0)
    zipf_exponent: float = Field(1.2, gt=0)
    train_docs: int = Field(5000, gt=0)
    dev_docs: int = Field(500, gt=0)
    test_docs: int = Field(500, gt=0)
    doc_length_mean: int = Field(1024, gt=0)
    doc_length_min: int = Field(256, gt=0)
    doc_length_max: int = Field(2048, gt=0)
    labels_per_doc_mean: float = Field(5.0, gt=0)  # a mid-range code count per clinical note; set it to match the target corpus
    keywords_per_label: int = Field(3, gt=0)
    noise_rate: float = Field(0.85, ge=0, le=1)
    noise_vocab_size: int = Field(2000, gt=0)
    seed: int = 0

    @model_validator(mode="after")
    def check_ranges(self):
        if not self.doc_length_min <= self.doc_length_mean <= self.doc_length_max:
            raise ValueError("doc_length_min <= doc_length_mean <= doc_length_max must hold")
        if self.labels_per_doc_mean > self.num_labels:
            raise ValueError("labels_per_doc_mean cannot exceed num_labels")
        return self


# --- JSONL record (one document per line) ---
class DocumentRecord(BaseModel):
    model_config = ConfigDict(extra="ignore")

    id: str
    text: str
    labels: List[str]


class CorpusStats(BaseModel):
    documents: int
    mean_words: float
    median_words: float
    max_words: int
    labels: int
    labels_per_doc_mean: float
    label_frequency_histogram: Dict[str, int]  # bucket "lo-hi" -> number of labels with that train frequency
    over_length: Dict[str, float] = {}  # words threshold -> fraction of documents longer
    fragmentation_ratio: Dict[str, float] = {}
