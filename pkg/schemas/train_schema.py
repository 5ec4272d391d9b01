from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ThresholdGrid(BaseModel):
    model_config = ConfigDict(extra="forbid")

    start: float = Field(0.02, ge=0, le=1)
    stop: float = Field(0.98, ge=0, le=1)
    step: float = Field(0.02, gt=0)

    @model_validator(mode="after")
    def check_order(self):
        if self.start > self.stop:
            raise ValueError("threshold grid start must not exceed stop")
        return self

    def values(self) -> list[float]:
        count = int((self.stop - self.start) / self.step + 1e-9) + 1
        return [round(self.start + i * self.step, 10) for i in range(count)]


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(20, ge=1)
    learning_rate: float = Field(5e-5, gt=0)
    warmup_steps: int = Field(2000, ge=0)
    batch_size: int = Field(8, ge=1)
    weight_decay: float = Field(0.01, ge=0)
    schedule: Literal["linear", "constant"] = "linear"
    max_grad_norm: Optional[float] = Field(None, gt=0)
    float64: bool = False
    segment_batch: Optional[int] = Field(None, ge=1)
    threshold_grid: ThresholdGrid = ThresholdGrid()
    seed: Optional[int] = None


class PretrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(1, ge=1)
    learning_rate: float = Field(1e-4, gt=0)
    warmup_steps: int = Field(100, ge=0)
    batch_size: int = Field(16, ge=1)  # segments per step
    weight_decay: float = Field(0.01, ge=0)
    schedule: Literal["linear", "constant"] = "linear"
    mask_rate: float = Field(0.15, gt=0, lt=1)
    seed: Optional[int] = None
