from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List

import numpy as np

from app.engine.tensor import Tensor
from app.schemas.experiment import ExperimentConfig, PositiveNormalization

NORM_TOLERANCE = 1e-6


class NormalizedLogitsBatch(BaseModel):
    """The set C: row-normalized logits with one (ground-truth or pseudo) label per row"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    logits: Tensor
    labels: List[int]
    num_classes: int = Field(ge=1)
    normalized: bool = True

    @model_validator(mode="after")
    def check_rows(self):
        if self.logits.data.ndim != 2:
            raise ValueError(f"logits must be 2-D, got shape {self.logits.shape}")
        if len(self.labels) != self.logits.shape[0]:
            raise ValueError(f"{len(self.labels)} labels for {self.logits.shape[0]} rows")
        if self.logits.shape[1] != self.num_classes:
            raise ValueError(f"logits have {self.logits.shape[1]} columns, expected {self.num_classes}")
        if any(label < 0 or label >= self.num_classes for label in self.labels):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.normalized and self.count:
            norms = np.linalg.norm(self.logits.data, axis=1)
            tolerance = NORM_TOLERANCE if self.logits.data.dtype == np.float64 else 1e-4
            if np.any(np.abs(norms - 1.0) > tolerance):
                raise ValueError("rows are not unit-normalized")
        return self

    @property
    def count(self) -> int:
        return int(self.logits.shape[0])

    @property
    def label_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)


class RankingLossConfig(BaseModel):
    margin: float = Field(default=0.5, ge=0)
    temperature: float = Field(default=0.2, gt=0)
    soft_margin: bool = True
    positive_normalization: PositiveNormalization = PositiveNormalization.BATCH_SIZE
    apply_confidence_mask: bool = False

    @classmethod
    def from_experiment(cls, config: ExperimentConfig) -> "RankingLossConfig":
        return cls(
            margin=config.margin,
            temperature=config.temperature,
            soft_margin=config.soft_margin,
            positive_normalization=config.positive_normalization,
            apply_confidence_mask=config.mask_ranking,
        )


class TripletCensus(BaseModel):
    batch_all_triplets: int = Field(default=0, ge=0)
    batch_hard_triplets: int = Field(default=0, ge=0)
    batch_mean_triplets: int = Field(default=0, ge=0)
    pairwise_terms: int = Field(default=0, ge=0)

    def __add__(self, other: "TripletCensus") -> "TripletCensus":
        return TripletCensus(
            batch_all_triplets=self.batch_all_triplets + other.batch_all_triplets,
            batch_hard_triplets=self.batch_hard_triplets + other.batch_hard_triplets,
            batch_mean_triplets=self.batch_mean_triplets + other.batch_mean_triplets,
            pairwise_terms=self.pairwise_terms + other.pairwise_terms,
        )


class RankingLossResult(BaseModel):
    """Scalar loss (on the tape) plus what was counted while computing it"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    loss: Tensor
    census: TripletCensus
    pair_count: int = 0

    @property
    def value(self) -> float:
        return float(self.loss.data)
