from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Optional

import numpy as np

from app.schemas.ranking import TripletCensus


class LabeledBatch(BaseModel):
    """B labeled samples with one-hot targets"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    samples: np.ndarray
    one_hot_labels: np.ndarray

    @field_validator("one_hot_labels")
    @classmethod
    def check_one_hot(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 2:
            raise ValueError("one_hot_labels must be 2-D")
        ones = np.sum(value == 1, axis=1)
        zeros = np.sum(value == 0, axis=1)
        if np.any(ones != 1) or np.any(ones + zeros != value.shape[1]):
            raise ValueError("every label row must be one-hot")
        return value

    @classmethod
    def from_labels(cls, samples: np.ndarray, labels, num_classes: int) -> "LabeledBatch":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(samples=samples, one_hot_labels=np.eye(num_classes)[labels])

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.one_hot_labels, axis=1)

    @property
    def size(self) -> int:
        return int(self.samples.shape[0])


class UnlabeledBatch(BaseModel):
    """mu * B unlabeled samples; `mu`, when given, must divide the row count"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    samples: np.ndarray
    mu: Optional[int] = Field(default=None, ge=1)

    @field_validator("samples")
    @classmethod
    def check_rows(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim < 2 or value.shape[0] < 1:
            raise ValueError("unlabeled samples must be a nonempty batch")
        return value

    @model_validator(mode="after")
    def check_mu(self) -> "UnlabeledBatch":
        if self.mu is not None and self.size % self.mu:
            raise ValueError(f"{self.size} unlabeled rows are not a multiple of mu={self.mu}")
        return self

    @property
    def size(self) -> int:
        return int(self.samples.shape[0])


class PseudoLabelOutcome(BaseModel):
    """Detached targets derived from the weak branch"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    probabilities: np.ndarray
    hard_labels: List[int]
    confidence_mask: List[bool]

    @property
    def confident_fraction(self) -> float:
        if not self.confidence_mask:
            return 0.0
        return float(np.mean(self.confidence_mask))

    @property
    def mask_array(self) -> np.ndarray:
        return np.asarray(self.confidence_mask, dtype=bool)

    def one_hot(self) -> np.ndarray:
        return np.eye(self.probabilities.shape[1])[np.asarray(self.hard_labels, dtype=np.int64)]


class LossBreakdown(BaseModel):
    supervised_ce: float
    unsupervised_ce: float
    supervised_rank: float
    unsupervised_rank: float
    total: float
    confident_fraction: float = Field(ge=0, le=1)
    census: TripletCensus = TripletCensus()
    max_distance: Optional[float] = None

    def is_finite(self) -> bool:
        values = [
            self.supervised_ce, self.unsupervised_ce,
            self.supervised_rank, self.unsupervised_rank, self.total,
        ]
        return bool(np.all(np.isfinite(values)))
