from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Optional

import numpy as np

CIFAR10_CLASSES = 10
CIFAR10_SHAPE = (3, 32, 32)
CIFAR10_RECORD_BYTES = 1 + 3 * 32 * 32


class Cifar10Record(BaseModel):
    """One 3073-byte record: label byte then red, green, blue planes"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    label: int = Field(ge=0, lt=CIFAR10_CLASSES)
    pixels: np.ndarray

    @field_validator("pixels")
    @classmethod
    def check_pixels(cls, value: np.ndarray) -> np.ndarray:
        if value.shape != CIFAR10_SHAPE:
            raise ValueError(f"pixels must have shape {CIFAR10_SHAPE}, got {value.shape}")
        return value


class SampleSet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    samples: np.ndarray
    labels: np.ndarray

    @model_validator(mode="after")
    def check_lengths(self):
        if len(self.samples) != len(self.labels):
            raise ValueError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        return self

    def __len__(self) -> int:
        return int(len(self.labels))

    def subset(self, indices) -> "SampleSet":
        indices = np.asarray(indices, dtype=np.int64)
        return SampleSet(samples=self.samples[indices], labels=self.labels[indices])

    @property
    def sample_shape(self):
        return tuple(self.samples.shape[1:])


class DatasetSplit(BaseModel):
    """train / validation / test, plus the train indices that keep their labels"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    train: SampleSet
    validation: SampleSet
    test: SampleSet
    num_classes: int = Field(ge=2)
    labeled_indices: List[int] = []

    @field_validator("labeled_indices")
    @classmethod
    def unique_indices(cls, value: List[int]) -> List[int]:
        if len(set(value)) != len(value):
            raise ValueError("labeled_indices must be unique")
        return value

    @property
    def labeled(self) -> SampleSet:
        return self.train.subset(self.labeled_indices)


class SyntheticSpec(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    num_classes: int = Field(default=4, ge=2)
    dims: int = Field(default=16, ge=1)
    means: Optional[np.ndarray] = None
    stdev: float = Field(default=1.0, ge=0)
    mean_scale: float = Field(default=1.0, ge=0)
    train_count: int = Field(default=4000, ge=1)
    validation_count: int = Field(default=500, ge=1)
    test_count: int = Field(default=2000, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def check_means(self):
        if self.means is not None and self.means.shape != (self.num_classes, self.dims):
            raise ValueError(f"means must have shape ({self.num_classes}, {self.dims})")
        return self

    def class_means(self) -> np.ndarray:
        if self.means is not None:
            return np.asarray(self.means, dtype=np.float64)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.num_classes, self.dims]))
        return self.mean_scale * rng.standard_normal((self.num_classes, self.dims))
