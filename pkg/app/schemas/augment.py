from pydantic import BaseModel, Field, model_validator
from typing import Dict, List, Tuple
from enum import Enum

from app.schemas.experiment import STRONG_TRANSFORMS, ExperimentConfig, PadMode


class AugmentMode(str, Enum):
    WEAK = "weak"
    STRONG = "strong"


# Declared conventions; magnitudes outside these ranges are rejected
MAGNITUDE_RANGES: Dict[str, Tuple[float, float]] = {
    "Autocontrast": (0.0, 1.0),
    "Brightness": (0.05, 1.95),
    "Color": (0.05, 1.95),
    "Contrast": (0.05, 1.95),
    "Equalize": (0.0, 1.0),
    "Identity": (0.0, 1.0),
    "Posterize": (4.0, 8.0),
    "Rotate": (-30.0, 30.0),
    "Sharpness": (0.05, 1.95),
    "ShearX": (-0.3, 0.3),
    "ShearY": (-0.3, 0.3),
    "Solarize": (0.0, 1.0),
    "TranslateX": (-0.3, 0.3),
    "TranslateY": (-0.3, 0.3),
}


class AugmentPolicy(BaseModel):
    mode: AugmentMode = AugmentMode.WEAK
    pad: int = Field(default=4, ge=0)
    pad_mode: PadMode = PadMode.REFLECT
    flip_probability: float = Field(default=0.5, ge=0, le=1)
    cutout_size: int = Field(default=16, ge=0)
    transforms: List[str] = list(STRONG_TRANSFORMS)
    transform_count: int = Field(default=2, ge=0)
    magnitude_ranges: Dict[str, Tuple[float, float]] = dict(MAGNITUDE_RANGES)
    sigma_weak: float = Field(default=0.05, ge=0)
    sigma_strong: float = Field(default=0.2, ge=0)
    drop_fraction: float = Field(default=0.25, ge=0, le=1)
    rng_seed: int = 0

    @model_validator(mode="after")
    def check_transforms(self):
        if self.transform_count > len(self.transforms):
            raise ValueError("transform_count exceeds the number of available transforms")
        return self

    @classmethod
    def from_experiment(cls, config: ExperimentConfig, mode: AugmentMode) -> "AugmentPolicy":
        return cls(
            mode=mode,
            pad=config.pad,
            pad_mode=config.pad_mode,
            flip_probability=0.0 if config.digit_like else config.flip_probability,
            cutout_size=config.cutout_size,
            transforms=list(config.strong_transforms),
            transform_count=config.transform_count,
            sigma_weak=config.sigma_weak,
            sigma_strong=config.sigma_strong,
            drop_fraction=config.drop_fraction,
            rng_seed=config.seed,
        )
