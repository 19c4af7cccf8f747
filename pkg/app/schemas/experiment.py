from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Optional, List
from enum import Enum


class RankingVariant(str, Enum):
    BATCH_MEAN = "BM"
    BATCH_HARD = "BH"
    BATCH_ALL = "BA"
    CONTRASTIVE = "CT"
    NONE = "none"


class PositiveNormalization(str, Enum):
    BATCH_SIZE = "batch-size"
    POSITIVE_COUNT = "positive-count"


class DatasetKind(str, Enum):
    SYNTHETIC = "synthetic"
    CIFAR10 = "cifar10"


class ModelKind(str, Enum):
    MLP = "mlp"
    MINI_CONV = "mini-conv"


class PadMode(str, Enum):
    REFLECT = "reflect"
    CONSTANT = "constant"


STRONG_TRANSFORMS = [
    "Autocontrast", "Brightness", "Color", "Contrast", "Equalize", "Identity",
    "Posterize", "Rotate", "Sharpness", "ShearX", "ShearY", "Solarize",
    "TranslateX", "TranslateY",
]


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ExperimentConfig(BaseModel):
    """Every knob of one experiment; defaults are the shared FixMatch-style hyperparameters"""

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    # ==================== Dataset ====================
    dataset: DatasetKind = DatasetKind.SYNTHETIC
    cifar10_path: Optional[str] = None
    cifar10_test_path: Optional[str] = None
    validation_size: int = Field(default=5000, ge=0)
    synthetic_classes: int = Field(default=4, ge=2)
    synthetic_dims: int = Field(default=16, ge=1)
    synthetic_stdev: float = Field(default=1.0, ge=0)
    synthetic_mean_scale: float = Field(default=1.0, ge=0)
    synthetic_train: int = Field(default=4000, ge=1)
    synthetic_validation: int = Field(default=500, ge=1)
    synthetic_test: int = Field(default=2000, ge=1)
    synthetic_path: Optional[str] = None
    num_labels: int = Field(default=40, ge=1)
    input_scale: float = Field(default=1.0, gt=0)

    # ==================== Model ====================
    model: ModelKind = ModelKind.MLP
    hidden_sizes: List[int] = [64, 64]
    conv_channels: List[int] = [16, 32, 64]

    # ==================== Objective ====================
    variant: RankingVariant = RankingVariant.BATCH_MEAN
    batch_size: int = Field(default=64, ge=1)
    mu: int = Field(default=7, ge=1)
    threshold: float = Field(default=0.95, gt=0, le=1)
    margin: float = Field(default=0.5, ge=0)
    temperature: float = Field(default=0.2, gt=0)
    lambda_u: float = Field(default=1.0, ge=0)
    lambda_r: float = Field(default=1.0, ge=0)
    soft_margin: bool = True
    normalize: bool = True
    mask_ranking: bool = False
    positive_normalization: PositiveNormalization = PositiveNormalization.BATCH_SIZE

    # ==================== Optimizer ====================
    lr: float = Field(default=0.03, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=0.0005, ge=0)
    ema_decay: float = Field(default=0.999, ge=0, lt=1)
    ema_warmup: bool = True
    epochs: int = Field(default=16, ge=1)
    max_steps: Optional[int] = Field(default=None, ge=1)
    seed: int = 0

    # ==================== Augmentation ====================
    pad: int = Field(default=4, ge=0)
    pad_mode: PadMode = PadMode.REFLECT
    cutout_size: int = Field(default=16, ge=0)
    flip_probability: float = Field(default=0.5, ge=0, le=1)
    digit_like: bool = False
    strong_transforms: List[str] = list(STRONG_TRANSFORMS)
    transform_count: int = Field(default=2, ge=0)
    sigma_weak: float = Field(default=0.05, ge=0)
    sigma_strong: float = Field(default=0.2, ge=0)
    drop_fraction: float = Field(default=0.25, ge=0, le=1)

    # ==================== Run ====================
    output_dir: str = "runs/default"
    eval_every: Optional[int] = Field(default=None, ge=1)
    log_wall_time: bool = False
    resume: bool = False

    # ==================== Bench / census ====================
    bench_sizes: List[int] = [16, 24, 32, 40, 48, 56, 64, 72]
    bench_classes: int = Field(default=10, ge=1)
    bench_repetitions: int = Field(default=7, ge=5)
    sweep_batches: int = Field(default=8, ge=1)
    census_sizes: List[int] = [8, 16, 32, 64]
    census_classes: List[int] = [2, 4, 8]

    @field_validator(
        "hidden_sizes", "conv_channels", "strong_transforms",
        "bench_sizes", "census_sizes", "census_classes",
        mode="before"
    )
    @classmethod
    def parse_list(cls, value):
        return _split_list(value)

    @field_validator("hidden_sizes", "conv_channels", "bench_sizes", "census_sizes", "census_classes")
    @classmethod
    def positive_entries(cls, value: List[int]) -> List[int]:
        if not value or any(v < 1 for v in value):
            raise ValueError("must be a nonempty list of positive integers")
        return value

    @field_validator("strong_transforms")
    @classmethod
    def known_transforms(cls, value: List[str]) -> List[str]:
        unknown = [name for name in value if name not in STRONG_TRANSFORMS]
        if unknown:
            raise ValueError(f"unregistered transforms: {unknown}")
        return value

    @model_validator(mode="after")
    def check_consistency(self):
        if self.transform_count > len(self.strong_transforms):
            raise ValueError("transform_count exceeds the number of registered strong transforms")
        if self.sigma_strong < self.sigma_weak:
            raise ValueError("sigma_strong must not be smaller than sigma_weak")
        if self.dataset == DatasetKind.CIFAR10 and not self.cifar10_path:
            raise ValueError("cifar10_path is required for dataset = cifar10")
        return self

    @property
    def num_classes(self) -> int:
        if self.dataset == DatasetKind.CIFAR10:
            return 10
        return self.synthetic_classes

    @property
    def uses_ranking(self) -> bool:
        return self.variant != RankingVariant.NONE
