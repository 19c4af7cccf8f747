from pydantic import BaseModel, ConfigDict, Field
from typing import List, Optional

METRICS_VERSION = "rankingmatch-metrics v1"
METRICS_COLUMNS = [
    "step",
    "epoch",
    "lr",
    "supervised_ce",
    "unsupervised_ce",
    "supervised_rank",
    "unsupervised_rank",
    "total",
    "confident_fraction",
    "train_accuracy",
    "validation_accuracy",
    "test_accuracy",
    "wall_time",
]
METRICS_HEADER = f"# {METRICS_VERSION}\n" + ",".join(METRICS_COLUMNS) + "\n"


class MetricsRow(BaseModel):
    step: int = Field(ge=0)
    epoch: int = Field(ge=0)
    lr: float
    supervised_ce: float
    unsupervised_ce: float
    supervised_rank: float
    unsupervised_rank: float
    total: float
    confident_fraction: float = Field(ge=0, le=1)
    train_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    validation_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    test_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    wall_time: Optional[float] = None


class EvaluationReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    accuracy: float = Field(ge=0, le=1)
    error_rate: float = Field(ge=0, le=1)
    confusion_matrix: List[List[int]]
    sample_count: int = Field(ge=1)


class TrainingReport(BaseModel):
    steps: int
    epochs: int
    final: Optional[MetricsRow] = None
    best_validation_accuracy: Optional[float] = None
    best_step: Optional[int] = None
    test: Optional[EvaluationReport] = None
    raw_validation_accuracy: Optional[float] = None
    checkpoint_path: Optional[str] = None
    metrics_path: Optional[str] = None
