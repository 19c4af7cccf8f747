from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Dict

import numpy as np


class OptimState(BaseModel):
    """Nesterov SGD state; velocity is keyed by parameter name"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    velocity: Dict[str, np.ndarray] = {}
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=0.0005, ge=0)
    base_lr: float = Field(default=0.03, gt=0)
    step: int = Field(default=0, ge=0)
    total_steps: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_step(self):
        if self.step > self.total_steps:
            raise ValueError(f"step {self.step} exceeds total_steps {self.total_steps}")
        return self


class EmaState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    shadow: Dict[str, np.ndarray]
    decay: float = Field(default=0.999, ge=0, lt=1)
