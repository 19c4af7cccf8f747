from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Dict, List, Tuple

import numpy as np

from app.engine.tensor import Tensor
from app.schemas.experiment import ExperimentConfig, ModelKind


class ModelSpec(BaseModel):
    kind: ModelKind = ModelKind.MLP
    input_shape: Tuple[int, ...]
    hidden_sizes: List[int] = [64, 64]
    conv_channels: List[int] = [16, 32, 64]
    num_classes: int = Field(ge=2)
    activation: str = "relu"
    init_seed: int = 0

    @model_validator(mode="after")
    def check_input(self):
        if self.kind == ModelKind.MINI_CONV and len(self.input_shape) != 3:
            raise ValueError(f"mini-conv expects (channels, height, width) input, got {self.input_shape}")
        if self.activation != "relu":
            raise ValueError("only relu activations are supported")
        return self

    @property
    def layer_widths(self) -> List[int]:
        hidden = self.hidden_sizes if self.kind == ModelKind.MLP else self.conv_channels
        return list(hidden) + [self.num_classes]

    @classmethod
    def from_experiment(cls, config: ExperimentConfig, input_shape: Tuple[int, ...]) -> "ModelSpec":
        return cls(
            kind=config.model,
            input_shape=tuple(input_shape),
            hidden_sizes=list(config.hidden_sizes),
            conv_channels=list(config.conv_channels),
            num_classes=config.num_classes,
            init_seed=config.seed,
        )


class ModelParams(BaseModel):
    """Named parameter tensors (theta), in a fixed order"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec: ModelSpec
    tensors: Dict[str, Tensor]

    @property
    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    @property
    def names(self) -> List[str]:
        return list(self.tensors)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.tensors.items()}

    def with_arrays(self, arrays: Dict[str, np.ndarray]) -> "ModelParams":
        missing = set(self.tensors) - set(arrays)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        return ModelParams(
            spec=self.spec,
            tensors={
                name: Tensor(arrays[name], requires_grad=True, name=name, dtype=tensor.data.dtype)
                for name, tensor in self.tensors.items()
            },
        )

    def zero_grad(self) -> None:
        for tensor in self.tensors.values():
            tensor.zero_grad()
