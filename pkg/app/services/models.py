"""
Small models exposing both the representation and the logits.

mlp: dense ReLU layers then a linear head.
mini-conv: three 3x3 conv blocks (the last two with stride 2), global
average pooling, then a linear head. No normalization layers, no dropout.
"""

from typing import Dict, Tuple
import logging

import numpy as np

from app.core.exceptions import ShapeError
from app.engine.tensor import Tensor, conv2d, default_dtype, relu
from app.schemas.experiment import ModelKind
from app.schemas.model import ModelParams, ModelSpec

logger = logging.getLogger(__name__)

KERNEL = 3


def _he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_params(spec: ModelSpec, seed: int = None) -> ModelParams:
    """He-scaled Gaussian weights, zero biases; deterministic per seed"""
    rng = np.random.default_rng(spec.init_seed if seed is None else seed)
    dtype = default_dtype()
    arrays: Dict[str, np.ndarray] = {}

    if spec.kind == ModelKind.MLP:
        fan_in = int(np.prod(spec.input_shape))
        for i, width in enumerate(spec.hidden_sizes):
            arrays[f"dense{i}.weight"] = _he_normal(rng, (fan_in, width), fan_in)
            arrays[f"dense{i}.bias"] = np.zeros(width)
            fan_in = width
    else:
        channels = spec.input_shape[0]
        for i, width in enumerate(spec.conv_channels):
            fan = channels * KERNEL * KERNEL
            arrays[f"conv{i}.weight"] = _he_normal(rng, (width, channels, KERNEL, KERNEL), fan)
            arrays[f"conv{i}.bias"] = np.zeros(width)
            channels = width
        fan_in = channels

    arrays["head.weight"] = _he_normal(rng, (fan_in, spec.num_classes), fan_in)
    arrays["head.bias"] = np.zeros(spec.num_classes)

    tensors = {
        name: Tensor(value, requires_grad=True, name=name, dtype=dtype)
        for name, value in arrays.items()
    }
    params = ModelParams(spec=spec, tensors=tensors)
    logger.debug("Initialized %s with %d parameters", spec.kind.value, params.parameter_count)
    return params


def model_forward(params: ModelParams, inputs) -> Tuple[Tensor, Tensor]:
    """(representation, logits) from one forward pass"""
    spec = params.spec
    t = params.tensors
    x = inputs if isinstance(inputs, Tensor) else Tensor(inputs, dtype=t["head.weight"].data.dtype)

    expected = tuple(spec.input_shape)
    if x.data.ndim < 1 or tuple(x.shape[1:]) != expected:
        raise ShapeError(f"model expects samples of shape {expected}, got batch {x.shape}", node="model_forward")

    if spec.kind == ModelKind.MLP:
        h = x.reshape(x.shape[0], int(np.prod(expected))) if x.data.ndim > 2 else x
        for i in range(len(spec.hidden_sizes)):
            h = relu(h @ t[f"dense{i}.weight"] + t[f"dense{i}.bias"])
    else:
        h = x
        for i in range(len(spec.conv_channels)):
            stride = 1 if i == 0 else 2
            bias = t[f"conv{i}.bias"].reshape(1, spec.conv_channels[i], 1, 1)
            h = relu(conv2d(h, t[f"conv{i}.weight"], stride=stride, padding=1) + bias)
        h = h.mean(axis=(2, 3))

    logits = h @ t["head.weight"] + t["head.bias"]
    return h, logits


def logits_fn(params: ModelParams):
    """Adapter returning only logits, as the objective expects"""
    def forward(samples) -> Tensor:
        return model_forward(params, samples)[1]
    return forward


def params_from_arrays(spec: ModelSpec, arrays: Dict[str, np.ndarray], trainable: bool = False) -> ModelParams:
    """Rebuild ModelParams from saved arrays, checking names and shapes against a fresh init"""
    reference = init_params(spec)
    tensors = {}
    for name, tensor in reference.tensors.items():
        if name not in arrays:
            raise ShapeError("parameter missing from saved arrays", node=name)
        value = np.asarray(arrays[name])
        if value.shape != tensor.shape:
            raise ShapeError(f"saved shape {value.shape} does not match {tensor.shape}", node=name)
        tensors[name] = Tensor(value, requires_grad=trainable, name=name, dtype=tensor.data.dtype)
    return ModelParams(spec=spec, tensors=tensors)
