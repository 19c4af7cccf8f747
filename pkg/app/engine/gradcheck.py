from typing import Callable
import numpy as np

from app.core.exceptions import NonFiniteError, ShapeError
from app.engine.tensor import Tensor

ScalarFunction = Callable[[Tensor], Tensor]


def _scalar(value: Tensor, where: str) -> float:
    if value.size != 1:
        raise ShapeError(f"function must return a scalar, got shape {value.shape}", node=where)
    result = float(value.data.reshape(-1)[0])
    if not np.isfinite(result):
        raise NonFiniteError(f"function value is {result}", name=where)
    return result


def analytic_gradient(function: ScalarFunction, x: np.ndarray) -> np.ndarray:
    leaf = Tensor(np.array(x, dtype=np.float64), requires_grad=True, name="x", dtype=np.float64)
    out = function(leaf)
    _scalar(out, "f(x)")
    out.backward()
    return leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)


def central_difference(function: ScalarFunction, x: np.ndarray, step: float) -> np.ndarray:
    base = np.array(x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        plus = base.copy().reshape(-1)
        minus = base.copy().reshape(-1)
        plus[i] += step
        minus[i] -= step
        f_plus = _scalar(function(Tensor(plus.reshape(base.shape), dtype=np.float64)), f"f(x+h e{i})")
        f_minus = _scalar(function(Tensor(minus.reshape(base.shape), dtype=np.float64)), f"f(x-h e{i})")
        flat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def finite_difference_check(function: ScalarFunction, x: np.ndarray, step: float = 1e-5) -> float:
    """
    Max over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-12).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = analytic_gradient(function, x)
    numeric = central_difference(function, x, step)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0
