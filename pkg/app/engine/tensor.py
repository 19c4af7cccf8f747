from typing import Dict, List, Optional, Sequence, Tuple, Union
import numpy as np

from app.core.config import settings
from app.core.exceptions import GraphError, ShapeError
from app.engine.ops import OPS, check_shapes

ArrayLike = Union[np.ndarray, Sequence, float, int]


def default_dtype() -> np.dtype:
    return np.dtype(np.float32) if settings.PRECISION == "float32" else np.dtype(np.float64)


class Tensor:
    """
    Dense array with an optional gradient slot.

    Tensors produced by primitives remember the primitive, their parents and
    the primitive's attributes, so the tape can be replayed backwards.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "attrs", "name")

    # numpy operands on the left defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[np.dtype] = None,
    ):
        self.data = np.array(data, dtype=dtype or default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op: Optional[str] = None
        self.parents: Tuple["Tensor", ...] = ()
        self.attrs: Dict = {}
        self.name = name

    # ==================== Introspection ====================
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        origin = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{label}{origin})"

    # ==================== Operators ====================
    def __add__(self, other):
        return apply("add", self, other)

    def __radd__(self, other):
        return apply("add", other, self)

    def __sub__(self, other):
        return apply("sub", self, other)

    def __rsub__(self, other):
        return apply("sub", other, self)

    def __mul__(self, other):
        return apply("mul", self, other)

    def __rmul__(self, other):
        return apply("mul", other, self)

    def __truediv__(self, other):
        return apply("div", self, other)

    def __rtruediv__(self, other):
        return apply("div", other, self)

    def __neg__(self):
        return apply("neg", self)

    def __matmul__(self, other):
        return apply("matmul", self, other)

    def __rmatmul__(self, other):
        return apply("matmul", other, self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return apply("mean", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", self, shape=tuple(shape))

    @property
    def T(self) -> "Tensor":
        return apply("transpose", self, axes=None)

    # ==================== Differentiation ====================
    def backward(self, seed: Optional[ArrayLike] = None) -> None:
        """Accumulate d(self . seed)/d(leaf) into every leaf with requires_grad"""
        seed_array = np.ones_like(self.data) if seed is None else np.asarray(seed, dtype=self.data.dtype)
        if seed_array.shape != self.shape:
            raise ShapeError(f"seed shape {seed_array.shape} does not match output {self.shape}", node=self.name)

        order = topological_order([self])
        grads = backpropagate(order, {id(self): seed_array})
        for node in order:
            if node.is_leaf and node.requires_grad:
                grad = grads.get(id(node))
                if grad is None:
                    grad = np.zeros_like(node.data)
                node.grad = grad if node.grad is None else node.grad + grad


def as_tensor(value: Union["Tensor", ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def apply(op: str, *inputs, **attrs) -> Tensor:
    """Run a primitive eagerly and record it on the tape"""
    spec = OPS[op]
    parents = tuple(as_tensor(x) for x in inputs)
    values = [p.data for p in parents]
    problem = check_shapes(op, values, attrs)
    if problem:
        raise ShapeError(problem, node=op)

    out = Tensor(spec.forward(*values, **attrs), dtype=values[0].dtype)
    out.op = op
    out.parents = parents
    out.attrs = attrs
    out.requires_grad = any(p.requires_grad for p in parents)
    return out


def topological_order(outputs: Sequence[Tensor]) -> List[Tensor]:
    """Parents-before-children order of every tensor reachable from `outputs`"""
    visited = set()
    order: List[Tensor] = []
    stack = [(t, False) for t in reversed(outputs)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backpropagate(order: List[Tensor], seeds: Dict[int, np.ndarray]) -> Dict[int, np.ndarray]:
    """Reverse sweep over a topological order; gradients accumulate per tensor"""
    grads: Dict[int, np.ndarray] = dict(seeds)
    for node in reversed(order):
        grad = grads.get(id(node))
        if grad is None or node.is_leaf or not node.requires_grad:
            continue
        spec = OPS[node.op]
        if not spec.differentiable:
            raise GraphError(f"primitive '{node.op}' is not differentiable", node=node.name or node.op)
        parent_grads = spec.vjp(grad, [p.data for p in node.parents], node.data, **node.attrs)
        for parent, parent_grad in zip(node.parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
    return grads


# ==================== Functional helpers ====================

def exp(x) -> Tensor:
    return apply("exp", x)


def log(x) -> Tensor:
    return apply("log", x)


def sqrt(x) -> Tensor:
    return apply("sqrt", x)


def square(x) -> Tensor:
    return apply("square", x)


def relu(x) -> Tensor:
    return apply("relu", x)


def softplus(x) -> Tensor:
    return apply("softplus", x)


def clamp_min(x, floor: float) -> Tensor:
    return apply("clamp_min", x, floor=floor)


def softmax(x, axis: int = -1) -> Tensor:
    return apply("softmax", x, axis=axis)


def log_softmax(x, axis: int = -1) -> Tensor:
    return apply("log_softmax", x, axis=axis)


def l2_normalize(x, axis: int = -1) -> Tensor:
    return apply("l2_normalize", x, axis=axis)


def take(x, indices) -> Tensor:
    return apply("take", x, indices=np.asarray(indices, dtype=np.int64))


def take_rows(x, rows) -> Tensor:
    return apply("take_rows", x, rows=np.asarray(rows, dtype=np.int64))


def argmax(x, axis: int = -1) -> Tensor:
    return apply("argmax", x, axis=axis)


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    return apply("conv2d", x, w, stride=stride, padding=padding)
