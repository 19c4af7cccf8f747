"""
Primitive operation library.

Each primitive is a forward function over numpy arrays plus a vector-Jacobian
product (VJP). The VJP receives the upstream gradient, the parent values and
the node's own output, and returns one gradient (or None) per parent.
A primitive registered with `vjp=None` is non-differentiable.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

Array = np.ndarray
Forward = Callable[..., Array]
VJP = Callable[..., List[Optional[Array]]]

# Distance guard for sqrt at (near-)coincident rows
DISTANCE_EPS = 1e-12
# Above this argument softplus switches to x + log1p(exp(-x))
SOFTPLUS_SWITCH = 30.0


class OpSpec:
    def __init__(self, name: str, forward: Forward, vjp: Optional[VJP], arity: int):
        self.name = name
        self.forward = forward
        self.vjp = vjp
        self.arity = arity

    @property
    def differentiable(self) -> bool:
        return self.vjp is not None


OPS: Dict[str, OpSpec] = {}


def register(name: str, arity: int, vjp: Optional[VJP] = None):
    def decorator(forward: Forward) -> Forward:
        OPS[name] = OpSpec(name, forward, vjp, arity)
        return forward
    return decorator


def unbroadcast(grad: Array, shape: Tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _expand_reduced(grad: Array, shape: Tuple[int, ...], axis, keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(grad, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        for a in sorted(axes):
            grad = np.expand_dims(grad, a)
    return np.broadcast_to(grad, shape)


def stable_softplus(x: Array) -> Array:
    x = np.asarray(x)
    safe_low = np.minimum(x, SOFTPLUS_SWITCH)
    low = np.log1p(np.exp(safe_low))
    safe_high = np.maximum(x, SOFTPLUS_SWITCH)
    high = safe_high + np.log1p(np.exp(-safe_high))
    return np.where(x > SOFTPLUS_SWITCH, high, low)


def stable_softmax(x: Array, axis: int = -1) -> Array:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def row_norms(x: Array, axis: int = -1) -> Array:
    """Euclidean norms computed with max-abs prescaling (no overflow for large rows)"""
    scale = np.max(np.abs(x), axis=axis, keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    return np.sqrt(np.sum((x / scale) ** 2, axis=axis, keepdims=True)) * scale


# ==================== Elementwise binary ====================

@register("add", 2, vjp=lambda g, vals, out: [unbroadcast(g, vals[0].shape), unbroadcast(g, vals[1].shape)])
def _add(a, b):
    return a + b


@register("sub", 2, vjp=lambda g, vals, out: [unbroadcast(g, vals[0].shape), unbroadcast(-g, vals[1].shape)])
def _sub(a, b):
    return a - b


@register("mul", 2, vjp=lambda g, vals, out: [
    unbroadcast(g * vals[1], vals[0].shape),
    unbroadcast(g * vals[0], vals[1].shape),
])
def _mul(a, b):
    return a * b


@register("div", 2, vjp=lambda g, vals, out: [
    unbroadcast(g / vals[1], vals[0].shape),
    unbroadcast(-g * vals[0] / (vals[1] * vals[1]), vals[1].shape),
])
def _div(a, b):
    return a / b


@register("matmul", 2, vjp=lambda g, vals, out: [g @ vals[1].T, vals[0].T @ g])
def _matmul(a, b):
    return a @ b


# ==================== Elementwise unary ====================

@register("neg", 1, vjp=lambda g, vals, out: [-g])
def _neg(a):
    return -a


@register("exp", 1, vjp=lambda g, vals, out: [g * out])
def _exp(a):
    return np.exp(a)


@register("log", 1, vjp=lambda g, vals, out: [g / vals[0]])
def _log(a):
    return np.log(a)


@register("sqrt", 1, vjp=lambda g, vals, out: [g * 0.5 / out])
def _sqrt(a):
    return np.sqrt(a)


@register("square", 1, vjp=lambda g, vals, out: [2.0 * g * vals[0]])
def _square(a):
    return a * a


@register("relu", 1, vjp=lambda g, vals, out: [g * (vals[0] > 0)])
def _relu(a):
    return np.maximum(a, 0)


@register("clamp_min", 1, vjp=lambda g, vals, out, floor: [g * (vals[0] > floor)])
def _clamp_min(a, floor):
    return np.maximum(a, floor)


@register("softplus", 1, vjp=lambda g, vals, out: [g * expit(vals[0])])
def _softplus(a):
    return stable_softplus(a)


# ==================== Reductions ====================

@register("sum", 1, vjp=lambda g, vals, out, axis=None, keepdims=False: [
    _expand_reduced(g, vals[0].shape, axis, keepdims).copy()
])
def _sum(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims)


def _mean_vjp(g, vals, out, axis=None, keepdims=False):
    shape = vals[0].shape
    if axis is None:
        count = int(np.prod(shape))
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[a] for a in axes]))
    return [_expand_reduced(g, shape, axis, keepdims) / count]


@register("mean", 1, vjp=_mean_vjp)
def _mean(a, axis=None, keepdims=False):
    return np.mean(a, axis=axis, keepdims=keepdims)


@register("argmax", 1, vjp=None)
def _argmax(a, axis=-1):
    return np.argmax(a, axis=axis).astype(a.dtype)


# ==================== Normalizers ====================

def _softmax_vjp(g, vals, out, axis=-1):
    return [out * (g - np.sum(g * out, axis=axis, keepdims=True))]


@register("softmax", 1, vjp=_softmax_vjp)
def _softmax(a, axis=-1):
    return stable_softmax(a, axis=axis)


def _log_softmax_vjp(g, vals, out, axis=-1):
    probs = np.exp(out)
    return [g - probs * np.sum(g, axis=axis, keepdims=True)]


@register("log_softmax", 1, vjp=_log_softmax_vjp)
def _log_softmax(a, axis=-1):
    shifted = a - np.max(a, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def _l2_normalize_vjp(g, vals, out, axis=-1):
    norms = row_norms(vals[0], axis=axis)
    return [(g - out * np.sum(g * out, axis=axis, keepdims=True)) / norms]


@register("l2_normalize", 1, vjp=_l2_normalize_vjp)
def _l2_normalize(a, axis=-1):
    return a / row_norms(a, axis=axis)


# ==================== Shape / indexing ====================

@register("reshape", 1, vjp=lambda g, vals, out, shape: [g.reshape(vals[0].shape)])
def _reshape(a, shape):
    return a.reshape(shape)


def _transpose_vjp(g, vals, out, axes=None):
    if axes is None:
        return [g.T]
    return [np.transpose(g, np.argsort(axes))]


@register("transpose", 1, vjp=_transpose_vjp)
def _transpose(a, axes=None):
    return np.transpose(a, axes)


def _take_vjp(g, vals, out, indices):
    flat = np.zeros(vals[0].size, dtype=g.dtype)
    np.add.at(flat, indices, g.ravel())
    return [flat.reshape(vals[0].shape)]


@register("take", 1, vjp=_take_vjp)
def _take(a, indices):
    """Gather from the flattened tensor"""
    return a.ravel()[indices]


def _take_rows_vjp(g, vals, out, rows):
    grad = np.zeros_like(vals[0])
    np.add.at(grad, rows, g)
    return [grad]


@register("take_rows", 1, vjp=_take_rows_vjp)
def _take_rows(a, rows):
    return a[rows]


# ==================== Convolution ====================

def _conv_windows(x: Array, kernel: int, stride: int, padding: int) -> Array:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return windows[:, :, ::stride, ::stride]


def _conv2d_vjp(g, vals, out, stride=1, padding=0):
    x, w = vals
    kernel = w.shape[2]
    windows = _conv_windows(x, kernel, stride, padding)
    grad_w = np.einsum("nchwij,nohw->ocij", windows, g, optimize=True)

    n, c, h, wid = x.shape
    out_h, out_w = g.shape[2], g.shape[3]
    grad_xp = np.zeros((n, c, h + 2 * padding, wid + 2 * padding), dtype=g.dtype)
    for i in range(kernel):
        for j in range(kernel):
            contrib = np.einsum("nohw,oc->nchw", g, w[:, :, i, j], optimize=True)
            grad_xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += contrib
    grad_x = grad_xp[:, :, padding:padding + h, padding:padding + wid]
    return [grad_x, grad_w]


@register("conv2d", 2, vjp=_conv2d_vjp)
def _conv2d(x, w, stride=1, padding=0):
    """x: (N, C, H, W), w: (O, C, k, k) -> (N, O, H', W')"""
    windows = _conv_windows(x, w.shape[2], stride, padding)
    return np.einsum("nchwij,ocij->nohw", windows, w, optimize=True)


def check_shapes(op: str, values: Sequence[Array], attrs: Dict) -> Optional[str]:
    """Return a description of a shape violation for `op`, or None"""
    if op == "matmul":
        a, b = values
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            return f"matmul operands {a.shape} and {b.shape} do not align"
    elif op in ("add", "sub", "mul", "div"):
        try:
            np.broadcast_shapes(values[0].shape, values[1].shape)
        except ValueError:
            return f"{op} operands {values[0].shape} and {values[1].shape} do not broadcast"
    elif op == "conv2d":
        x, w = values
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
            return f"conv2d input {x.shape} incompatible with kernel {w.shape}"
    elif op == "reshape":
        if int(np.prod(attrs["shape"])) != values[0].size:
            return f"cannot reshape {values[0].shape} to {attrs['shape']}"
    return None
