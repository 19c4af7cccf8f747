from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union
import numpy as np

from app.core.config import settings
from app.core.exceptions import GraphError, NonFiniteError, ShapeError
from app.engine.ops import OPS, check_shapes
from app.engine.tensor import Tensor, default_dtype, topological_order

TensorLike = Union[Tensor, np.ndarray, Sequence, float]


class Node:
    """One primitive in a Graph; parents are indices of earlier nodes"""

    __slots__ = ("index", "name", "op", "parents", "attrs", "kind", "shape", "constant")

    def __init__(self, index, name, op, parents, attrs, kind, shape, constant=None):
        self.index = index
        self.name = name
        self.op = op
        self.parents = parents
        self.attrs = attrs
        self.kind = kind  # "input", "constant" or "op"
        self.shape = shape
        self.constant = constant

    def __repr__(self):
        return f"Node({self.index}, {self.name}, {self.op or self.kind})"


class Graph:
    """
    Ordered list of primitives, built by tracing a function over named inputs.

    Nodes are stored in topological order, so evaluation is a single forward
    pass and differentiation a single reverse pass. Data-dependent attributes
    (gather indices, selected max/min entries) are frozen at trace time.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self.inputs: Dict[str, int] = {}
        self.outputs: Dict[str, int] = {}
        self._values: Optional[List[np.ndarray]] = None

    @classmethod
    def trace(
        cls,
        fn: Callable[..., Union[Tensor, Mapping[str, Tensor]]],
        example_inputs: Mapping[str, TensorLike],
    ) -> "Graph":
        leaves = {
            name: Tensor(value, requires_grad=True, name=name)
            for name, value in example_inputs.items()
        }
        result = fn(**leaves)
        outputs = {"output": result} if isinstance(result, Tensor) else dict(result)

        graph = cls()
        index_of: Dict[int, int] = {}
        for name, leaf in leaves.items():
            index_of[id(leaf)] = graph._append(name, None, [], {}, "input", leaf.shape)
            graph.inputs[name] = index_of[id(leaf)]

        for tensor in topological_order(list(outputs.values())):
            if id(tensor) in index_of:
                continue
            if tensor.is_leaf:
                index_of[id(tensor)] = graph._append(
                    tensor.name or f"const{len(graph.nodes)}", None, [], {}, "constant",
                    tensor.shape, constant=tensor.data.copy()
                )
            else:
                parents = [index_of[id(p)] for p in tensor.parents]
                index_of[id(tensor)] = graph._append(
                    tensor.name or f"{tensor.op}{len(graph.nodes)}", tensor.op, parents,
                    dict(tensor.attrs), "op", tensor.shape
                )

        for name, tensor in outputs.items():
            graph.outputs[name] = index_of[id(tensor)]
        return graph

    def _append(self, name, op, parents, attrs, kind, shape, constant=None) -> int:
        index = len(self.nodes)
        if any(p >= index for p in parents):
            raise GraphError("parents must precede their children", node=name)
        self.nodes.append(Node(index, name, op, parents, attrs, kind, tuple(shape), constant))
        return index

    def node(self, name: str) -> Node:
        for candidate in self.nodes:
            if candidate.name == name:
                return candidate
        raise GraphError(f"no node named {name!r}")


def forward_eval(
    graph: Graph,
    inputs: Mapping[str, TensorLike],
    outputs: Optional[Sequence[str]] = None,
    strict: Optional[bool] = None,
) -> Dict[str, np.ndarray]:
    """Evaluate every node in order; return the requested outputs"""
    strict = settings.STRICT_FINITE if strict is None else strict
    missing = set(graph.inputs) - set(inputs)
    if missing:
        raise GraphError(f"unbound inputs: {sorted(missing)}")

    values: List[Optional[np.ndarray]] = [None] * len(graph.nodes)
    for node in graph.nodes:
        if node.kind == "input":
            value = inputs[node.name]
            value = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=default_dtype())
            if value.shape != node.shape:
                raise ShapeError(f"expected shape {node.shape}, got {value.shape}", node=node.name)
            if strict and not np.all(np.isfinite(value)):
                raise NonFiniteError("non-finite input", name=node.name)
            values[node.index] = value
        elif node.kind == "constant":
            values[node.index] = node.constant
        else:
            parent_values = [values[p] for p in node.parents]
            problem = check_shapes(node.op, parent_values, node.attrs)
            if problem:
                raise ShapeError(problem, node=node.name)
            values[node.index] = OPS[node.op].forward(*parent_values, **node.attrs)

    graph._values = values
    wanted = outputs or list(graph.outputs)
    return {name: values[graph.outputs[name]] for name in wanted}


def backward(
    graph: Graph,
    output: str,
    seed: TensorLike,
    leaves: Optional[Mapping[str, Tensor]] = None,
) -> Dict[str, np.ndarray]:
    """
    Gradients of (output . seed) for every graph input.

    When `leaves` maps input names to Tensors, their grad slots are
    populated by accumulation.
    """
    if graph._values is None:
        raise GraphError("backward called before forward_eval", node=output)
    values = graph._values
    out_index = graph.outputs[output]
    seed_array = seed.data if isinstance(seed, Tensor) else np.asarray(seed, dtype=values[out_index].dtype)
    if seed_array.shape != values[out_index].shape:
        raise ShapeError(
            f"seed shape {seed_array.shape} does not match output {values[out_index].shape}",
            node=output
        )

    grads: Dict[int, np.ndarray] = {out_index: seed_array}
    for node in reversed(graph.nodes[:out_index + 1]):
        grad = grads.get(node.index)
        if grad is None or node.kind != "op":
            continue
        spec = OPS[node.op]
        if not spec.differentiable:
            raise GraphError(f"primitive '{node.op}' is not differentiable", node=node.name)
        parent_values = [values[p] for p in node.parents]
        parent_grads = spec.vjp(grad, parent_values, values[node.index], **node.attrs)
        for parent, parent_grad in zip(node.parents, parent_grads):
            if parent_grad is None or graph.nodes[parent].kind == "constant":
                continue
            grads[parent] = parent_grad if parent not in grads else grads[parent] + parent_grad

    result = {
        name: grads.get(index, np.zeros_like(values[index]))
        for name, index in graph.inputs.items()
    }
    for name, leaf in (leaves or {}).items():
        leaf.grad = result[name] if leaf.grad is None else leaf.grad + result[name]
    return result
