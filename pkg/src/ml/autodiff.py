"""
Reverse-Mode Autodiff
A tape of array-valued primitive ops with their local vector-Jacobian products
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.error_handling import AutodiffError
from src.ml.parameters import ParameterVector, check_finite

ArrayLike = Union[np.ndarray, float, int]
VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Value node; records itself on a tape when any input needs gradients"""

    __slots__ = ("value", "parents", "vjp", "tape", "requires_grad", "name")
    __array_ufunc__ = None

    def __init__(self, value: np.ndarray, parents: Tuple["Tensor", ...] = (),
                 vjp: Optional[VJP] = None, tape: Optional["ComputationTape"] = None,
                 requires_grad: bool = False, name: Optional[str] = None):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise AutodiffError("Division by a tensor is not supported; multiply by a constant reciprocal")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class ComputationTape:
    """Creation-ordered record of ops; creation order is a topological order"""

    def __init__(self):
        self.nodes: List[Tensor] = []
        self.watched: Dict[str, Tuple[Tensor, Optional[ParameterVector]]] = {}
        self._by_id: Dict[int, Tensor] = {}
        self.gradients: Dict[str, np.ndarray] = {}

    def __len__(self):
        return len(self.nodes)

    def record(self, node: Tensor):
        self.nodes.append(node)

    def watch(self, params: Union[ParameterVector, np.ndarray], name: Optional[str] = None) -> Tensor:
        """Leaf whose gradient backward() reports; watching the same object twice reuses the leaf"""
        key = id(params)
        if key in self._by_id:
            return self._by_id[key]
        if name is None:
            name = f"param_{len(self.watched)}"
        if name in self.watched:
            raise AutodiffError(f"Tape already watches a leaf named '{name}'")
        values = params.values if isinstance(params, ParameterVector) else np.asarray(params, dtype=np.float64)
        leaf = Tensor(values, tape=self, requires_grad=True, name=name)
        self.record(leaf)
        self.watched[name] = (leaf, params if isinstance(params, ParameterVector) else None)
        self._by_id[key] = leaf
        return leaf


def constant(value: ArrayLike) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64))


def lift(x: Union[Tensor, ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _node(value: np.ndarray, parents: Tuple[Tensor, ...], vjp: VJP) -> Tensor:
    tape = None
    for parent in parents:
        if parent.requires_grad:
            tape = parent.tape
            break
    if tape is None:
        return Tensor(value)
    node = Tensor(value, parents=parents, vjp=vjp, tape=tape, requires_grad=True)
    tape.record(node)
    return node


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def neg(a) -> Tensor:
    a = lift(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes"""
    a, b = lift(a), lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise AutodiffError(f"matmul needs operands with at least 2 axes, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise AutodiffError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.value @ b.value, (a, b), vjp)


def tanh(a) -> Tensor:
    a = lift(a)
    y = np.tanh(a.value)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a) -> Tensor:
    a = lift(a)
    y = np.exp(a.value)
    return _node(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = lift(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def sigmoid(a) -> Tensor:
    a = lift(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def square(a) -> Tensor:
    a = lift(a)
    return _node(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = lift(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(y)
    return _node(y, (a,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis: int = -1) -> Tensor:
    return exp(log_softmax(a, axis=axis))


def reduce_sum(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = lift(a)
    y = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(y), (a,), vjp)


def mean(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = lift(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def clip(a, low: float, high: float) -> Tensor:
    a = lift(a)
    inside = (a.value >= low) & (a.value <= high)
    return _node(np.clip(a.value, low, high), (a,), lambda g: (g * inside,))


def minimum(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    pick_a = a.value <= b.value
    return _node(np.minimum(a.value, b.value), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def maximum(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    pick_a = a.value >= b.value
    return _node(np.maximum(a.value, b.value), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def take(a, index: np.ndarray) -> Tensor:
    """Gather one entry of the last axis per position: (..., K), (...) -> (...)"""
    a = lift(a)
    index = np.asarray(index, dtype=np.int64)[..., None]
    y = np.take_along_axis(a.value, index, axis=-1)[..., 0]

    def vjp(g):
        grad = np.zeros(a.shape)
        np.put_along_axis(grad, index, g[..., None], axis=-1)
        return (grad,)

    return _node(y, (a,), vjp)


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = lift(a)
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def block(flat, offset: int, shape: Tuple[int, ...], insert_axis: bool = False) -> Tensor:
    """Slice one parameter block out of a flat leaf, keeping leading axes

    insert_axis adds a unit axis before the block shape so that a bias of
    shape (*lead, out) broadcasts as (*lead, 1, out) against batched rows.
    """
    flat = lift(flat)
    size = int(np.prod(shape))
    lead = flat.shape[:-1]
    out_shape = lead + ((1,) if insert_axis else ()) + tuple(shape)
    y = flat.value[..., offset:offset + size].reshape(out_shape)

    def vjp(g):
        grad = np.zeros(flat.shape)
        grad[..., offset:offset + size] = g.reshape(lead + (size,))
        return (grad,)

    return _node(y, (flat,), vjp)


def backward(tape: ComputationTape, output_grad_seed: ArrayLike = 1.0,
             output: Optional[Tensor] = None, wrt: Optional[str] = None) -> Union[ParameterVector, np.ndarray]:
    """Reverse sweep from the output (default: last recorded node)

    Every watched leaf's gradient is stored in tape.gradients; the one named
    by wrt (default: the first watched) is returned, wrapped as a
    ParameterVector when a ParameterVector was watched.
    """
    if not tape.nodes or not tape.watched:
        raise AutodiffError("Backward on an empty tape; run a forward pass with watched parameters first")
    if output is None:
        output = tape.nodes[-1]
    if output.tape is not tape:
        raise AutodiffError("Output does not belong to this tape")

    seed = np.asarray(output_grad_seed, dtype=np.float64)
    if seed.shape != output.shape:
        if seed.size != 1 or output.value.size != 1:
            raise AutodiffError(
                f"Gradient seed of shape {seed.shape} does not match output of shape {output.shape}"
            )
        seed = np.full(output.shape, float(seed))

    grads: Dict[int, np.ndarray] = {id(output): seed}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node.vjp is None:
            if g is not None:
                grads[id(node)] = g
            continue
        for parent, parent_grad in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad or parent_grad is None:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad

    tape.gradients = {}
    for name, (leaf, params) in tape.watched.items():
        tape.gradients[name] = grads.get(id(leaf), np.zeros(leaf.shape))

    name = wrt if wrt is not None else next(iter(tape.watched))
    if name not in tape.watched:
        raise AutodiffError(f"Tape watches no leaf named '{name}'")
    grad = tape.gradients[name]
    params = tape.watched[name][1]
    if params is None:
        return grad
    check_finite(params.layout, grad, "gradient")
    return ParameterVector(params.layout, grad)
