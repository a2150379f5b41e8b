"""Tape-based reverse-mode autodiff over dense float64 numpy arrays.

Every op records its inputs and a backward closure on the tape owned by its
operands. ``Tape.backward`` walks the records in reverse creation order,
which is a valid reverse topological order because inputs are always
created before the ops that consume them.

Binary ops follow numpy broadcasting; gradients are summed back to each
operand's shape.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "EmptyRowError",
    "matmul",
    "add",
    "sub",
    "mul",
    "scalar_mul",
    "concat",
    "take",
    "reshape",
    "sum",
    "row_sum",
    "relu",
    "leaky_relu",
    "masked_softmax",
    "layer_norm",
    "squared_error",
    "binary_cross_entropy_with_logits",
    "Adam",
    "adam_step",
]


class ShapeError(ValueError):
    pass


class EmptyRowError(ValueError):
    """A softmax row had no valid entries and empty rows were not allowed."""


class Tensor:
    __slots__ = ("value", "tape", "index", "requires_grad", "grad", "__weakref__")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int, requires_grad: bool):
        self.value = value
        self.tape = tape
        self.index = index
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, index={self.index}, requires_grad={self.requires_grad})"


@dataclass
class TapeNode:
    op: str
    inputs: tuple[int, ...]
    output: int
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    requires_grad: bool = False
    # leaves only; weak so a dropped tensor graph is freed by refcounting
    tensor: weakref.ref | None = None


@dataclass
class Tape:
    """Records ops in creation order.

    The tape never holds tensors strongly and backward closures capture only
    arrays, so tensors and tapes form no reference cycles.
    """

    nodes: list[TapeNode] = field(default_factory=list)

    def _new(self, value, op, inputs, backward, requires_grad) -> Tensor:
        t = Tensor(np.asarray(value, dtype=np.float64), self, len(self.nodes), requires_grad)
        node = TapeNode(op, tuple(x.index for x in inputs), t.index, backward, requires_grad)
        if op == "leaf":
            node.tensor = weakref.ref(t)
        self.nodes.append(node)
        return t

    def leaf(self, value, requires_grad: bool = True) -> Tensor:
        """A parameter (or any input we want a gradient for)."""
        return self._new(np.array(value, dtype=np.float64), "leaf", (), None, requires_grad)

    def constant(self, value) -> Tensor:
        return self._new(np.asarray(value, dtype=np.float64), "const", (), None, False)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf with requires_grad."""
        if loss.tape is not self:
            raise ValueError("loss belongs to a different tape")
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads.pop(node.output, None)
            if g is None:
                continue
            if node.backward is None:
                t = node.tensor() if node.tensor is not None else None
                if t is not None and t.requires_grad:
                    t.grad = g if t.grad is None else t.grad + g
                continue
            for idx, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not self.nodes[idx].requires_grad:
                    continue
                if idx in grads:
                    grads[idx] = grads[idx] + gi
                else:
                    grads[idx] = gi


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise ValueError("at least one operand must be a Tensor")


def _lift(tape: Tape, x) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise ValueError("operands live on different tapes")
        return x
    return tape.constant(x)


def _needs(*xs: Tensor) -> bool:
    return any(x.requires_grad for x in xs)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(*shapes) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as e:
        raise ShapeError(str(e)) from None


def matmul(a, b) -> Tensor:
    """``a @ b`` with numpy matmul semantics; both operands need ndim >= 2."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2])
    av, bv = a.value, b.value
    need_a, need_b = a.requires_grad, b.requires_grad

    if bv.ndim == 2:
        # stacked rows times one matrix: a single 2-D GEMM each way
        k = av.shape[-1]

        def backward(g):
            ga = g @ bv.T if need_a else None
            gb = av.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]) if need_b else None
            return ga, gb

        out = (av.reshape(-1, k) @ bv).reshape(av.shape[:-1] + (bv.shape[1],))
        return tape._new(out, "matmul", (a, b), backward, _needs(a, b))

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if need_a else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if need_b else None
        return ga, gb

    return tape._new(av @ bv, "matmul", (a, b), backward, _needs(a, b))


def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return tape._new(a.value + b.value, "add", (a, b), backward, _needs(a, b))


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return tape._new(a.value - b.value, "sub", (a, b), backward, _needs(a, b))


def mul(a, b) -> Tensor:
    """Elementwise product."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape(a.shape, b.shape)
    av, bv = a.value, b.value
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        ga = _unbroadcast(g * bv, av.shape) if need_a else None
        gb = _unbroadcast(g * av, bv.shape) if need_b else None
        return ga, gb

    return tape._new(av * bv, "mul", (a, b), backward, _needs(a, b))


def scalar_mul(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return x.tape._new(x.value * c, "scalar_mul", (x,), lambda g: (g * c,), x.requires_grad)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    try:
        out = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def backward(g):
        return [np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=ax) for k in range(len(bounds) - 1)]

    return tape._new(out, "concat", xs, backward, _needs(*xs))


def take(x: Tensor, key) -> Tensor:
    """Basic or advanced indexing (``x[key]``); repeated indices accumulate."""
    out = x.value[key]
    shape = x.shape

    basic = _is_basic_index(key)

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return x.tape._new(np.array(out), "take", (x,), backward, x.requires_grad)


def _is_basic_index(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return all(k is Ellipsis or k is None or isinstance(k, (slice, int, np.integer)) for k in keys)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return x.tape._new(out, "reshape", (x,), lambda g: (g.reshape(old),), x.requires_grad)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return x.tape._new(out, "sum", (x,), backward, x.requires_grad)


def row_sum(x: Tensor) -> Tensor:
    """Sum over the last axis."""
    return sum(x, axis=-1)


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return x.tape._new(np.where(mask, x.value, 0.0), "relu", (x,), lambda g: (g * mask,), x.requires_grad)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(x.value > 0, 1.0, slope)
    return x.tape._new(x.value * scale, "leaky_relu", (x,), lambda g: (g * scale,), x.requires_grad)


def masked_softmax(x: Tensor, mask: np.ndarray, axis: int = -1, allow_empty: bool = False) -> Tensor:
    """Softmax over ``axis`` restricted to entries where ``mask`` is true.

    Masked entries get exactly 0. A row with no valid entry raises
    :class:`EmptyRowError` unless ``allow_empty``, in which case the whole
    row is 0.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    valid = mask.any(axis=axis, keepdims=True)
    if not allow_empty and not valid.all():
        raise EmptyRowError("softmax row with zero valid entries")
    shifted = np.where(mask, x.value, -np.inf)
    top = np.max(shifted, axis=axis, keepdims=True)
    top = np.where(valid, top, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x.value, 0.0) - top), 0.0)
    z = e.sum(axis=axis, keepdims=True)
    y = e / np.where(valid, z, 1.0)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return x.tape._new(y, "masked_softmax", (x,), backward, x.requires_grad)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine part)."""
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return x.tape._new(y, "layer_norm", (x,), backward, x.requires_grad)


def squared_error(pred: Tensor, target: np.ndarray, weight: np.ndarray | None = None) -> Tensor:
    """Scalar ``sum(weight * (pred - target)**2)``; weight 0 drops an entry."""
    target = np.asarray(target, dtype=np.float64)
    w = np.ones(pred.shape) if weight is None else np.broadcast_to(np.asarray(weight, dtype=np.float64), pred.shape)
    diff = np.where(w != 0, pred.value - np.nan_to_num(target), 0.0)
    out = np.sum(w * diff * diff)
    return pred.tape._new(out, "squared_error", (pred,), lambda g: (2.0 * g * w * diff,), pred.requires_grad)


def binary_cross_entropy_with_logits(logits: Tensor, labels: np.ndarray, weight: np.ndarray | None = None) -> Tensor:
    """Scalar ``sum(weight * BCE(sigmoid(logits), labels))``, computed stably."""
    z = logits.value
    y = np.nan_to_num(np.asarray(labels, dtype=np.float64))
    w = np.ones(z.shape) if weight is None else np.broadcast_to(np.asarray(weight, dtype=np.float64), z.shape)
    losses = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.sum(w * losses)
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return logits.tape._new(
        out, "bce_logits", (logits,), lambda g: (g * w * (sig - y),), logits.requires_grad
    )


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    ``state`` holds ``t`` plus first/second moment dicts ``m`` and ``v``.
    """
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    m, v = state.setdefault("m", {}), state.setdefault("v", {})
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in m:
            m[name] = np.zeros_like(p)
            v[name] = np.zeros_like(p)
        if m[name].shape != p.shape:
            raise ShapeError(f"optimizer state for {name} has shape {m[name].shape}, param {p.shape}")
        m[name] = beta1 * m[name] + (1.0 - beta1) * g
        v[name] = beta2 * v[name] + (1.0 - beta2) * g * g
        p -= lr * (m[name] / bc1) / (np.sqrt(v[name] / bc2) + eps)
    return params, state


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: dict = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        adam_step(params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
