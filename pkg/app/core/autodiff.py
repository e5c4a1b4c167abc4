"""
Reverse-mode differentiation over a recorded tape of numpy primitives.

A program is any callable ``program(tape, *inputs) -> Var`` that builds its
computation from the tape's primitive ops. ``forward`` runs it on a fresh tape
and keeps every intermediate value; ``backward`` walks the tape in reverse and
returns one gradient array per parameter path.

Primitive ops: matmul, add, mul, scale, elementwise nonlinearities
(relu, tanh, sigmoid, exp, log, square, rsqrt, smooth_l1, clip), embedding
lookup, gather, softmax, log_softmax, layer_norm, cross_entropy, minimum,
sum/mean reductions and the shape-only reshape/transpose.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from app.core.errors import (
    BackwardBeforeForwardError,
    NonScalarOutputError,
    ShapeError,
)

logger = logging.getLogger(__name__)

Program = Callable[..., "Var"]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _smooth_l1(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# kind -> (forward, derivative(x, y))
_UNARY: dict[str, tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray, np.ndarray], np.ndarray]]] = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64)),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "sigmoid": (_sigmoid, lambda x, y: y * (1.0 - y)),
    "exp": (np.exp, lambda x, y: y),
    "log": (np.log, lambda x, y: 1.0 / x),
    "square": (np.square, lambda x, y: 2.0 * x),
    "rsqrt": (lambda x: x ** -0.5, lambda x, y: -0.5 * y / x),
    "smooth_l1": (_smooth_l1, lambda x, y: np.clip(x, -1.0, 1.0)),
}


@dataclass(eq=False)
class Var:
    tape: "Tape"
    id: int
    value: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other: Any) -> "Var":
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Var":
        return self.tape.add(self, self.tape.scale(self.tape.lift(other), -1.0))

    def __rsub__(self, other: Any) -> "Var":
        return self.tape.add(self.tape.lift(other), self.tape.scale(self, -1.0))

    def __mul__(self, other: Any) -> "Var":
        if isinstance(other, (int, float)):
            return self.tape.scale(self, float(other))
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Var":
        return self.tape.scale(self, -1.0)

    def __matmul__(self, other: "Var") -> "Var":
        return self.tape.matmul(self, other)

    def __truediv__(self, other: float) -> "Var":
        return self.tape.scale(self, 1.0 / float(other))


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    ctx: dict[str, Any] = field(default_factory=dict)


class _ParamAccessor:
    def __init__(self, tape: "Tape"):
        self._tape = tape

    def __getitem__(self, name: str) -> Var:
        return self._tape.param(name)

    def __contains__(self, name: str) -> bool:
        return name in self._tape.source


class Tape:
    """Ordered record of primitive ops; node ids are creation order."""

    def __init__(self, params: Optional[Mapping[str, np.ndarray]] = None, record: bool = True):
        self.record = record
        self.source: Mapping[str, np.ndarray] = params if params is not None else {}
        self.nodes: list[Node] = []
        self.values: list[np.ndarray] = []
        self.output: Optional[Var] = None
        self.params = _ParamAccessor(self)
        self._param_vars: dict[str, Var] = {}

    # -- recording ---------------------------------------------------------
    def _push(self, op: str, inputs: Sequence[Var], value: Any, **ctx: Any) -> Var:
        value = np.asarray(value, dtype=np.float64)
        if not self.record:
            return Var(self, -1, value)
        node_id = len(self.values)
        self.values.append(value)
        self.nodes.append(Node(op, tuple(v.id for v in inputs), ctx))
        return Var(self, node_id, value)

    def lift(self, x: Any) -> Var:
        if isinstance(x, Var):
            return x
        return self.constant(x)

    def param(self, name: str) -> Var:
        cached = self._param_vars.get(name)
        if cached is not None:
            return cached
        if name not in self.source:
            raise KeyError(f"Unknown parameter '{name}'")
        var = self._push("param", (), self.source[name], name=name)
        self._param_vars[name] = var
        return var

    def constant(self, value: Any) -> Var:
        return self._push("const", (), value)

    # -- arithmetic --------------------------------------------------------
    def add(self, a: Any, b: Any) -> Var:
        a, b = self.lift(a), self.lift(b)
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError("add", [a.shape, b.shape]) from None
        return self._push("add", (a, b), a.value + b.value)

    def mul(self, a: Any, b: Any) -> Var:
        a, b = self.lift(a), self.lift(b)
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError("mul", [a.shape, b.shape]) from None
        return self._push("mul", (a, b), a.value * b.value)

    def scale(self, a: Var, c: float) -> Var:
        return self._push("scale", (a,), a.value * c, c=c)

    def matmul(self, a: Var, b: Var) -> Var:
        if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError("matmul", [a.shape, b.shape])
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError("matmul", [a.shape, b.shape]) from None
        return self._push("matmul", (a, b), a.value @ b.value)

    def minimum(self, a: Any, b: Any) -> Var:
        a, b = self.lift(a), self.lift(b)
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError("minimum", [a.shape, b.shape]) from None
        return self._push("minimum", (a, b), np.minimum(a.value, b.value))

    # -- elementwise -------------------------------------------------------
    def unary(self, kind: str, a: Var) -> Var:
        forward_fn, _ = _UNARY[kind]
        return self._push("unary", (a,), forward_fn(a.value), kind=kind)

    def relu(self, a: Var) -> Var:
        return self.unary("relu", a)

    def tanh(self, a: Var) -> Var:
        return self.unary("tanh", a)

    def sigmoid(self, a: Var) -> Var:
        return self.unary("sigmoid", a)

    def exp(self, a: Var) -> Var:
        return self.unary("exp", a)

    def log(self, a: Var) -> Var:
        return self.unary("log", a)

    def square(self, a: Var) -> Var:
        return self.unary("square", a)

    def rsqrt(self, a: Var) -> Var:
        return self.unary("rsqrt", a)

    def smooth_l1(self, a: Var) -> Var:
        return self.unary("smooth_l1", a)

    def clip(self, a: Var, lo: float, hi: float) -> Var:
        return self._push("clip", (a,), np.clip(a.value, lo, hi), lo=lo, hi=hi)

    # -- indexing ----------------------------------------------------------
    def embedding(self, table: Var, ids: Any) -> Var:
        ids = np.asarray(ids, dtype=np.int64)
        if table.value.ndim != 2:
            raise ShapeError("embedding", [table.shape, ids.shape])
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise ShapeError("embedding", [table.shape, ids.shape])
        return self._push("embedding", (table,), table.value[ids], ids=ids)

    def gather(self, a: Var, index: Any) -> Var:
        """Pick ``a[..., index[...]]`` along the last axis."""
        index = np.asarray(index, dtype=np.int64)
        if index.shape != a.shape[:-1]:
            raise ShapeError("gather", [a.shape, index.shape])
        value = np.take_along_axis(a.value, index[..., None], axis=-1)[..., 0]
        return self._push("gather", (a,), value, index=index)

    # -- normalization -----------------------------------------------------
    def softmax(self, a: Var, axis: int = -1) -> Var:
        shifted = a.value - a.value.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return self._push("softmax", (a,), e / e.sum(axis=axis, keepdims=True), axis=axis)

    def log_softmax(self, a: Var, axis: int = -1) -> Var:
        shifted = a.value - a.value.max(axis=axis, keepdims=True)
        value = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        return self._push("log_softmax", (a,), value, axis=axis)

    def layer_norm(self, x: Var, gain: Var, bias: Var, eps: float = 1e-5) -> Var:
        if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
            raise ShapeError("layer_norm", [x.shape, gain.shape, bias.shape])
        mu = x.value.mean(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(x.value.var(axis=-1, keepdims=True) + eps)
        xhat = (x.value - mu) * inv_std
        return self._push(
            "layer_norm", (x, gain, bias), xhat * gain.value + bias.value, xhat=xhat, inv_std=inv_std
        )

    def cross_entropy(self, logits: Var, targets: Any, mask: Any = None) -> Var:
        """Mean next-token negative log-likelihood over the positions where ``mask`` is 1."""
        targets = np.asarray(targets, dtype=np.int64)
        if targets.shape != logits.shape[:-1]:
            raise ShapeError("cross_entropy", [logits.shape, targets.shape])
        weights = np.ones(targets.shape) if mask is None else np.asarray(mask, dtype=np.float64)
        denom = max(float(weights.sum()), 1.0)
        shifted = logits.value - logits.value.max(axis=-1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)[..., 0]
        value = -(weights * picked).sum() / denom
        return self._push(
            "cross_entropy", (logits,), value,
            probs=np.exp(log_probs), targets=targets, weights=weights / denom,
        )

    # -- reductions and shapes ---------------------------------------------
    def sum(self, a: Var, axis: Any = None, keepdims: bool = False) -> Var:
        return self._push("sum", (a,), a.value.sum(axis=axis, keepdims=keepdims), axis=axis, keepdims=keepdims)

    def mean(self, a: Var, axis: Any = None, keepdims: bool = False) -> Var:
        return self._push("mean", (a,), a.value.mean(axis=axis, keepdims=keepdims), axis=axis, keepdims=keepdims)

    def reshape(self, a: Var, shape: Sequence[int]) -> Var:
        try:
            value = a.value.reshape(tuple(shape))
        except ValueError:
            raise ShapeError("reshape", [a.shape, tuple(shape)]) from None
        return self._push("reshape", (a,), value)

    def transpose(self, a: Var, axes: Sequence[int]) -> Var:
        axes = tuple(axes)
        return self._push("transpose", (a,), a.value.transpose(axes), axes=axes)

    # -- differentiation ---------------------------------------------------
    def backward(self, output: Optional[Var] = None, seed: Any = None) -> dict[str, np.ndarray]:
        out = output if output is not None else self.output
        if out is None or not self.record or out.id < 0:
            raise BackwardBeforeForwardError("backward requires a recorded forward pass")
        seed_grad = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=np.float64)
        if seed_grad.shape != out.shape:
            raise ShapeError("backward", [out.shape, seed_grad.shape])

        grads: dict[int, np.ndarray] = {out.id: seed_grad}
        param_grads: dict[str, np.ndarray] = {}
        for node_id in range(out.id, -1, -1):
            g = grads.pop(node_id, None)
            if g is None:
                continue
            node = self.nodes[node_id]
            if node.op == "param":
                param_grads[node.ctx["name"]] = g
                continue
            if node.op == "const":
                continue
            inputs = [self.values[i] for i in node.inputs]
            input_grads = BACKWARD_RULES[node.op](node, g, inputs, self.values[node_id])
            for input_id, input_grad in zip(node.inputs, input_grads):
                if input_grad is None:
                    continue
                prev = grads.get(input_id)
                grads[input_id] = input_grad if prev is None else prev + input_grad
        return {
            name: param_grads.get(name, np.zeros_like(np.asarray(value, dtype=np.float64)))
            for name, value in self.source.items()
        }


# -- backward rules: (node, upstream grad, input values, output value) -> input grads
def _bw_add(node, g, inputs, out):
    a, b = inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _bw_mul(node, g, inputs, out):
    a, b = inputs
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _bw_scale(node, g, inputs, out):
    return (g * node.ctx["c"],)


def _bw_matmul(node, g, inputs, out):
    a, b = inputs
    ga = g @ np.swapaxes(b, -1, -2)
    gb = np.swapaxes(a, -1, -2) @ g
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _bw_minimum(node, g, inputs, out):
    a, b = inputs
    pick_a = np.broadcast_to(a <= b, g.shape)
    return _unbroadcast(np.where(pick_a, g, 0.0), a.shape), _unbroadcast(np.where(pick_a, 0.0, g), b.shape)


def _bw_unary(node, g, inputs, out):
    _, derivative = _UNARY[node.ctx["kind"]]
    return (g * derivative(inputs[0], out),)


def _bw_clip(node, g, inputs, out):
    x = inputs[0]
    inside = (x >= node.ctx["lo"]) & (x <= node.ctx["hi"])
    return (np.where(inside, g, 0.0),)


def _bw_embedding(node, g, inputs, out):
    grad = np.zeros_like(inputs[0])
    np.add.at(grad, node.ctx["ids"], g)
    return (grad,)


def _bw_gather(node, g, inputs, out):
    grad = np.zeros_like(inputs[0])
    np.put_along_axis(grad, node.ctx["index"][..., None], g[..., None], axis=-1)
    return (grad,)


def _bw_softmax(node, g, inputs, out):
    axis = node.ctx["axis"]
    return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


def _bw_log_softmax(node, g, inputs, out):
    axis = node.ctx["axis"]
    return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)


def _bw_layer_norm(node, g, inputs, out):
    x, gain, bias = inputs
    xhat, inv_std = node.ctx["xhat"], node.ctx["inv_std"]
    lead = tuple(range(g.ndim - 1))
    g_gain = (g * xhat).sum(axis=lead)
    g_bias = g.sum(axis=lead)
    dxhat = g * gain
    gx = inv_std * (
        dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return gx, g_gain, g_bias


def _bw_cross_entropy(node, g, inputs, out):
    grad = node.ctx["probs"].copy()
    np.put_along_axis(
        grad, node.ctx["targets"][..., None],
        np.take_along_axis(grad, node.ctx["targets"][..., None], axis=-1) - 1.0, axis=-1,
    )
    return (grad * node.ctx["weights"][..., None] * g,)


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis: Any, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.array(np.broadcast_to(g, shape))


def _bw_sum(node, g, inputs, out):
    return (_expand_reduced(g, inputs[0].shape, node.ctx["axis"], node.ctx["keepdims"]),)


def _bw_mean(node, g, inputs, out):
    shape = inputs[0].shape
    count = inputs[0].size / max(out.size, 1)
    return (_expand_reduced(g, shape, node.ctx["axis"], node.ctx["keepdims"]) / count,)


def _bw_reshape(node, g, inputs, out):
    return (g.reshape(inputs[0].shape),)


def _bw_transpose(node, g, inputs, out):
    return (g.transpose(np.argsort(node.ctx["axes"])),)


BACKWARD_RULES: dict[str, Callable[..., tuple[Optional[np.ndarray], ...]]] = {
    "add": _bw_add,
    "mul": _bw_mul,
    "scale": _bw_scale,
    "matmul": _bw_matmul,
    "minimum": _bw_minimum,
    "unary": _bw_unary,
    "clip": _bw_clip,
    "embedding": _bw_embedding,
    "gather": _bw_gather,
    "softmax": _bw_softmax,
    "log_softmax": _bw_log_softmax,
    "layer_norm": _bw_layer_norm,
    "cross_entropy": _bw_cross_entropy,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "reshape": _bw_reshape,
    "transpose": _bw_transpose,
}


def forward(program: Program, params: Optional[Mapping[str, np.ndarray]], *inputs: Any,
            record: bool = True) -> tuple[Tape, Var]:
    """Run ``program`` on a fresh tape; the output is remembered for ``backward``."""
    tape = Tape(params, record=record)
    out = program(tape, *inputs)
    tape.output = out
    return tape, out


def backward(tape: Tape, seed_gradient: Any = None) -> dict[str, np.ndarray]:
    return tape.backward(seed=seed_gradient)


@dataclass
class GradCheckReport:
    max_relative_error: dict[str, float]
    flagged: list[tuple[str, tuple[int, ...], float, float]]
    tolerance: float

    @property
    def passed(self) -> bool:
        return not self.flagged

    @property
    def worst(self) -> float:
        return max(self.max_relative_error.values(), default=0.0)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(program: Program, params: Mapping[str, np.ndarray], *inputs: Any,
               tolerance: float = 1e-4, h: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients with central finite differences entry by entry.

    ``params`` values are perturbed in place and restored afterwards.
    """
    tape, out = forward(program, params, *inputs)
    if out.value.size != 1:
        raise NonScalarOutputError(f"grad_check needs a scalar output, got shape {out.shape}")
    analytic = tape.backward()

    def evaluate() -> float:
        _, value = forward(program, params, *inputs, record=False)
        return float(value.value)

    max_error: dict[str, float] = {}
    flagged: list[tuple[str, tuple[int, ...], float, float]] = []
    for name in params:
        array = params[name]
        worst = 0.0
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + h
            plus = evaluate()
            array[index] = original - h
            minus = evaluate()
            array[index] = original
            numeric = (plus - minus) / (2.0 * h)
            err = relative_error(float(analytic[name][index]), numeric)
            worst = max(worst, err)
            if err > tolerance:
                flagged.append((name, tuple(int(i) for i in index), float(analytic[name][index]), numeric))
        max_error[name] = worst
    if flagged:
        logger.warning("grad_check flagged %d entries (worst %.3e)", len(flagged), max(max_error.values()))
    return GradCheckReport(max_error, flagged, tolerance)
