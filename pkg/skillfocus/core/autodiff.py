"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` is built symbolically (``tape.input``, ``tape.matmul`` ...), then
evaluated with :meth:`Tape.forward` against a mapping of named input arrays. The
evaluated values are cached so :meth:`Tape.backward` can push a seed through the
recorded primitives in exact reverse order. The same tape may be re-run with new
bindings, which is how finite-difference checks and minibatch loops reuse it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from skillfocus.core.exceptions import GraphStateError, ShapeMismatchError

logger = logging.getLogger(__name__)

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

ArrayLike = Union[np.ndarray, float, int]


class _ShapeError(ValueError):
    """Raised inside primitive forwards; converted to ShapeMismatchError by the tape."""


@dataclass(frozen=True)
class Primitive:
    """Forward rule plus vector-Jacobian product for one tape operation."""

    name: str
    forward: Callable[..., np.ndarray]
    vjp: Callable[..., Tuple[Optional[np.ndarray], ...]]


PRIMITIVES: Dict[str, Primitive] = {}


def defprimitive(name: str, forward: Callable, vjp: Callable) -> None:
    PRIMITIVES[name] = Primitive(name, forward, vjp)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(*arrays: np.ndarray) -> None:
    try:
        np.broadcast_shapes(*(a.shape for a in arrays))
    except ValueError as exc:
        raise _ShapeError(f"cannot broadcast shapes {[a.shape for a in arrays]}") from exc


# ---------------------------------------------------------------------------
# Primitive definitions: forward(attrs, *inputs), vjp(grad, out, attrs, *inputs)
# ---------------------------------------------------------------------------


def _matmul_forward(attrs, a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _ShapeError(f"matmul operands {a.shape} @ {b.shape}")
    return a @ b


defprimitive("matmul", _matmul_forward, lambda g, out, attrs, a, b: (g @ b.T, a.T @ g))


def _binary_forward(fn):
    def forward(attrs, a, b):
        _check_broadcast(a, b)
        return fn(a, b)

    return forward


defprimitive(
    "add",
    _binary_forward(np.add),
    lambda g, out, attrs, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
)
defprimitive(
    "sub",
    _binary_forward(np.subtract),
    lambda g, out, attrs, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
)
defprimitive(
    "mul",
    _binary_forward(np.multiply),
    lambda g, out, attrs, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
)


def _minimum_vjp(g, out, attrs, a, b):
    # ties route the gradient to the first operand
    take_a = np.broadcast_to(a <= b, out.shape)
    return (
        _unbroadcast(np.where(take_a, g, 0.0), a.shape),
        _unbroadcast(np.where(take_a, 0.0, g), b.shape),
    )


defprimitive("minimum", _binary_forward(np.minimum), _minimum_vjp)

defprimitive(
    "scale",
    lambda attrs, a: a * attrs["factor"],
    lambda g, out, attrs, a: (g * attrs["factor"],),
)


def _broadcast_forward(attrs, a):
    try:
        return np.broadcast_to(a, attrs["shape"])
    except ValueError as exc:
        raise _ShapeError(f"cannot broadcast {a.shape} to {attrs['shape']}") from exc


defprimitive("broadcast", _broadcast_forward, lambda g, out, attrs, a: (_unbroadcast(g, a.shape),))

defprimitive(
    "elu",
    lambda attrs, a: np.where(a > 0.0, a, np.expm1(np.minimum(a, 0.0))),
    lambda g, out, attrs, a: (g * np.where(a > 0.0, 1.0, out + 1.0),),
)
defprimitive("tanh", lambda attrs, a: np.tanh(a), lambda g, out, attrs, a: (g * (1.0 - out * out),))
defprimitive("exp", lambda attrs, a: np.exp(a), lambda g, out, attrs, a: (g * out,))


def log_softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = a - np.max(a, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def _log_softmax_forward(attrs, a):
    return log_softmax(a, attrs["axis"])


def _log_softmax_vjp(g, out, attrs, a):
    axis = attrs["axis"]
    return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)


defprimitive("log_softmax", _log_softmax_forward, _log_softmax_vjp)


def gaussian_log_density(x: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Elementwise log N(x; mean, exp(log_std)^2)."""
    z = (x - mean) * np.exp(-log_std)
    return -0.5 * z * z - log_std - HALF_LOG_2PI


def _gaussian_forward(attrs, x, mean, log_std):
    _check_broadcast(x, mean, log_std)
    return gaussian_log_density(x, mean, log_std)


def _gaussian_vjp(g, out, attrs, x, mean, log_std):
    inv_std = np.exp(-log_std)
    z = (x - mean) * inv_std
    dx = -g * z * inv_std
    return (
        _unbroadcast(dx, x.shape),
        _unbroadcast(-dx, mean.shape),
        _unbroadcast(g * (z * z - 1.0), log_std.shape),
    )


defprimitive("gaussian_log_density", _gaussian_forward, _gaussian_vjp)


def _reduce_vjp(g, a, axis, keepdims, divisor=1.0):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / divisor, a.shape),)


def _reduce_count(a, axis):
    if axis is None:
        return a.size
    axes = axis if isinstance(axis, tuple) else (axis,)
    return int(np.prod([a.shape[ax] for ax in axes]))


def _sum_forward(attrs, a):
    return np.sum(a, axis=attrs["axis"], keepdims=attrs["keepdims"])


def _mean_forward(attrs, a):
    if _reduce_count(a, attrs["axis"]) == 0:
        raise _ShapeError(f"mean over empty extent of shape {a.shape}")
    return np.mean(a, axis=attrs["axis"], keepdims=attrs["keepdims"])


defprimitive(
    "sum",
    _sum_forward,
    lambda g, out, attrs, a: _reduce_vjp(g, a, attrs["axis"], attrs["keepdims"]),
)
defprimitive(
    "mean",
    _mean_forward,
    lambda g, out, attrs, a: _reduce_vjp(
        g, a, attrs["axis"], attrs["keepdims"], float(_reduce_count(a, attrs["axis"]))
    ),
)
defprimitive(
    "clip",
    lambda attrs, a: np.clip(a, attrs["low"], attrs["high"]),
    lambda g, out, attrs, a: (g * ((a >= attrs["low"]) & (a <= attrs["high"])),),
)
defprimitive("stop_gradient", lambda attrs, a: a, lambda g, out, attrs, a: (None,))


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


@dataclass
class Node:
    id: int
    op: str
    inputs: Tuple[int, ...] = ()
    attrs: dict = field(default_factory=dict)
    name: Optional[str] = None


class Var:
    """Handle to a node of a tape; supports the arithmetic operators."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    def __repr__(self) -> str:
        node = self.tape.nodes[self.id]
        return f"Var(id={self.id}, op={node.op})"

    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        return self.tape.mul(other, self)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __neg__(self):
        return self.tape.scale(self, -1.0)


class Tape:
    """Ordered record of primitive operations.

    Nodes are appended in construction order, so every node's inputs precede it
    and reverse insertion order is a valid reverse topological order.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self.outputs: Dict[str, int] = {}
        self._inputs: Dict[str, int] = {}
        self._constants: Dict[int, np.ndarray] = {}
        self._values: Optional[List[np.ndarray]] = None

    # -- construction -----------------------------------------------------

    def _append(self, op: str, inputs: Sequence[int] = (), attrs: Optional[dict] = None, name=None) -> Var:
        node = Node(len(self.nodes), op, tuple(inputs), attrs or {}, name)
        self.nodes.append(node)
        self._values = None
        return Var(self, node.id)

    def _as_var(self, value: Union[Var, ArrayLike]) -> Var:
        if isinstance(value, Var):
            if value.tape is not self:
                raise GraphStateError("Variable belongs to a different tape")
            return value
        return self.const(value)

    def input(self, name: str) -> Var:
        """Declare (or fetch) a named input bound at forward time."""
        if name in self._inputs:
            return Var(self, self._inputs[name])
        var = self._append("input", name=name)
        self._inputs[name] = var.id
        return var

    def const(self, value: ArrayLike) -> Var:
        var = self._append("const")
        self._constants[var.id] = np.asarray(value, dtype=np.float64)
        return var

    def output(self, name: str, var: Var) -> Var:
        self.outputs[name] = self._as_var(var).id
        return var

    @property
    def input_names(self) -> List[str]:
        return list(self._inputs)

    def _op(self, op: str, *args, **attrs) -> Var:
        ids = [self._as_var(a).id for a in args]
        return self._append(op, ids, attrs)

    def matmul(self, a, b) -> Var:
        return self._op("matmul", a, b)

    def add(self, a, b) -> Var:
        return self._op("add", a, b)

    def sub(self, a, b) -> Var:
        return self._op("sub", a, b)

    def mul(self, a, b) -> Var:
        return self._op("mul", a, b)

    def minimum(self, a, b) -> Var:
        return self._op("minimum", a, b)

    def maximum(self, a, b) -> Var:
        return self.scale(self.minimum(self.scale(a, -1.0), self.scale(b, -1.0)), -1.0)

    def scale(self, a, factor: float) -> Var:
        return self._op("scale", a, factor=float(factor))

    def broadcast(self, a, shape: Tuple[int, ...]) -> Var:
        return self._op("broadcast", a, shape=tuple(shape))

    def elu(self, a) -> Var:
        return self._op("elu", a)

    def tanh(self, a) -> Var:
        return self._op("tanh", a)

    def exp(self, a) -> Var:
        return self._op("exp", a)

    def log_softmax(self, a, axis: int = -1) -> Var:
        return self._op("log_softmax", a, axis=axis)

    def gaussian_log_density(self, x, mean, log_std) -> Var:
        """Elementwise Normal(mean, exp(log_std)) log-density of ``x``."""
        return self._op("gaussian_log_density", x, mean, log_std)

    def sum(self, a, axis=None, keepdims: bool = False) -> Var:
        return self._op("sum", a, axis=axis, keepdims=keepdims)

    def mean(self, a, axis=None, keepdims: bool = False) -> Var:
        return self._op("mean", a, axis=axis, keepdims=keepdims)

    def clip(self, a, low: float, high: float) -> Var:
        return self._op("clip", a, low=float(low), high=float(high))

    def stop_gradient(self, a) -> Var:
        return self._op("stop_gradient", a)

    # -- evaluation -------------------------------------------------------

    def forward(self, inputs: Mapping[str, ArrayLike]) -> Dict[str, np.ndarray]:
        """Evaluate every node with ``inputs`` bound; return the named outputs."""
        missing = [name for name in self._inputs if name not in inputs]
        if missing:
            raise GraphStateError("Unbound tape inputs", details={"missing": missing})

        values: List[np.ndarray] = []
        for node in self.nodes:
            if node.op == "input":
                value = np.asarray(inputs[node.name], dtype=np.float64)
            elif node.op == "const":
                value = self._constants[node.id]
            else:
                args = [values[i] for i in node.inputs]
                try:
                    value = PRIMITIVES[node.op].forward(node.attrs, *args)
                except ValueError as exc:
                    raise ShapeMismatchError(
                        f"Shape mismatch at node {node.id} ({node.op}): {exc}",
                        details={
                            "node": node.id,
                            "op": node.op,
                            "input_shapes": [list(a.shape) for a in args],
                        },
                    ) from exc
            values.append(value)

        self._values = values
        return {name: values[node_id] for name, node_id in self.outputs.items()}

    def value(self, var: Union[Var, str]) -> np.ndarray:
        if self._values is None:
            raise GraphStateError("Tape has not been evaluated")
        node_id = self.outputs[var] if isinstance(var, str) else var.id
        return self._values[node_id]

    def backward(self, seed: ArrayLike = 1.0, output: Optional[str] = None) -> Dict[str, np.ndarray]:
        """Propagate ``seed`` from ``output`` back to every named input.

        Inputs with no path to the output receive exact zeros.
        """
        if self._values is None:
            raise GraphStateError("backward() called before forward()")
        out_id = self._resolve_output(output)
        out_value = self._values[out_id]
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != out_value.shape:
            if seed.ndim == 0 and out_value.size == 1:
                seed = np.full(out_value.shape, float(seed))
            else:
                raise ShapeMismatchError(
                    f"Seed shape {seed.shape} does not match output shape {out_value.shape}",
                    details={"output": output, "node": out_id},
                )

        grads: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[out_id] = seed
        for node in reversed(self.nodes[: out_id + 1]):
            grad = grads[node.id]
            if grad is None or node.op in ("input", "const"):
                continue
            args = [self._values[i] for i in node.inputs]
            input_grads = PRIMITIVES[node.op].vjp(grad, self._values[node.id], node.attrs, *args)
            for input_id, input_grad in zip(node.inputs, input_grads):
                if input_grad is None:
                    continue
                previous = grads[input_id]
                grads[input_id] = input_grad if previous is None else previous + input_grad

        result = {}
        for name, node_id in self._inputs.items():
            grad = grads[node_id]
            result[name] = (
                np.zeros_like(self._values[node_id]) if grad is None else np.array(grad, dtype=np.float64)
            )
        return result

    def _resolve_output(self, output: Optional[str]) -> int:
        if output is None:
            if len(self.outputs) != 1:
                raise GraphStateError(
                    "Output name required when the tape has several outputs",
                    details={"outputs": list(self.outputs)},
                )
            return next(iter(self.outputs.values()))
        if output not in self.outputs:
            raise GraphStateError(f"Unknown output '{output}'", details={"outputs": list(self.outputs)})
        return self.outputs[output]


# ---------------------------------------------------------------------------
# Finite-difference gradient check
# ---------------------------------------------------------------------------


@dataclass
class FiniteDiffReport:
    """Per-input maximum relative error between analytic and numeric gradients."""

    max_rel_error: Dict[str, float]
    tol: float

    @property
    def failing(self) -> List[str]:
        return [name for name, err in self.max_rel_error.items() if not err < self.tol]

    @property
    def passed(self) -> bool:
        return not self.failing

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def finite_diff_check(
    tape: Tape,
    inputs: Mapping[str, ArrayLike],
    h: float = 1e-5,
    tol: float = 1e-6,
    *,
    wrt: Optional[Iterable[str]] = None,
    output: Optional[str] = None,
    gradients: Optional[Mapping[str, np.ndarray]] = None,
    floor: float = 1e-2,
    entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> FiniteDiffReport:
    """Compare analytic gradients against central differences of a scalar output.

    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``.
    ``gradients`` overrides the tape's own backward pass (negative controls);
    ``entries`` limits the check to a random subset of entries per input.
    """
    base = {name: np.array(value, dtype=np.float64) for name, value in inputs.items()}
    outputs = tape.forward(base)
    out_id = tape._resolve_output(output)
    if tape._values[out_id].size != 1:
        raise ShapeMismatchError("finite_diff_check needs a scalar output", details={"output": output})
    analytic = dict(gradients) if gradients is not None else tape.backward(1.0, output)
    names = list(wrt) if wrt is not None else tape.input_names
    out_name = output if output is not None else next(iter(outputs))

    def evaluate(bound) -> float:
        return float(np.sum(tape.forward(bound)[out_name]))

    errors: Dict[str, float] = {}
    for name in names:
        value = base[name]
        grad = np.asarray(analytic[name], dtype=np.float64)
        flat_indices = np.arange(value.size)
        if entries is not None and entries < value.size:
            flat_indices = (rng or np.random.default_rng(0)).choice(value.size, entries, replace=False)
        worst = 0.0
        for flat in flat_indices:
            index = np.unravel_index(flat, value.shape)
            original = value[index]
            value[index] = original + h
            f_plus = evaluate(base)
            value[index] = original - h
            f_minus = evaluate(base)
            value[index] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = grad[index]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
        errors[name] = worst

    tape.forward(base)
    report = FiniteDiffReport(errors, tol)
    if not report.passed:
        logger.debug(f"Finite-difference check failed for {report.failing}")
    return report
