"""Parameter snapshots, initializers and MLP graph builders."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from skillfocus.core.autodiff import Tape, Var

ACTIVATIONS = ("elu", "tanh")


@dataclass(frozen=True)
class PolicyParams:
    """Immutable snapshot of every learnable array, keyed by dotted name.

    Arrays are stored read-only; updates produce a new snapshot through
    :meth:`replace`, so rollout workers can share one snapshot safely.
    """

    arrays: Mapping[str, np.ndarray]

    def __post_init__(self):
        frozen = {}
        for name, value in self.arrays.items():
            array = np.array(value, dtype=np.float64)
            array.setflags(write=False)
            frozen[name] = array
        object.__setattr__(self, "arrays", frozen)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def names(self, prefix: str = "") -> List[str]:
        return [name for name in self.arrays if name.startswith(prefix)]

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: value.shape for name, value in self.arrays.items()}

    def replace(self, updates: Mapping[str, np.ndarray]) -> "PolicyParams":
        merged = dict(self.arrays)
        for name, value in updates.items():
            if name not in merged:
                raise KeyError(f"Unknown parameter '{name}'")
            merged[name] = value
        return PolicyParams(merged)

    def as_inputs(self, names: Iterable[str] = None) -> Dict[str, np.ndarray]:
        names = self.arrays if names is None else names
        return {name: self.arrays[name] for name in names}

    def bit_equal(self, other: "PolicyParams", prefix: str = "") -> bool:
        names = self.names(prefix)
        return names == other.names(prefix) and all(
            np.array_equal(self.arrays[n], other.arrays[n]) for n in names
        )


def orthogonal(rng: np.random.Generator, shape: Tuple[int, int], gain: float) -> np.ndarray:
    """Orthogonal-like initialization scaled by ``gain``."""
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def mlp_shapes(prefix: str, in_dim: int, widths: Sequence[int], out_dim: int = None) -> Dict[str, Tuple]:
    shapes = {}
    previous = in_dim
    for index, width in enumerate(widths):
        shapes[f"{prefix}.{index}.weight"] = (previous, width)
        shapes[f"{prefix}.{index}.bias"] = (width,)
        previous = width
    if out_dim is not None:
        shapes[f"{prefix}.out.weight"] = (previous, out_dim)
        shapes[f"{prefix}.out.bias"] = (out_dim,)
    return shapes


def init_mlp(
    rng: np.random.Generator,
    prefix: str,
    in_dim: int,
    widths: Sequence[int],
    out_dim: int = None,
    hidden_gain: float = np.sqrt(2.0),
    out_gain: float = 1.0,
) -> Dict[str, np.ndarray]:
    arrays = {}
    for name, shape in mlp_shapes(prefix, in_dim, widths, out_dim).items():
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape)
        else:
            gain = out_gain if name.startswith(f"{prefix}.out.") else hidden_gain
            arrays[name] = orthogonal(rng, shape, gain)
    return arrays


def dense(tape: Tape, x: Var, prefix: str) -> Var:
    """``x @ W + b`` with ``W`` of shape (in, out)."""
    return tape.add(tape.matmul(x, tape.input(f"{prefix}.weight")), tape.input(f"{prefix}.bias"))


def activate(tape: Tape, x: Var, activation: str) -> Var:
    if activation == "elu":
        return tape.elu(x)
    if activation == "tanh":
        return tape.tanh(x)
    raise ValueError(f"Unknown activation '{activation}', expected one of {ACTIVATIONS}")


def mlp(tape: Tape, x: Var, prefix: str, depth: int, activation: str = "elu", with_output: bool = False) -> Var:
    """Stack ``depth`` activated dense layers, plus an unactivated ``out`` layer if requested."""
    for index in range(depth):
        x = activate(tape, dense(tape, x, f"{prefix}.{index}"), activation)
    if with_output:
        x = dense(tape, x, f"{prefix}.out")
    return x
