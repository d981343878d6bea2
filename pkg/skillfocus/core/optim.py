"""Adaptive moment estimation and gradient-norm clipping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from skillfocus.core.exceptions import NonFiniteError, ShapeMismatchError
from skillfocus.core.layers import PolicyParams

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """First/second moments per trained parameter plus the update hyperparameters."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def names(self):
        return list(self.m)


def init_optimizer(
    params: PolicyParams,
    names: Iterable[str],
    lr: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> OptimizerState:
    names = list(names)
    return OptimizerState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        m={name: np.zeros_like(params[name]) for name in names},
        v={name: np.zeros_like(params[name]) for name in names},
    )


def check_finite(grads: Mapping[str, np.ndarray]) -> None:
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"Non-finite gradient for parameter '{name}'", details={"parameter": name})


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Rescale ``grads`` so their global L2 norm is at most ``max_norm``; return the pre-clip norm."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is None or max_norm <= 0.0 or norm <= max_norm:
        return dict(grads), norm
    factor = max_norm / (norm + 1e-12)
    return {name: g * factor for name, g in grads.items()}, norm


def optimizer_step(
    params: PolicyParams, grads: Mapping[str, np.ndarray], state: OptimizerState
) -> Tuple[PolicyParams, OptimizerState]:
    """Apply one bias-corrected Adam update to the parameters tracked by ``state``.

    Parameters not tracked by ``state`` are left untouched.
    """
    check_finite({name: grads[name] for name in state.m})
    step = state.step + 1
    bias1 = 1.0 - state.beta1**step
    bias2 = 1.0 - state.beta2**step
    new_m, new_v, updates = {}, {}, {}
    for name in state.m:
        grad = grads[name]
        if grad.shape != params[name].shape:
            raise ShapeMismatchError(
                f"Gradient for '{name}' has shape {grad.shape}, parameter has {params[name].shape}",
                details={"parameter": name},
            )
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * grad * grad
        new_m[name], new_v[name] = m, v
        updates[name] = params[name] - state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)

    new_state = OptimizerState(state.lr, state.beta1, state.beta2, state.eps, step, new_m, new_v)
    return params.replace(updates), new_state
