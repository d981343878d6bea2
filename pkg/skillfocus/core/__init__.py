"""Core machinery: autodiff tape, layers, optimizer, errors and random streams."""

from .autodiff import Tape, Var, finite_diff_check, FiniteDiffReport
from .exceptions import SkillFocusError, handle_cli_error
from .layers import PolicyParams
from .optim import OptimizerState, init_optimizer, optimizer_step, clip_grad_norm
from .rng import RngStreams

__all__ = [
    "Tape",
    "Var",
    "finite_diff_check",
    "FiniteDiffReport",
    "SkillFocusError",
    "handle_cli_error",
    "PolicyParams",
    "OptimizerState",
    "init_optimizer",
    "optimizer_step",
    "clip_grad_norm",
    "RngStreams",
]
