"""Command-line verbs."""

from .evaluate import register as register_eval
from .inspect_checkpoint import register as register_inspect
from .plot import register as register_plot
from .train import register as register_train

__all__ = ["register_train", "register_eval", "register_plot", "register_inspect"]
