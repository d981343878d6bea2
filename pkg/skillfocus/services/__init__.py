"""Policy, update rule, simulator, curriculum and the training harness."""

from .evaluation import evaluate
from .policy import HierarchicalPolicy
from .trainer import Trainer, resume, train
from .world import DribbleWorld

__all__ = ["evaluate", "HierarchicalPolicy", "Trainer", "resume", "train", "DribbleWorld"]
