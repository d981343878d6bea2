"""Box-adaptive curriculum over user commands and terrain difficulty.

The command distribution is a binary-weight lattice over
``[-range, range]²`` and the difficulty distribution a binary weight per
level; both are sampled uniformly over their unlocked support and
independently of each other. A successful episode unlocks the axis-adjacent
command cells and/or the next difficulty level of the cell it was drawn from.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from skillfocus.config import CurriculumConfig
from skillfocus.core.exceptions import CurriculumError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CurriculumGrid:
    """Immutable snapshot of the curriculum; :func:`update` returns a new one."""

    config: CurriculumConfig
    command_weights: np.ndarray
    difficulty_weights: np.ndarray

    def __post_init__(self):
        for name in ("command_weights", "difficulty_weights"):
            array = np.array(getattr(self, name), dtype=np.float64)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        if not self.command_weights.any() or not self.difficulty_weights.any():
            raise CurriculumError("Curriculum grid must keep at least one unlocked cell and level")

    @property
    def centers(self) -> np.ndarray:
        cfg = self.config
        return -cfg.command_range + (np.arange(cfg.cells_per_axis) + 0.5) * cfg.cell_size

    def cell_of(self, command: np.ndarray) -> Tuple[int, int]:
        cfg = self.config
        index = np.floor((np.asarray(command, dtype=np.float64) + cfg.command_range) / cfg.cell_size).astype(int)
        index = np.clip(index, 0, cfg.cells_per_axis - 1)
        return int(index[0]), int(index[1])

    def unlocked_command_fraction(self) -> float:
        return float(self.command_weights.mean())

    def unlocked_difficulty_fraction(self) -> float:
        return float(self.difficulty_weights.mean())

    def unlocked_levels(self) -> np.ndarray:
        return np.flatnonzero(self.difficulty_weights)

    def bit_equal(self, other: "CurriculumGrid") -> bool:
        return np.array_equal(self.command_weights, other.command_weights) and np.array_equal(
            self.difficulty_weights, other.difficulty_weights
        )

    def thresholds(self) -> Dict[str, float]:
        return {
            "d_th1": self.config.d_th1,
            "d_th2": self.config.d_th2,
            "velocity_gate": self.config.velocity_gate,
            "cell_size": self.config.cell_size,
            "command_range": self.config.command_range,
            "max_difficulty": self.config.max_difficulty,
        }


@dataclass
class EpisodeTrace:
    """What the gates need from a finished episode."""

    command: np.ndarray
    difficulty: int
    ball_start: np.ndarray
    ball_end: np.ndarray
    robot_end: np.ndarray
    velocity_error_mean: float
    cell: Optional[Tuple[int, int]] = None


@dataclass(frozen=True)
class EpisodeOutcome:
    r_command: int
    r_difficulty: int
    cell: Tuple[int, int]
    difficulty: int


def init_grid(config: CurriculumConfig) -> CurriculumGrid:
    n = config.cells_per_axis
    centers = -config.command_range + (np.arange(n) + 0.5) * config.cell_size
    inside = np.abs(centers) <= config.initial_box + 1e-9
    levels = np.zeros(config.max_difficulty + 1)
    levels[list(config.initial_difficulties)] = 1.0
    return CurriculumGrid(config, np.outer(inside, inside).astype(np.float64), levels)


def sample_cell(grid: CurriculumGrid, rng: np.random.Generator) -> Tuple[np.ndarray, int, Tuple[int, int]]:
    """Draw (user command, difficulty, cell): a uniform unlocked cell, a uniform point in it, a uniform unlocked level."""
    cells = np.flatnonzero(grid.command_weights)
    i, j = np.unravel_index(cells[rng.integers(len(cells))], grid.command_weights.shape)
    centers = grid.centers
    command = np.array([centers[i], centers[j]]) + (rng.random(2) - 0.5) * grid.config.cell_size
    levels = grid.unlocked_levels()
    return command, int(levels[rng.integers(len(levels))]), (int(i), int(j))


def sample(grid: CurriculumGrid, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
    command, level, _ = sample_cell(grid, rng)
    return command, level


def ball_progress(trace: EpisodeTrace) -> float:
    """Ball displacement projected onto the commanded direction; 0 for a zero command."""
    norm = float(np.linalg.norm(trace.command))
    if norm < 1e-12:
        return 0.0
    return float((trace.ball_end - trace.ball_start) @ (trace.command / norm))


def evaluate_gates(trace: EpisodeTrace, grid: CurriculumGrid) -> EpisodeOutcome:
    cfg = grid.config
    r_command = int(trace.velocity_error_mean > cfg.velocity_gate)
    gap = float(np.linalg.norm(trace.ball_end - trace.robot_end))
    # the sampled cell wins over re-binning the command, which can land across an edge
    cell = trace.cell if trace.cell is not None else grid.cell_of(trace.command)
    r_difficulty = int(ball_progress(trace) > cfg.d_th1 and gap < cfg.d_th2)
    return EpisodeOutcome(r_command, r_difficulty, cell, int(trace.difficulty))


def update(grid: CurriculumGrid, outcome: EpisodeOutcome) -> CurriculumGrid:
    """Unlock the neighbors of a successful source cell; failures return ``grid`` unchanged."""
    i, j = outcome.cell
    if not grid.command_weights[i, j] or not grid.difficulty_weights[outcome.difficulty]:
        raise CurriculumError(
            "Outcome refers to a locked curriculum cell",
            details={"cell": [i, j], "difficulty": outcome.difficulty},
        )
    if not outcome.r_command and not outcome.r_difficulty:
        return grid

    commands = grid.command_weights.copy()
    levels = grid.difficulty_weights.copy()
    last = grid.config.cells_per_axis - 1
    if outcome.r_command:
        for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            commands[min(max(i + di, 0), last), min(max(j + dj, 0), last)] = 1.0
    if outcome.r_difficulty:
        levels[min(outcome.difficulty + 1, grid.config.max_difficulty)] = 1.0
    logger.debug(f"Curriculum unlock from cell {(i, j)} level {outcome.difficulty}: {outcome}")
    return CurriculumGrid(grid.config, commands, levels)


def load_grid(config: CurriculumConfig, command_weights: np.ndarray, difficulty_weights: np.ndarray) -> CurriculumGrid:
    expected = (config.cells_per_axis, config.cells_per_axis)
    if command_weights.shape != expected or difficulty_weights.shape != (config.max_difficulty + 1,):
        raise CurriculumError(
            "Stored curriculum does not match the configured lattice",
            details={"command_shape": list(command_weights.shape), "expected": list(expected)},
        )
    return CurriculumGrid(config, command_weights, difficulty_weights)
