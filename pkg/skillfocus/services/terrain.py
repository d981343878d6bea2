"""Terrain zones laid out along the arena's x axis."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from skillfocus.config import WorldConfig


@dataclass(frozen=True)
class TerrainZone:
    """Physical parameters of one zone at a given difficulty level.

    ``slope`` is the gravity-induced ball acceleration (m/s²), ``roughness`` the
    velocity-noise std (m/s per sqrt(s)) and ``friction`` the ball's linear
    damping rate (1/s). Stair fields are zero outside ``stair_descent``.
    """

    index: int
    kind: str
    x_min: float
    x_max: float
    slope: Tuple[float, float]
    roughness: float
    friction: float
    stair_period: float = 0.0
    stair_drop: float = 0.0

    def contains(self, x: float) -> bool:
        return self.x_min <= x < self.x_max

    @property
    def slope_vector(self) -> np.ndarray:
        return np.array(self.slope)

    def privileged(self) -> np.ndarray:
        """(slope_x, slope_y, roughness, friction) as seen by the critic."""
        return np.array([self.slope[0], self.slope[1], self.roughness, self.friction])

    def stair_index(self, x: float) -> int:
        return math.floor((x - self.x_min) / self.stair_period) if self.stair_period > 0 else 0


def make_zone(config: WorldConfig, index: int, difficulty: int) -> TerrainZone:
    kind = config.zone_kinds[index]
    x_min = index * config.zone_length
    slope, roughness, friction = 0.0, 0.0, config.base_friction
    period, drop = 0.0, 0.0
    if kind == "ramp_up":
        slope = -config.slope_per_level * difficulty
    elif kind == "ramp_down":
        slope = config.slope_per_level * difficulty
    elif kind == "rough":
        roughness = config.roughness_per_level * difficulty
        friction = config.base_friction + config.rough_friction_per_level * difficulty
    elif kind == "stair_descent":
        slope = config.slope_per_level * difficulty
        period = config.stair_period
        drop = config.stair_drop_per_level * difficulty
    return TerrainZone(
        index=index,
        kind=kind,
        x_min=x_min,
        x_max=x_min + config.zone_length,
        slope=(slope, 0.0),
        roughness=roughness,
        friction=friction,
        stair_period=period,
        stair_drop=drop,
    )


class TerrainMap:
    """All zones of the arena at one difficulty level."""

    def __init__(self, config: WorldConfig, difficulty: int):
        self.config = config
        self.difficulty = difficulty
        self.zones: List[TerrainZone] = [make_zone(config, i, difficulty) for i in range(len(config.zone_kinds))]

    def zone_index(self, x: float) -> int:
        index = int(math.floor(x / self.config.zone_length))
        return min(max(index, 0), len(self.zones) - 1)

    def zone_at(self, x: float) -> TerrainZone:
        return self.zones[self.zone_index(x)]

    def stair_velocity(self, zone: TerrainZone, x_old: float, x_new: float, vx: float) -> float:
        """Ball x-velocity after crossing stair edges between ``x_old`` and ``x_new``.

        Going down an edge adds the drop's potential energy; going up removes it
        and stops the ball when it does not have enough.
        """
        if zone.kind != "stair_descent" or zone.stair_drop <= 0.0:
            return vx
        low, high = max(zone.x_min, 0.0), zone.x_max
        if not (low <= x_old < high and low <= x_new < high):
            return vx
        crossings = zone.stair_index(x_new) - zone.stair_index(x_old)
        energy = 2.0 * self.config.gravity * zone.stair_drop
        for _ in range(abs(crossings)):
            if crossings > 0:
                vx = math.sqrt(vx * vx + energy) if vx >= 0.0 else vx
            else:
                vx = -math.sqrt(vx * vx - energy) if vx * vx > energy else 0.0
        return vx
