"""Observation vectors for voxel robots.

Each grid cell contributes an 8-scalar block: mean corner velocity (clamped),
normalized quadrilateral area, and a 5-way material one-hot. Empty or
out-of-grid cells contribute the missing-voxel block (zero velocity, zero
volume, empty one-hot). The global layout rasters the full bounding box; the
local layout rasters the Moore window centered on one actuator. Both end with
a periodic time signal, giving 201 entries at the default sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .morphology import EMPTY, GRID_SIZE, N_MATERIALS
from .physics import VOXEL_EDGE, SimWorld

BLOCK_SIZE = 3 + N_MATERIALS  # V.x, V.y, v, M[0..4]

MISSING_BLOCK = np.zeros(BLOCK_SIZE)
MISSING_BLOCK[3 + EMPTY] = 1.0
MISSING_BLOCK.flags.writeable = False


@dataclass(frozen=True)
class ObservationConfig:
    neighborhood_distance: int = 2
    box_side: int = GRID_SIZE
    velocity_clamp: float = 10.0
    time_period: int = 25
    normalize_volume: bool = True

    def __post_init__(self):
        if self.neighborhood_distance < 0:
            raise ValueError("neighborhood distance must be >= 0")
        if self.box_side < 1:
            raise ValueError("box side must be >= 1")
        if self.time_period < 1:
            raise ValueError("time period must be >= 1")
        if self.velocity_clamp <= 0.0:
            raise ValueError("velocity clamp must be positive")

    @property
    def window_side(self) -> int:
        return 2 * self.neighborhood_distance + 1

    @property
    def global_size(self) -> int:
        return self.box_side * self.box_side * BLOCK_SIZE + 1

    @property
    def local_size(self) -> int:
        return self.window_side * self.window_side * BLOCK_SIZE + 1


@dataclass(frozen=True)
class VoxelObservation:
    velocity: np.ndarray  # (2,)
    volume: float
    material: np.ndarray  # (N_MATERIALS,) one-hot

    def as_block(self) -> np.ndarray:
        return np.concatenate([self.velocity, [self.volume], self.material])


def time_signal(env_step: int, period: int = 25) -> float:
    """Phase in [0, 2*pi), advancing one tick per environment step."""
    return 2.0 * math.pi * (env_step % period) / period


def _quad_areas(pos: np.ndarray, corner_map: np.ndarray) -> np.ndarray:
    """Shoelace area per voxel; corner_map columns are TL, TR, BL, BR."""
    # polygon order TL -> TR -> BR -> BL
    ring = pos[corner_map[:, [0, 1, 3, 2]]]  # (n, 4, 2)
    x, y = ring[..., 0], ring[..., 1]
    x_next, y_next = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
    return 0.5 * np.abs((x * y_next - x_next * y).sum(axis=1))


class ObservationBuilder:
    """Precomputed observation assembly for one world.

    Static structure (which voxel feeds which slot of which layout) is fixed
    at construction; per-step feature blocks are recomputed from the live
    simulation state. Row `n_voxels` of the feature matrix is the
    missing-voxel block, so unoccupied slots index the padding row.
    """

    def __init__(self, world: SimWorld, cfg: ObservationConfig | None = None):
        self.world = world
        self.cfg = cfg or ObservationConfig()
        n = len(world.cells)
        self._pad = n
        self._features = np.tile(MISSING_BLOCK, (n + 1, 1))
        onehot = np.zeros((n, N_MATERIALS))
        onehot[np.arange(n), world.materials.astype(int)] = 1.0
        self._features[:n, 3:] = onehot
        self._rest_area = VOXEL_EDGE ** 2 if self.cfg.normalize_volume else None

        side = self.cfg.box_side
        lookup = np.full((side, side), self._pad, dtype=np.int64)
        for i, (r, c) in enumerate(world.cells):
            lookup[r, c] = i
        self._global_slots = lookup.ravel()

        d = self.cfg.neighborhood_distance
        self._local_slots: dict[tuple[int, int], np.ndarray] = {}
        act_cells = world.actuator_cells
        for r, c in act_cells:
            slots = np.full(self.cfg.window_side ** 2, self._pad, dtype=np.int64)
            k = 0
            for wr in range(r - d, r + d + 1):
                for wc in range(c - d, c + d + 1):
                    if 0 <= wr < side and 0 <= wc < side:
                        slots[k] = lookup[wr, wc]
                    k += 1
            self._local_slots[(r, c)] = slots
        self._actuator_cells = act_cells

    def refresh(self) -> None:
        """Recompute the dynamic features (velocity, volume) from world state."""
        w, f, n = self.world, self._features, self._pad
        vel = w.vel[w.corner_map].mean(axis=1)
        clamp = self.cfg.velocity_clamp
        np.clip(vel, -clamp, clamp, out=vel)
        f[:n, 0:2] = vel
        areas = _quad_areas(w.pos, w.corner_map)
        if self._rest_area is not None:
            areas = areas / self._rest_area
        f[:n, 2] = areas

    def global_vector(self, env_step: int) -> np.ndarray:
        self.refresh()
        blocks = self._features[self._global_slots].ravel()
        return np.append(blocks, time_signal(env_step, self.cfg.time_period))

    def local_vector(self, cell: tuple[int, int], env_step: int) -> np.ndarray:
        slots = self._local_slots.get(cell)
        if slots is None:
            raise ValueError(f"cell {cell} is not an actuator voxel of this robot")
        self.refresh()
        blocks = self._features[slots].ravel()
        return np.append(blocks, time_signal(env_step, self.cfg.time_period))

    def local_matrix(self, env_step: int) -> tuple[list[tuple[int, int]], np.ndarray]:
        """All actuator windows at once: (cells, matrix of shape (n_act, local_size))."""
        self.refresh()
        cells = self._actuator_cells
        if not cells:
            return cells, np.zeros((0, self.cfg.local_size))
        idx = np.stack([self._local_slots[c] for c in cells])
        blocks = self._features[idx].reshape(len(cells), -1)
        t = np.full((len(cells), 1), time_signal(env_step, self.cfg.time_period))
        return cells, np.hstack([blocks, t])


def observe_voxel(world: SimWorld, cell: tuple[int, int],
                  cfg: ObservationConfig | None = None) -> VoxelObservation:
    """Features of one cell; empty or out-of-grid cells give the missing triple."""
    cfg = cfg or ObservationConfig()
    vox = world.cell_index.get(cell)
    if vox is None:
        return VoxelObservation(MISSING_BLOCK[0:2].copy(), 0.0, MISSING_BLOCK[3:].copy())
    corners = world.corner_map[vox]
    vel = world.vel[corners].mean(axis=0)
    np.clip(vel, -cfg.velocity_clamp, cfg.velocity_clamp, out=vel)
    area = float(_quad_areas(world.pos, world.corner_map[vox:vox + 1])[0])
    if cfg.normalize_volume:
        area /= VOXEL_EDGE ** 2
    onehot = np.zeros(N_MATERIALS)
    onehot[int(world.materials[vox])] = 1.0
    return VoxelObservation(vel, area, onehot)


def observe_global(world: SimWorld, env_step: int,
                   cfg: ObservationConfig | None = None) -> np.ndarray:
    """Raster the full bounding box and append the time signal."""
    return ObservationBuilder(world, cfg).global_vector(env_step)


def observe_local(world: SimWorld, cell: tuple[int, int], env_step: int,
                  cfg: ObservationConfig | None = None) -> np.ndarray:
    """Raster the Moore window around one actuator and append the time signal."""
    return ObservationBuilder(world, cfg).local_vector(cell, env_step)
