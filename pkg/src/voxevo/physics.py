"""Mass-spring simulation of a voxel robot on flat terrain.

Each occupied grid cell compiles to a cross-braced unit square: four corner
masses (shared with neighboring cells), four edge springs, and two diagonal
braces. Forces are Hooke + axial damping per spring, constant gravity, and a
penalty-model ground contact with Coulomb-style friction. Integration is
semi-implicit Euler (velocity update first), which is stable for the default
stiffness range at physics_dt = 1/600 with 6 substeps per environment step.

Unit system: voxel edge = 1 length unit, per-voxel mass = 1.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .morphology import H_ACTUATOR, V_ACTUATOR, InvalidMorphologyError, Morphology

VOXEL_EDGE = 1.0
VOXEL_MASS = 1.0

AXIS_HORIZONTAL = 0
AXIS_VERTICAL = 1
AXIS_DIAGONAL = 2


class SimulationDivergedError(RuntimeError):
    """Non-finite state detected; carries the environment step index."""

    def __init__(self, step_index: int):
        super().__init__(f"simulation diverged at env step {step_index}")
        self.step_index = step_index


@dataclass(frozen=True)
class ContactParams:
    normal_stiffness: float = 1.0e4
    normal_damping: float = 10.0
    friction: float = 0.8


@dataclass(frozen=True)
class PhysicsConfig:
    """Engine constants. Stiffness is per material; shared edges sum the
    contributions of both adjacent voxels."""

    rigid_stiffness: float = 6000.0
    soft_stiffness: float = 600.0
    actuator_stiffness: float = 600.0
    damping_ratio: float = 0.1
    gravity: float = 9.81
    contact: ContactParams = field(default_factory=ContactParams)
    physics_dt: float = 1.0 / 600.0
    substeps_per_env_step: int = 6
    actuation_min: float = 0.6
    actuation_max: float = 1.6

    def __post_init__(self):
        values = (
            self.rigid_stiffness, self.soft_stiffness, self.actuator_stiffness,
            self.damping_ratio, self.gravity, self.physics_dt,
            self.actuation_min, self.actuation_max,
            self.contact.normal_stiffness, self.contact.normal_damping,
            self.contact.friction,
        )
        if not all(math.isfinite(v) for v in values):
            raise ValueError("physics config values must be finite")
        if self.physics_dt <= 0:
            raise ValueError("physics_dt must be positive")
        if self.substeps_per_env_step < 1:
            raise ValueError("substeps_per_env_step must be >= 1")
        if not (self.actuation_min < 1.0 < self.actuation_max):
            raise ValueError("actuation range must straddle 1.0")

    def material_stiffness(self, code: int) -> float:
        if code == 1:
            return self.rigid_stiffness
        if code == 2:
            return self.soft_stiffness
        return self.actuator_stiffness

    def with_contact_disabled(self) -> "PhysicsConfig":
        return replace(self, contact=ContactParams(0.0, 0.0, 0.0))


@dataclass
class SimWorld:
    """Mutable simulation state compiled from a genome.

    Masses and springs are stored as flat arrays; `incidence` maps per-spring
    forces onto masses (+1 on endpoint a, -1 on endpoint b). Corner order in
    `corner_map` is (top-left, top-right, bottom-left, bottom-right).
    """

    pos: np.ndarray            # (n_masses, 2)
    vel: np.ndarray            # (n_masses, 2)
    mass: np.ndarray           # (n_masses,)
    spring_a: np.ndarray       # (n_springs,) endpoint index
    spring_b: np.ndarray       # (n_springs,)
    rest: np.ndarray           # (n_springs,) current rest length
    base_rest: np.ndarray      # (n_springs,) pre-actuation rest length
    stiffness: np.ndarray      # (n_springs,)
    damping: np.ndarray        # (n_springs,)
    axis: np.ndarray           # (n_springs,) AXIS_* code
    incidence: np.ndarray      # (n_masses, n_springs) +1/-1/0
    cells: list[tuple[int, int]]            # active cells, raster order
    cell_index: dict[tuple[int, int], int]  # cell -> voxel id
    materials: np.ndarray      # (n_voxels,) material codes
    corner_map: np.ndarray     # (n_voxels, 4) mass indices
    scale_x: np.ndarray        # (n_voxels,) current per-axis actuation scale
    scale_y: np.ndarray
    # adjacency used to recompute rest lengths after actuation
    h_springs: np.ndarray      # indices into spring arrays
    h_adjacent: np.ndarray     # (nh, 2) voxel ids, n_voxels = padding slot
    h_count: np.ndarray        # (nh,) number of real adjacent voxels
    v_springs: np.ndarray
    v_adjacent: np.ndarray
    v_count: np.ndarray
    d_springs: np.ndarray
    d_owner: np.ndarray
    gravity: float
    ground_height: float
    contact: ContactParams
    physics_dt: float
    substeps_per_env_step: int
    actuation_min: float
    actuation_max: float
    env_steps: int = 0

    @property
    def n_masses(self) -> int:
        return self.pos.shape[0]

    @property
    def n_springs(self) -> int:
        return self.spring_a.shape[0]

    @property
    def actuator_cells(self) -> list[tuple[int, int]]:
        return [c for c, v in zip(self.cells, self.materials) if v in (H_ACTUATOR, V_ACTUATOR)]


def build_world(genome: Morphology, cfg: PhysicsConfig, ground_height: float = 0.0) -> SimWorld:
    """Compile a genome into a mass-spring world resting on the ground.

    Placement: leftmost occupied column at x = 0, lowest corner row at
    y = ground_height. One mass per occupied lattice corner; shared edges are
    deduplicated with their stiffness contributions summed; each voxel's mass
    1.0 is split equally over its four corners.

    Any non-empty genome builds; the evolutionary fill/actuator/connectivity
    constraints are enforced by the genome operators, not here.
    """
    if genome.n_filled == 0:
        raise InvalidMorphologyError("cannot build a world from an empty genome")

    cells = genome.occupied_cells
    min_col = min(c for _, c in cells)
    max_corner_row = max(r for r, _ in cells) + 1

    # corner lattice points (row, col), deterministic raster order
    corner_ids: dict[tuple[int, int], int] = {}
    for r, c in cells:
        for corner in ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)):
            if corner not in corner_ids:
                corner_ids[corner] = -1
    for i, corner in enumerate(sorted(corner_ids)):
        corner_ids[corner] = i
    n_masses = len(corner_ids)

    pos = np.zeros((n_masses, 2))
    mass = np.zeros(n_masses)
    for (rr, cc), idx in corner_ids.items():
        pos[idx, 0] = (cc - min_col) * VOXEL_EDGE
        pos[idx, 1] = ground_height + (max_corner_row - rr) * VOXEL_EDGE

    cell_index = {cell: i for i, cell in enumerate(cells)}
    materials = np.array([genome.grid[r, c] for r, c in cells], dtype=np.int8)
    corner_map = np.zeros((len(cells), 4), dtype=np.int64)

    # springs keyed by (endpoint a, endpoint b, axis); insertion order fixed
    springs: dict[tuple[int, int, int], dict] = {}

    def add_spring(pa: tuple[int, int], pb: tuple[int, int], axis_kind: int,
                   base: float, k: float, voxel: int):
        a, b = corner_ids[pa], corner_ids[pb]
        if a > b:
            a, b = b, a
        key = (a, b, axis_kind)
        entry = springs.get(key)
        if entry is None:
            springs[key] = {"base": base, "k": k, "voxels": [voxel]}
        else:
            entry["k"] += k
            entry["voxels"].append(voxel)

    diag_base = math.sqrt(2.0) * VOXEL_EDGE
    for vox, (r, c) in enumerate(cells):
        tl, tr = (r, c), (r, c + 1)
        bl, br = (r + 1, c), (r + 1, c + 1)
        corner_map[vox] = [corner_ids[tl], corner_ids[tr], corner_ids[bl], corner_ids[br]]
        per_corner = VOXEL_MASS / 4.0
        for corner in (tl, tr, bl, br):
            mass[corner_ids[corner]] += per_corner
        k = cfg.material_stiffness(int(materials[vox]))
        add_spring(tl, tr, AXIS_HORIZONTAL, VOXEL_EDGE, k, vox)
        add_spring(bl, br, AXIS_HORIZONTAL, VOXEL_EDGE, k, vox)
        add_spring(tl, bl, AXIS_VERTICAL, VOXEL_EDGE, k, vox)
        add_spring(tr, br, AXIS_VERTICAL, VOXEL_EDGE, k, vox)
        add_spring(tl, br, AXIS_DIAGONAL, diag_base, k, vox)
        add_spring(tr, bl, AXIS_DIAGONAL, diag_base, k, vox)

    n_springs = len(springs)
    spring_a = np.zeros(n_springs, dtype=np.int64)
    spring_b = np.zeros(n_springs, dtype=np.int64)
    base_rest = np.zeros(n_springs)
    stiffness = np.zeros(n_springs)
    axis = np.zeros(n_springs, dtype=np.int8)
    adjacency: list[list[int]] = []
    for s, ((a, b, ax), entry) in enumerate(springs.items()):
        spring_a[s] = a
        spring_b[s] = b
        base_rest[s] = entry["base"]
        stiffness[s] = entry["k"]
        axis[s] = ax
        adjacency.append(entry["voxels"])

    # damping from the post-dedup stiffness and the endpoints' reduced mass
    m_a, m_b = mass[spring_a], mass[spring_b]
    reduced = m_a * m_b / (m_a + m_b)
    damping = 2.0 * cfg.damping_ratio * np.sqrt(stiffness * reduced)

    incidence = np.zeros((n_masses, n_springs))
    incidence[spring_a, np.arange(n_springs)] += 1.0
    incidence[spring_b, np.arange(n_springs)] -= 1.0

    def axis_adjacency(ax: int):
        sel = np.flatnonzero(axis == ax)
        adj = np.full((len(sel), 2), len(cells), dtype=np.int64)  # pad slot
        count = np.zeros(len(sel))
        for row, s in enumerate(sel):
            voxels = adjacency[s]
            count[row] = len(voxels)
            adj[row, : len(voxels)] = voxels
        return sel, adj, count

    h_springs, h_adjacent, h_count = axis_adjacency(AXIS_HORIZONTAL)
    v_springs, v_adjacent, v_count = axis_adjacency(AXIS_VERTICAL)
    d_springs = np.flatnonzero(axis == AXIS_DIAGONAL)
    d_owner = np.array([adjacency[s][0] for s in d_springs], dtype=np.int64)

    return SimWorld(
        pos=pos,
        vel=np.zeros_like(pos),
        mass=mass,
        spring_a=spring_a,
        spring_b=spring_b,
        rest=base_rest.copy(),
        base_rest=base_rest,
        stiffness=stiffness,
        damping=damping,
        axis=axis,
        incidence=incidence,
        cells=cells,
        cell_index=cell_index,
        materials=materials,
        corner_map=corner_map,
        scale_x=np.ones(len(cells)),
        scale_y=np.ones(len(cells)),
        h_springs=h_springs,
        h_adjacent=h_adjacent,
        h_count=h_count,
        v_springs=v_springs,
        v_adjacent=v_adjacent,
        v_count=v_count,
        d_springs=d_springs,
        d_owner=d_owner,
        gravity=cfg.gravity,
        ground_height=ground_height,
        contact=cfg.contact,
        physics_dt=cfg.physics_dt,
        substeps_per_env_step=cfg.substeps_per_env_step,
        actuation_min=cfg.actuation_min,
        actuation_max=cfg.actuation_max,
    )


def apply_actuation(world: SimWorld, actions: dict[tuple[int, int], float]) -> None:
    """Set spring rest lengths from per-voxel actions in [0, 1].

    Action a maps linearly onto scale s in [actuation_min, actuation_max].
    Horizontal actuators scale their horizontal edges, vertical actuators
    their vertical edges; shared edges take the mean of the adjacent voxels'
    scales and each voxel's diagonals become sqrt(w^2 + h^2) of its own
    per-axis extents.
    """
    lo, hi = world.actuation_min, world.actuation_max
    for cell, a in actions.items():
        vox = world.cell_index.get(cell)
        if vox is None:
            raise ValueError(f"cell {cell} is not part of the robot")
        material = int(world.materials[vox])
        if material not in (H_ACTUATOR, V_ACTUATOR):
            raise ValueError(f"cell {cell} is not an actuator voxel")
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"action {a!r} for cell {cell} outside [0, 1]")
        s = lo + a * (hi - lo)
        if material == H_ACTUATOR:
            world.scale_x[vox] = s
        else:
            world.scale_y[vox] = s

    sx = np.append(world.scale_x, 0.0)  # padding slot contributes 0
    sy = np.append(world.scale_y, 0.0)
    world.rest[world.h_springs] = (
        world.base_rest[world.h_springs]
        * sx[world.h_adjacent].sum(axis=1) / world.h_count
    )
    world.rest[world.v_springs] = (
        world.base_rest[world.v_springs]
        * sy[world.v_adjacent].sum(axis=1) / world.v_count
    )
    world.rest[world.d_springs] = np.hypot(
        world.scale_x[world.d_owner] * VOXEL_EDGE,
        world.scale_y[world.d_owner] * VOXEL_EDGE,
    )


def spring_forces(world: SimWorld) -> np.ndarray:
    """Per-mass internal forces (Hooke + axial damping), shape (n_masses, 2).

    Pairwise construction guarantees the array sums to the zero vector up to
    rounding.
    """
    d = world.pos[world.spring_b] - world.pos[world.spring_a]
    length = np.sqrt((d * d).sum(axis=1))
    unit = d / length[:, None]
    v_rel = ((world.vel[world.spring_b] - world.vel[world.spring_a]) * unit).sum(axis=1)
    magnitude = world.stiffness * (length - world.rest) + world.damping * v_rel
    return world.incidence @ (magnitude[:, None] * unit)


def _total_forces(world: SimWorld) -> np.ndarray:
    forces = spring_forces(world)
    forces[:, 1] -= world.mass * world.gravity
    contact = world.contact
    if contact.normal_stiffness > 0.0 or contact.friction > 0.0:
        penetration = world.ground_height - world.pos[:, 1]
        touching = penetration > 0.0
        if touching.any():
            normal = (
                contact.normal_stiffness * penetration[touching]
                - contact.normal_damping * world.vel[touching, 1]
            )
            normal = np.maximum(normal, 0.0)
            vx = world.vel[touching, 0]
            # Coulomb friction opposing sliding, capped so one substep cannot
            # reverse the tangential velocity
            stopping = world.mass[touching] * np.abs(vx) / world.physics_dt
            friction = -np.sign(vx) * np.minimum(contact.friction * normal, stopping)
            forces[touching, 1] += normal
            forces[touching, 0] += friction
    return forces


def step_env(world: SimWorld) -> None:
    """Advance one environment step (substeps_per_env_step physics substeps,
    semi-implicit Euler). Raises SimulationDivergedError on non-finite state."""
    dt = world.physics_dt
    inv_mass = 1.0 / world.mass[:, None]
    # divergence surfaces as the explicit finiteness check below, not as
    # floating-point warnings mid-substep
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(world.substeps_per_env_step):
            forces = _total_forces(world)
            world.vel += dt * forces * inv_mass
            world.pos += dt * world.vel
    world.env_steps += 1
    if not (np.isfinite(world.pos).all() and np.isfinite(world.vel).all()):
        raise SimulationDivergedError(world.env_steps)


def center_of_mass(world: SimWorld) -> np.ndarray:
    """Mass-weighted mean position, shape (2,)."""
    return (world.mass[:, None] * world.pos).sum(axis=0) / world.mass.sum()


def mechanical_energy(world: SimWorld) -> float:
    """Kinetic + spring potential + gravitational energy (ground as datum)."""
    kinetic = 0.5 * (world.mass * (world.vel * world.vel).sum(axis=1)).sum()
    d = world.pos[world.spring_b] - world.pos[world.spring_a]
    length = np.sqrt((d * d).sum(axis=1))
    elastic = 0.5 * (world.stiffness * (length - world.rest) ** 2).sum()
    gravitational = (world.mass * world.gravity * (world.pos[:, 1] - world.ground_height)).sum()
    return float(kinetic + elastic + gravitational)
