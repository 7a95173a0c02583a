"""MLP controllers: one shared network per robot.

Two kinds exist. The global controller reads the full-box observation and
emits one output per grid cell (raster order); outputs at non-actuator cells
are discarded. The modular controller is a single parameter set shared by
every actuator, mapping that actuator's neighborhood observation to its own
action. Both are one-hidden-layer MLPs: 32 ReLU units, sigmoid outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .morphology import GRID_SIZE
from .physics import SimWorld
from .sensing import ObservationBuilder, ObservationConfig

HIDDEN_UNITS = 32
GLOBAL_KIND = "global"
MODULAR_KIND = "modular"
KINDS = (GLOBAL_KIND, MODULAR_KIND)

DEFAULT_INPUT_SIZE = ObservationConfig().global_size  # == local_size == 201
GLOBAL_OUTPUT_SIZE = GRID_SIZE * GRID_SIZE
MODULAR_OUTPUT_SIZE = 1

# frozen totals for the default sizes: 201*32 + 32 + 32*out + out
EXPECTED_PARAM_COUNTS = {GLOBAL_KIND: 7289, MODULAR_KIND: 6497}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MlpParams:
    W1: np.ndarray  # (hidden, n_in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (n_out, hidden)
    b2: np.ndarray  # (n_out,)

    def __post_init__(self):
        object.__setattr__(self, "W1", _frozen(self.W1))
        object.__setattr__(self, "b1", _frozen(self.b1))
        object.__setattr__(self, "W2", _frozen(self.W2))
        object.__setattr__(self, "b2", _frozen(self.b2))
        hidden, n_in = self.W1.shape
        n_out = self.W2.shape[0]
        if self.b1.shape != (hidden,) or self.W2.shape != (n_out, hidden) \
                or self.b2.shape != (n_out,):
            raise ValueError("inconsistent layer shapes")
        for a in (self.W1, self.b1, self.W2, self.b2):
            if not np.isfinite(a).all():
                raise ValueError("controller parameters must be finite")

    @property
    def n_inputs(self) -> int:
        return self.W1.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.W2.shape[0]

    @property
    def n_params(self) -> int:
        return self.W1.size + self.b1.size + self.W2.size + self.b2.size

    def to_flat(self) -> np.ndarray:
        """Row-major W1, then b1, W2, b2; the serialization layout."""
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])


def params_from_flat(flat: np.ndarray, n_in: int, hidden: int, n_out: int) -> MlpParams:
    flat = np.asarray(flat, dtype=np.float64)
    expected = hidden * n_in + hidden + n_out * hidden + n_out
    if flat.shape != (expected,):
        raise ValueError(f"expected {expected} parameters, got {flat.shape}")
    i = 0
    W1 = flat[i:i + hidden * n_in].reshape(hidden, n_in); i += hidden * n_in
    b1 = flat[i:i + hidden]; i += hidden
    W2 = flat[i:i + n_out * hidden].reshape(n_out, hidden); i += n_out * hidden
    b2 = flat[i:]
    return MlpParams(W1, b1, W2, b2)


@dataclass(frozen=True)
class ControllerGenome:
    kind: str
    params: MlpParams

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        expected_out = GLOBAL_OUTPUT_SIZE if self.kind == GLOBAL_KIND else MODULAR_OUTPUT_SIZE
        if self.params.n_outputs != expected_out:
            raise ValueError(
                f"{self.kind} controller needs {expected_out} outputs, "
                f"got {self.params.n_outputs}")

    @property
    def n_params(self) -> int:
        return self.params.n_params


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp-safe formulation: sigmoid(x) = exp(-logaddexp(0, -x))
    return np.exp(-np.logaddexp(0.0, -x))


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """sigmoid(W2 @ relu(W1 @ x + b1) + b2); outputs in (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.n_inputs,):
        raise ValueError(f"expected input of length {params.n_inputs}, got {x.shape}")
    h = np.maximum(params.W1 @ x + params.b1, 0.0)
    return _sigmoid(params.W2 @ h + params.b2)


def _batch_forward(params: MlpParams, xs: np.ndarray) -> np.ndarray:
    h = np.maximum(xs @ params.W1.T + params.b1, 0.0)
    return _sigmoid(h @ params.W2.T + params.b2)


def act_global(genome: ControllerGenome, world: SimWorld, env_step: int,
               builder: ObservationBuilder | None = None) -> dict[tuple[int, int], float]:
    """One forward pass on the full-box observation; keep only actuator outputs.

    Output index of cell (r, c) is its raster index r*side + c.
    """
    if genome.kind != GLOBAL_KIND:
        raise ValueError("act_global requires a global controller")
    builder = builder or ObservationBuilder(world)
    out = mlp_forward(genome.params, builder.global_vector(env_step))
    side = builder.cfg.box_side
    return {(r, c): float(out[r * side + c]) for r, c in world.actuator_cells}


def act_modular(genome: ControllerGenome, world: SimWorld, env_step: int,
                builder: ObservationBuilder | None = None) -> dict[tuple[int, int], float]:
    """Shared-parameter forward pass per actuator on its own window."""
    if genome.kind != MODULAR_KIND:
        raise ValueError("act_modular requires a modular controller")
    builder = builder or ObservationBuilder(world)
    cells, xs = builder.local_matrix(env_step)
    out = _batch_forward(genome.params, xs)[:, 0]
    return {cell: float(a) for cell, a in zip(cells, out)}


def act(genome: ControllerGenome, world: SimWorld, env_step: int,
        builder: ObservationBuilder | None = None) -> dict[tuple[int, int], float]:
    if genome.kind == GLOBAL_KIND:
        return act_global(genome, world, env_step, builder)
    return act_modular(genome, world, env_step, builder)


def init_controller(kind: str, rng: np.random.Generator,
                    n_inputs: int = DEFAULT_INPUT_SIZE,
                    hidden: int = HIDDEN_UNITS) -> ControllerGenome:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    if kind not in KINDS:
        raise ValueError(f"unknown controller kind {kind!r}")
    n_out = GLOBAL_OUTPUT_SIZE if kind == GLOBAL_KIND else MODULAR_OUTPUT_SIZE
    r1 = 1.0 / np.sqrt(n_inputs)
    r2 = 1.0 / np.sqrt(hidden)
    params = MlpParams(
        W1=rng.uniform(-r1, r1, size=(hidden, n_inputs)),
        b1=rng.uniform(-r1, r1, size=hidden),
        W2=rng.uniform(-r2, r2, size=(n_out, hidden)),
        b2=rng.uniform(-r2, r2, size=n_out),
    )
    genome = ControllerGenome(kind, params)
    expected = EXPECTED_PARAM_COUNTS.get(kind)
    if n_inputs == DEFAULT_INPUT_SIZE and hidden == HIDDEN_UNITS:
        assert genome.n_params == expected, genome.n_params
    return genome


def mutate_controller(genome: ControllerGenome, rng: np.random.Generator,
                      sigma: float = 0.1) -> ControllerGenome:
    """Add independent N(0, sigma) noise to every parameter (sigma is the
    standard deviation). The parent is untouched."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    p = genome.params
    flat = p.to_flat() + rng.normal(0.0, sigma, size=p.n_params)
    return ControllerGenome(
        genome.kind, params_from_flat(flat, p.n_inputs, p.W1.shape[0], p.n_outputs))
