"""Co-optimization of voxel soft-robot bodies and neural controllers.

Robots are 5x5 grids of material voxels simulated as damped mass-spring
networks. Controllers are small MLPs, either one global network for the whole
body or one shared modular network copied into every actuator. A (mu+lambda)
evolutionary algorithm with age-fitness Pareto selection optimizes bodies and
brains for flat-terrain locomotion.
"""

from .morphology import (
    EMPTY,
    RIGID,
    SOFT,
    H_ACTUATOR,
    V_ACTUATOR,
    GRID_SIZE,
    InvalidMorphologyError,
    Morphology,
    MutationFailedError,
    grid_distance,
    mutate_morphology,
    random_morphology,
    sample_neighbor,
    validate,
)
from .physics import (
    ContactParams,
    PhysicsConfig,
    SimulationDivergedError,
    SimWorld,
    apply_actuation,
    build_world,
    center_of_mass,
    mechanical_energy,
    step_env,
)
from .sensing import (
    ObservationBuilder,
    ObservationConfig,
    observe_global,
    observe_local,
    observe_voxel,
    time_signal,
)
from .control import (
    ControllerGenome,
    MlpParams,
    act,
    act_global,
    act_modular,
    init_controller,
    mlp_forward,
    mutate_controller,
)
from .walker import (
    EpisodeConfig,
    EpisodeResult,
    episode_fitness,
    evaluate_fitness,
    run_episode,
)
from .evolution import (
    EvolutionConfig,
    GenerationLog,
    Individual,
    OffspringRecord,
    RunArtifacts,
    evolve_generation,
    make_offspring,
    pareto_rank,
    run_evolution,
    select_survivors,
)
from .experiments import (
    ConvergenceMetrics,
    MutationAccounting,
    TransferSample,
    convergence_metrics,
    default_catalog,
    directional_report,
    fixed_morph_training,
    load_catalog,
    multi_morph_training,
    mutation_accounting,
    run_battery,
    save_catalog,
    transfer_analysis,
)
from .runconfig import ConfigError, RunConfig, load_config, parse_config
from .checkpoints import (
    CheckpointIntegrityError,
    load_individual,
    load_population,
    save_individual,
    save_population,
)

__version__ = "0.1.0"
