"""(mu + lambda) evolution with age-fitness Pareto survivor selection.

Each generation: survivors age by one, lambda offspring are created by
mutating exactly one half of a uniformly drawn parent (body or brain, never
both), one fresh random individual is injected, all new individuals are
evaluated, and mu survivors are selected by non-dominated sorting on
(minimize age, maximize fitness). Age resets to zero on every mutation, so
new genetic material always starts on the first Pareto front.

Three training modes share this loop. Co-optimization evolves body and brain
together; fixed-body mode evolves a controller for one given body (brain-only
mutation); multi-body mode evolves one controller scored by its minimum
fitness over a catalog of bodies (also brain-only).

Determinism: every random decision draws from a generator seeded by
(master_seed, generation, slot), created in the driving process. Evaluations
are pure functions of their inputs, so the number of worker processes cannot
change any logged value.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np

from .control import ControllerGenome, init_controller, mutate_controller
from .morphology import (
    Morphology,
    MutationFailedError,
    mutate_morphology,
    random_morphology,
)
from .physics import PhysicsConfig
from .sensing import ObservationConfig
from .walker import EpisodeConfig, evaluate_fitness

MODE_CO_OPTIMIZE = "co-optimize"
MODE_FIXED_BODY = "fixed-body"
MODE_MULTI_BODY = "multi-body"
MODES = (MODE_CO_OPTIMIZE, MODE_FIXED_BODY, MODE_MULTI_BODY)

KIND_BODY = "body"
KIND_BRAIN = "brain"
KIND_FRESH = "fresh"


@dataclass
class Individual:
    morphology: Morphology
    controller: ControllerGenome
    age: int
    id: int
    parent_id: int | None
    mutation_kind: str
    parent_fitness_at_birth: float | None
    fitness: float | None = None


@dataclass(frozen=True)
class EvolutionConfig:
    controller_kind: str = "modular"
    mu: int = 16
    lambda_: int = 16
    generations: int = 100
    p_body_mutation: float = 0.5
    controller_sigma: float = 0.1
    mode: str = MODE_CO_OPTIMIZE
    fixed_morphology: Morphology | None = None
    catalog: tuple[Morphology, ...] | None = None
    master_seed: int = 0
    workers: int = 1
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mu < 1 or self.lambda_ < 1:
            raise ValueError("mu and lambda must be >= 1")
        if not 0.0 <= self.p_body_mutation <= 1.0:
            raise ValueError("p_body_mutation must be in [0, 1]")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.mode == MODE_FIXED_BODY and self.fixed_morphology is None:
            raise ValueError("fixed-body mode needs a fixed_morphology")
        if self.mode == MODE_MULTI_BODY and not self.catalog:
            raise ValueError("multi-body mode needs a non-empty catalog")

    @property
    def brain_only(self) -> bool:
        return self.mode != MODE_CO_OPTIMIZE


@dataclass(frozen=True)
class OffspringRecord:
    id: int
    parent_id: int | None
    mutation_kind: str
    fitness: float
    parent_fitness_at_birth: float | None
    success: bool


@dataclass(frozen=True)
class GenerationLog:
    generation: int
    best_fitness: float
    mean_fitness: float
    pool_size: int
    records: tuple[OffspringRecord, ...]

    @property
    def n_body_success(self) -> int:
        return sum(1 for r in self.records if r.mutation_kind == KIND_BODY and r.success)

    @property
    def n_brain_success(self) -> int:
        return sum(1 for r in self.records if r.mutation_kind == KIND_BRAIN and r.success)

    @property
    def n_body_attempted(self) -> int:
        return sum(1 for r in self.records if r.mutation_kind == KIND_BODY)

    @property
    def n_brain_attempted(self) -> int:
        return sum(1 for r in self.records if r.mutation_kind == KIND_BRAIN)


@dataclass
class RunArtifacts:
    champion: Individual
    logs: list[GenerationLog]
    lineage: dict[int, OffspringRecord]
    final_population: list[Individual]
    config: EvolutionConfig

    @property
    def best_so_far_series(self) -> list[float]:
        """Running best fitness: index 0 = initial population, then one entry
        per generation."""
        series = [self.lineage_initial_best()]
        for log in self.logs:
            series.append(max(series[-1], log.best_fitness))
        return series

    def lineage_initial_best(self) -> float:
        init = [r.fitness for r in self.lineage.values() if r.parent_id is None
                and r.id < self.config.mu]
        return max(init)


def dominates(a: Individual, b: Individual) -> bool:
    """(min age, max fitness) dominance with at least one strict inequality."""
    return (a.age <= b.age and a.fitness >= b.fitness
            and (a.age < b.age or a.fitness > b.fitness))


def pareto_rank(pool: list[Individual]) -> list[list[Individual]]:
    """Non-dominated sorting; fronts ordered best-first."""
    for ind in pool:
        if ind.fitness is None:
            raise ValueError(f"individual {ind.id} has no fitness")
    n = len(pool)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    domination_count = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(pool[i], pool[j]):
                dominated_by[i].append(j)
                domination_count[j] += 1
            elif dominates(pool[j], pool[i]):
                dominated_by[j].append(i)
                domination_count[i] += 1
    fronts: list[list[Individual]] = []
    current = [i for i in range(n) if domination_count[i] == 0]
    while current:
        fronts.append([pool[i] for i in current])
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                domination_count[j] -= 1
                if domination_count[j] == 0:
                    nxt.append(j)
        current = sorted(nxt)
    return fronts


def select_survivors(pool: list[Individual], mu: int) -> list[Individual]:
    """Fill from Pareto fronts; the last partial front is taken highest
    fitness first (ties: lower age, then lower id)."""
    if mu >= len(pool):
        return list(pool)
    survivors: list[Individual] = []
    for front in pareto_rank(pool):
        if len(survivors) + len(front) <= mu:
            survivors.extend(front)
        else:
            front = sorted(front, key=lambda ind: (-ind.fitness, ind.age, ind.id))
            survivors.extend(front[: mu - len(survivors)])
            break
    return survivors


def make_offspring(parent: Individual, cfg: EvolutionConfig,
                   rng: np.random.Generator, new_id: int) -> Individual:
    """Mutate exactly one genome half; the other is shared with the parent.

    Fixed-body and multi-body modes always mutate the brain and do not draw
    the body/brain choice, so a one-body catalog reproduces fixed-body runs
    bit for bit. A failed body mutation falls back to a brain mutation to
    keep the offspring count unconditional.
    """
    morph, ctrl = parent.morphology, parent.controller
    kind = KIND_BRAIN
    if not cfg.brain_only and rng.random() < cfg.p_body_mutation:
        try:
            morph = mutate_morphology(parent.morphology, rng)
            kind = KIND_BODY
        except MutationFailedError:
            ctrl = mutate_controller(parent.controller, rng, cfg.controller_sigma)
    else:
        ctrl = mutate_controller(parent.controller, rng, cfg.controller_sigma)
    return Individual(
        morphology=morph,
        controller=ctrl,
        age=0,
        id=new_id,
        parent_id=parent.id,
        mutation_kind=kind,
        parent_fitness_at_birth=parent.fitness,
    )


def _generator(master_seed: int, generation: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, generation, slot]))


def _fresh_individual(cfg: EvolutionConfig, rng: np.random.Generator,
                      new_id: int) -> Individual:
    if cfg.mode == MODE_CO_OPTIMIZE:
        morph = random_morphology(rng)
    elif cfg.mode == MODE_FIXED_BODY:
        morph = cfg.fixed_morphology
    else:
        morph = cfg.catalog[0]
    return Individual(
        morphology=morph,
        controller=init_controller(cfg.controller_kind, rng),
        age=0,
        id=new_id,
        parent_id=None,
        mutation_kind=KIND_FRESH,
        parent_fitness_at_birth=None,
    )


def evaluation_bodies(cfg: EvolutionConfig, ind: Individual) -> tuple[Morphology, ...]:
    """Bodies an individual is scored on; fitness is the minimum over them."""
    if cfg.mode == MODE_CO_OPTIMIZE:
        return (ind.morphology,)
    if cfg.mode == MODE_FIXED_BODY:
        return (cfg.fixed_morphology,)
    return tuple(cfg.catalog)


def _evaluate_job(job) -> float:
    bodies, controller, episode_cfg, physics_cfg, obs_cfg = job
    return min(
        evaluate_fitness(body, controller, episode_cfg, physics_cfg, obs_cfg)
        for body in bodies
    )


class Evaluator:
    """Evaluates batches of (bodies, controller) jobs, optionally in a worker
    pool. Results are order-preserving and independent of worker count."""

    def __init__(self, cfg: EvolutionConfig):
        self.episode = cfg.episode
        self.physics = cfg.physics
        self.observation = cfg.observation
        self.n_evaluations = 0
        self._pool = Pool(cfg.workers) if cfg.workers > 1 else None

    def evaluate(self, jobs: list[tuple[tuple[Morphology, ...], ControllerGenome]]) -> list[float]:
        packed = [
            (bodies, ctrl, self.episode, self.physics, self.observation)
            for bodies, ctrl in jobs
        ]
        self.n_evaluations += len(packed)
        if self._pool is None:
            return [_evaluate_job(job) for job in packed]
        return self._pool.map(_evaluate_job, packed)

    def close(self):
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def evolve_generation(population: list[Individual], cfg: EvolutionConfig,
                      generation: int, next_id: int,
                      evaluator: Evaluator) -> tuple[list[Individual], GenerationLog, int]:
    """One generation step; returns (survivors, log, next free id)."""
    if len(population) != cfg.mu:
        raise ValueError(f"expected a population of {cfg.mu}, got {len(population)}")
    for ind in population:
        ind.age += 1

    new: list[Individual] = []
    for slot in range(cfg.lambda_):
        rng = _generator(cfg.master_seed, generation, slot)
        parent = population[int(rng.integers(len(population)))]
        new.append(make_offspring(parent, cfg, rng, next_id))
        next_id += 1
    fresh_rng = _generator(cfg.master_seed, generation, cfg.lambda_)
    new.append(_fresh_individual(cfg, fresh_rng, next_id))
    next_id += 1

    fitnesses = evaluator.evaluate(
        [(evaluation_bodies(cfg, ind), ind.controller) for ind in new])
    for ind, fit in zip(new, fitnesses):
        ind.fitness = float(fit)

    records = tuple(
        OffspringRecord(
            id=ind.id,
            parent_id=ind.parent_id,
            mutation_kind=ind.mutation_kind,
            fitness=ind.fitness,
            parent_fitness_at_birth=ind.parent_fitness_at_birth,
            success=(ind.parent_fitness_at_birth is not None
                     and ind.fitness > ind.parent_fitness_at_birth),
        )
        for ind in new
    )

    pool = population + new
    assert len(pool) == cfg.mu + cfg.lambda_ + 1
    survivors = select_survivors(pool, cfg.mu)
    log = GenerationLog(
        generation=generation,
        best_fitness=max(ind.fitness for ind in pool),
        mean_fitness=float(np.mean([ind.fitness for ind in survivors])),
        pool_size=len(pool),
        records=records,
    )
    return survivors, log, next_id


def initial_population(cfg: EvolutionConfig, evaluator: Evaluator) -> list[Individual]:
    population = []
    for i in range(cfg.mu):
        rng = _generator(cfg.master_seed, 0, i)
        ind = _fresh_individual(cfg, rng, i)
        population.append(ind)
    fitnesses = evaluator.evaluate(
        [(evaluation_bodies(cfg, ind), ind.controller) for ind in population])
    for ind, fit in zip(population, fitnesses):
        ind.fitness = float(fit)
    return population


def run_evolution(cfg: EvolutionConfig, on_generation=None) -> RunArtifacts:
    """Full run: initialize, iterate generations, track the best-ever champion.

    `on_generation(generation, log, population, champion)` is called after
    every generation for logging and checkpointing.
    """
    with Evaluator(cfg) as evaluator:
        population = initial_population(cfg, evaluator)
        lineage: dict[int, OffspringRecord] = {
            ind.id: OffspringRecord(ind.id, None, KIND_FRESH, ind.fitness, None, False)
            for ind in population
        }
        champion = dataclasses.replace(max(population, key=lambda i: i.fitness))
        logs: list[GenerationLog] = []
        next_id = cfg.mu
        for generation in range(1, cfg.generations + 1):
            population, log, next_id = evolve_generation(
                population, cfg, generation, next_id, evaluator)
            for record in log.records:
                lineage[record.id] = record
            logs.append(log)
            best = max(population, key=lambda i: i.fitness)
            if best.fitness > champion.fitness:
                champion = dataclasses.replace(best)
            if on_generation is not None:
                on_generation(generation, log, population, champion)
    return RunArtifacts(
        champion=champion,
        logs=logs,
        lineage=lineage,
        final_population=population,
        config=cfg,
    )
