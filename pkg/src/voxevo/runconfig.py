"""Run configuration files.

The format is plain sectioned key=value text:

    # comment
    [run]
    seed = 42
    out = runs/demo

    [evolution]
    mu = 16
    lambda = 16

Sections and keys are fixed by the schema below; unknown names, duplicate
keys, and malformed values are rejected with the offending line number.
Every key has a default, so the empty file is a valid configuration.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .evolution import MODES, EvolutionConfig
from .experiments import CATALOG_ORDER, CatalogError, default_catalog, load_catalog
from .morphology import Morphology
from .physics import ContactParams, PhysicsConfig
from .sensing import ObservationConfig
from .walker import EpisodeConfig


class ConfigError(Exception):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        self.message = message
        where = path or "<config>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_int_list(raw: str) -> tuple[int, ...]:
    if not raw.strip():
        return ()
    return tuple(int(part.strip()) for part in raw.split(","))


def _parse_str_list(raw: str) -> tuple[str, ...]:
    if not raw.strip():
        return ()
    return tuple(part.strip() for part in raw.split(","))


_SCHEMA: dict[str, dict[str, object]] = {
    "run": {
        "seed": int,
        "out": str,
        "workers": int,
        "mode": str,
        "paradigm": str,
        "generations": int,
    },
    "evolution": {
        "mu": int,
        "lambda": int,
        "p_body_mutation": float,
        "controller_sigma": float,
        "checkpoint_every": int,
    },
    "physics": {
        "rigid_stiffness": float,
        "soft_stiffness": float,
        "actuator_stiffness": float,
        "damping_ratio": float,
        "gravity": float,
        "contact_normal_stiffness": float,
        "contact_normal_damping": float,
        "contact_friction": float,
        "physics_dt": float,
        "substeps_per_env_step": int,
        "actuation_min": float,
        "actuation_max": float,
    },
    "observation": {
        "neighborhood_distance": int,
        "velocity_clamp": float,
        "time_period": int,
        "normalize_volume": _parse_bool,
    },
    "episode": {
        "max_steps": int,
        "action_repeat": int,
        "terrain_end_x": float,
        "step_penalty": float,
        "shift_constant": float,
        "divergence_floor": float,
    },
    "experiment": {
        "n_runs": int,
        "distances": _parse_int_list,
        "samples_per_distance": int,
        "one_shot_lambda": int,
        "fixed_body": str,
        "catalog_file": str,
        "catalog_bodies": _parse_str_list,
    },
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str | None = None
    workers: int | None = None
    mode: str = "co-optimize"
    paradigm: str = "modular"
    generations: int = 100
    mu: int = 16
    lambda_: int = 16
    p_body_mutation: float = 0.5
    controller_sigma: float = 0.1
    checkpoint_every: int = 0
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    n_runs: int = 1
    distances: tuple[int, ...] = (1, 2, 3)
    samples_per_distance: int = 20
    one_shot_lambda: int = 16
    fixed_body: str = "biped"
    catalog_file: str | None = None
    catalog_bodies: tuple[str, ...] = CATALOG_ORDER

    def catalog(self) -> dict[str, Morphology]:
        if self.catalog_file:
            return load_catalog(self.catalog_file)
        return default_catalog()

    def evolution_config(self, workers: int, seed: int | None = None) -> EvolutionConfig:
        catalog = self.catalog()
        fixed = None
        bodies = None
        if self.mode == "fixed-body":
            if self.fixed_body not in catalog:
                raise ConfigError(
                    f"fixed_body {self.fixed_body!r} not in catalog "
                    f"{sorted(catalog)}")
            fixed = catalog[self.fixed_body]
        elif self.mode == "multi-body":
            missing = [b for b in self.catalog_bodies if b not in catalog]
            if missing:
                raise ConfigError(f"catalog_bodies not in catalog: {missing}")
            if not self.catalog_bodies:
                raise ConfigError("multi-body mode needs catalog_bodies")
            bodies = tuple(catalog[b] for b in self.catalog_bodies)
        return EvolutionConfig(
            controller_kind=self.paradigm,
            mu=self.mu,
            lambda_=self.lambda_,
            generations=self.generations,
            p_body_mutation=self.p_body_mutation,
            controller_sigma=self.controller_sigma,
            mode=self.mode,
            fixed_morphology=fixed,
            catalog=bodies,
            master_seed=seed if seed is not None else self.seed,
            workers=workers,
            checkpoint_every=self.checkpoint_every,
            episode=self.episode,
            physics=self.physics,
            observation=self.observation,
        )


def _read_pairs(text: str, path: str) -> dict[str, dict[str, tuple[str, int]]]:
    """Sections of key -> (raw value, line number), validated against the schema."""
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: str | None = None
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _SCHEMA:
                raise ConfigError(f"unknown section [{name}]", path, line_no)
            current = name
            sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value' or '[section]'", path, line_no)
        if current is None:
            raise ConfigError("key outside any section", path, line_no)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SCHEMA[current]:
            raise ConfigError(f"unknown key {key!r} in section [{current}]", path, line_no)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r}", path, line_no)
        sections[current][key] = (value, line_no)
    return sections


def _convert(sections: dict[str, dict[str, tuple[str, int]]],
             path: str) -> dict[str, dict[str, object]]:
    typed: dict[str, dict[str, object]] = {}
    for section, pairs in sections.items():
        typed[section] = {}
        for key, (raw, line_no) in pairs.items():
            parser = _SCHEMA[section][key]
            try:
                typed[section][key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", path, line_no) from exc
    return typed


def parse_config(text: str, path: str = "<config>") -> RunConfig:
    sections = _read_pairs(text, path)
    typed = _convert(sections, path)
    run = typed.get("run", {})
    evo = typed.get("evolution", {})
    exp = typed.get("experiment", {})

    def build(section: str, cls, rename: dict[str, str] | None = None):
        kwargs = dict(typed.get(section, {}))
        if rename:
            for src, dst in rename.items():
                if src in kwargs:
                    kwargs[dst] = kwargs.pop(src)
        first_line = min(
            (ln for _, ln in sections.get(section, {}).values()), default=None)
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"invalid [{section}] settings: {exc}", path, first_line) from exc

    physics_kwargs = dict(typed.get("physics", {}))
    contact = ContactParams(
        normal_stiffness=physics_kwargs.pop(
            "contact_normal_stiffness", ContactParams.normal_stiffness),
        normal_damping=physics_kwargs.pop(
            "contact_normal_damping", ContactParams.normal_damping),
        friction=physics_kwargs.pop("contact_friction", ContactParams.friction),
    )
    first_physics_line = min(
        (ln for _, ln in sections.get("physics", {}).values()), default=None)
    try:
        physics = PhysicsConfig(contact=contact, **physics_kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid [physics] settings: {exc}", path,
                          first_physics_line) from exc

    observation = build("observation", ObservationConfig)
    episode = build("episode", EpisodeConfig)

    mode = run.get("mode", "co-optimize")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}", path,
                          sections.get("run", {}).get("mode", (None, None))[1])
    paradigm = run.get("paradigm", "modular")
    if paradigm not in ("modular", "global"):
        raise ConfigError(
            f"paradigm must be 'modular' or 'global', got {paradigm!r}", path,
            sections.get("run", {}).get("paradigm", (None, None))[1])

    try:
        return RunConfig(
            seed=run.get("seed", 0),
            out=run.get("out"),
            workers=run.get("workers"),
            mode=mode,
            paradigm=paradigm,
            generations=run.get("generations", 100),
            mu=evo.get("mu", 16),
            lambda_=evo.get("lambda", 16),
            p_body_mutation=evo.get("p_body_mutation", 0.5),
            controller_sigma=evo.get("controller_sigma", 0.1),
            checkpoint_every=evo.get("checkpoint_every", 0),
            physics=physics,
            observation=observation,
            episode=episode,
            n_runs=exp.get("n_runs", 1),
            distances=exp.get("distances", (1, 2, 3)),
            samples_per_distance=exp.get("samples_per_distance", 20),
            one_shot_lambda=exp.get("one_shot_lambda", 16),
            fixed_body=exp.get("fixed_body", "biped"),
            catalog_file=exp.get("catalog_file"),
            catalog_bodies=exp.get("catalog_bodies", CATALOG_ORDER),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), path) from exc


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path) from exc
    cfg = parse_config(text, path)
    # dry-run the evolution config so semantic errors surface before any output
    try:
        cfg.evolution_config(workers=1)
    except (ValueError, CatalogError) as exc:
        raise ConfigError(str(exc), path) from exc
    return cfg


def override(cfg: RunConfig, seed: int | None = None, workers: int | None = None,
             out: str | None = None) -> RunConfig:
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if workers is not None:
        updates["workers"] = workers
    if out is not None:
        updates["out"] = out
    return dataclasses.replace(cfg, **updates) if updates else cfg
