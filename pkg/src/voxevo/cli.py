"""Command-line entry point.

Subcommands: evolve (run the EA, single run or seeded battery), transfer
(evaluate a trained champion on mutated bodies), replay (export one recorded
episode as line-delimited JSON frames), and report (summarize a finished run
directory). All randomness flows from the configured master seed; re-running
any command with the same inputs reproduces its output files byte for byte.

Files are written through `.partial` siblings and renamed when complete, so
a file without the suffix is always whole.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from .checkpoints import (
    CheckpointIntegrityError,
    atomic_write_bytes,
    load_individual,
    save_individual,
    save_population,
)
from .evolution import EvolutionConfig, OffspringRecord, run_evolution
from .experiments import (
    accounting_from_lineage,
    convergence_metrics,
    CONVERGENCE_THRESHOLDS,
    LineageIntegrityError,
    transfer_analysis,
)
from .runconfig import ConfigError, RunConfig, load_config, override
from .walker import evaluate_fitness, run_episode

GENERATIONS_CSV = "generations.csv"
LINEAGE_CSV = "lineage.csv"
CHAMPION_CKPT = "champion.ckpt"

GENERATION_COLUMNS = [
    "generation", "best_fitness", "mean_fitness",
    "n_body_success", "n_brain_success", "n_body_attempted", "n_brain_attempted",
]
LINEAGE_COLUMNS = [
    "id", "parent_id", "mutation_kind", "fitness", "parent_fitness_at_birth", "success",
]

TRANSFER_STREAM_TAG = 1001


class ReportIntegrityError(RuntimeError):
    pass


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv_atomic(path: str, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def _resolve_workers(flag: int | None, cfg_workers: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("VOXEVO_WORKERS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"VOXEVO_WORKERS is not an integer: {env!r}")
    if cfg_workers is not None:
        return cfg_workers
    return os.cpu_count() or 1


def _execute_run(run_dir: str, evo_cfg: EvolutionConfig):
    """One evolution run with streaming CSV logging and checkpoints."""
    os.makedirs(run_dir, exist_ok=True)
    gen_path = os.path.join(run_dir, GENERATIONS_CSV)
    partial = f"{gen_path}.partial"
    fh = open(partial, "w", encoding="utf-8", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(GENERATION_COLUMNS)

    def on_generation(generation, log, population, champion):
        writer.writerow([
            _fmt(log.generation), _fmt(log.best_fitness), _fmt(log.mean_fitness),
            _fmt(log.n_body_success), _fmt(log.n_brain_success),
            _fmt(log.n_body_attempted), _fmt(log.n_brain_attempted),
        ])
        fh.flush()
        if evo_cfg.checkpoint_every and generation % evo_cfg.checkpoint_every == 0:
            save_population(
                os.path.join(run_dir, f"population_gen{generation:05d}.ckpt"),
                population)
            save_individual(os.path.join(run_dir, CHAMPION_CKPT), champion)

    try:
        artifacts = run_evolution(evo_cfg, on_generation=on_generation)
    except Exception:
        fh.close()  # leaves the .partial marker behind
        raise
    fh.close()
    os.replace(partial, gen_path)

    lineage_rows = [
        [r.id, r.parent_id, r.mutation_kind, r.fitness,
         r.parent_fitness_at_birth, r.success]
        for r in sorted(artifacts.lineage.values(), key=lambda r: r.id)
    ]
    _write_csv_atomic(os.path.join(run_dir, LINEAGE_CSV), LINEAGE_COLUMNS, lineage_rows)
    save_individual(os.path.join(run_dir, CHAMPION_CKPT), artifacts.champion)
    save_population(os.path.join(run_dir, "population_final.ckpt"),
                    artifacts.final_population)
    return artifacts


def cmd_evolve(args) -> int:
    try:
        cfg = load_config(args.config)
        cfg = override(cfg, seed=args.seed, workers=args.workers, out=args.out)
        if cfg.out is None:
            raise ConfigError("no output directory: set [run] out or pass --out",
                              args.config)
        workers = _resolve_workers(args.workers, cfg.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        os.makedirs(cfg.out, exist_ok=False)
    except FileExistsError:
        print(f"error: output directory already exists: {cfg.out}", file=sys.stderr)
        return 2

    if cfg.n_runs == 1:
        artifacts = _execute_run(cfg.out, cfg.evolution_config(workers))
        print(f"champion fitness: {artifacts.champion.fitness!r}")
    else:
        best = None
        for i in range(cfg.n_runs):
            run_dir = os.path.join(cfg.out, f"run_{i:02d}")
            evo_cfg = cfg.evolution_config(workers, seed=cfg.seed + i)
            artifacts = _execute_run(run_dir, evo_cfg)
            print(f"run {i:02d} (seed {cfg.seed + i}) champion fitness: "
                  f"{artifacts.champion.fitness!r}")
            if best is None or artifacts.champion.fitness > best:
                best = artifacts.champion.fitness
        print(f"battery best champion fitness: {best!r}")
    return 0


def cmd_transfer(args) -> int:
    try:
        cfg = load_config(args.config)
        cfg = override(cfg, seed=args.seed, workers=args.workers, out=args.out)
        if cfg.out is None:
            raise ConfigError("no output directory: set [run] out or pass --out",
                              args.config)
        champion = load_individual(args.champion)
    except (ConfigError, CheckpointIntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    source_fitness = champion.fitness
    if source_fitness is None:
        source_fitness = evaluate_fitness(
            champion.morphology, champion.controller,
            cfg.episode, cfg.physics, cfg.observation)

    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, TRANSFER_STREAM_TAG]))
    samples = transfer_analysis(
        champion.morphology, champion.controller, source_fitness,
        list(cfg.distances), rng,
        samples_per_distance=cfg.samples_per_distance,
        one_shot_lambda=cfg.one_shot_lambda,
        source_id=champion.id,
        episode_cfg=cfg.episode, physics_cfg=cfg.physics, obs_cfg=cfg.observation)

    os.makedirs(cfg.out, exist_ok=True)
    rows = [
        [s.source_id, s.distance, s.neighbor.to_text().replace("\n", ""),
         s.zero_shot_fitness, s.one_shot_fitness,
         s.relative_change_zero, s.relative_change_one]
        for s in samples
    ]
    _write_csv_atomic(
        os.path.join(cfg.out, "transfer.csv"),
        ["source_id", "distance", "neighbor", "zero_shot_fitness",
         "one_shot_fitness", "relative_change_zero", "relative_change_one"],
        rows)

    lines = [f"source fitness: {source_fitness!r}", ""]
    for distance in cfg.distances:
        at_d = [s for s in samples if s.distance == distance]
        zeros = [s.relative_change_zero for s in at_d
                 if s.relative_change_zero is not None]
        ones = [s.relative_change_one for s in at_d
                if s.relative_change_one is not None]
        lines.append(f"distance {distance}: {len(at_d)} samples")
        if zeros:
            lines.append(
                f"  zero-shot relative change: mean {float(np.mean(zeros))!r} "
                f"median {float(np.median(zeros))!r}")
            lines.append(
                f"  one-shot relative change:  mean {float(np.mean(ones))!r} "
                f"median {float(np.median(ones))!r}")
        else:
            lines.append("  relative changes omitted (source fitness below guard)")
    atomic_write_bytes(os.path.join(cfg.out, "transfer_summary.txt"),
                       ("\n".join(lines) + "\n").encode("utf-8"))
    print(f"wrote {len(rows)} transfer samples to {cfg.out}")
    return 0


def cmd_replay(args) -> int:
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        champion = load_individual(args.champion)
    except (ConfigError, CheckpointIntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    result = run_episode(champion.morphology, champion.controller,
                         cfg.episode, cfg.physics, cfg.observation, record=True)
    meta = {
        "type": "meta",
        "fitness": result.fitness,
        "delta_px": None if math.isnan(result.delta_px) else result.delta_px,
        "reached_end": result.reached_end,
        "steps": result.steps_used,
        "diverged": result.diverged,
        "checkpoint_fitness": champion.fitness,
        "n_masses": int(result.trajectory[0].shape[0]),
        "morphology": champion.morphology.to_text().replace("\n", ""),
    }
    lines = [json.dumps(meta)]
    for step, frame in enumerate(result.trajectory):
        lines.append(json.dumps(
            {"type": "frame", "step": step, "positions": frame.tolist()}))
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_bytes(args.out, ("\n".join(lines) + "\n").encode("utf-8"))
    print(f"replay fitness: {result.fitness!r} ({result.steps_used} steps) -> {args.out}")
    return 0


def _read_lineage_csv(path: str) -> dict[int, OffspringRecord]:
    lineage: dict[int, OffspringRecord] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            record = OffspringRecord(
                id=int(row["id"]),
                parent_id=int(row["parent_id"]) if row["parent_id"] else None,
                mutation_kind=row["mutation_kind"],
                fitness=float(row["fitness"]),
                parent_fitness_at_birth=(float(row["parent_fitness_at_birth"])
                                         if row["parent_fitness_at_birth"] else None),
                success=row["success"] == "1",
            )
            lineage[record.id] = record
    return lineage


def _summarize_run(run_dir: str) -> dict:
    missing = [name for name in (GENERATIONS_CSV, LINEAGE_CSV, CHAMPION_CKPT)
               if not os.path.exists(os.path.join(run_dir, name))]
    if missing:
        raise ReportIntegrityError(
            f"{run_dir}: missing artifacts: {', '.join(missing)}")

    with open(os.path.join(run_dir, GENERATIONS_CSV), encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ReportIntegrityError(f"{run_dir}: {GENERATIONS_CSV} has no rows")
    generations = [int(r["generation"]) for r in rows]
    best = [float(r["best_fitness"]) for r in rows]
    best_so_far = list(np.maximum.accumulate(best))

    champion = load_individual(os.path.join(run_dir, CHAMPION_CKPT))
    lineage = _read_lineage_csv(os.path.join(run_dir, LINEAGE_CSV))
    accounting = accounting_from_lineage(lineage, champion.id)
    convergence = convergence_metrics(best_so_far)

    return {
        "run_dir": run_dir,
        "champion_fitness": champion.fitness,
        "convergence": {theta: generations[idx]
                        for theta, idx in convergence.generations_to.items()},
        "lineage_body_fraction": accounting.lineage_body_fraction,
        "population_body_fraction": accounting.population_body_fraction,
    }


def cmd_report(args) -> int:
    run_dir = args.run_dir
    try:
        if os.path.exists(os.path.join(run_dir, GENERATIONS_CSV)):
            run_dirs = [run_dir]
        else:
            run_dirs = sorted(
                os.path.join(run_dir, name) for name in os.listdir(run_dir)
                if name.startswith("run_")
                and os.path.isdir(os.path.join(run_dir, name)))
            if not run_dirs:
                raise ReportIntegrityError(
                    f"{run_dir}: no {GENERATIONS_CSV} and no run_* subdirectories")
        summaries = [_summarize_run(d) for d in run_dirs]
    except (ReportIntegrityError, CheckpointIntegrityError,
            LineageIntegrityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    header = (["run", "champion_fitness"]
              + [f"gens_to_{int(t * 100)}" for t in CONVERGENCE_THRESHOLDS]
              + ["lineage_body_fraction", "population_body_fraction"])
    rows = []
    for s in summaries:
        rows.append([os.path.basename(s["run_dir"]) or s["run_dir"],
                     s["champion_fitness"]]
                    + [s["convergence"][t] for t in CONVERGENCE_THRESHOLDS]
                    + [s["lineage_body_fraction"], s["population_body_fraction"]])
    if len(summaries) > 1:
        champs = [s["champion_fitness"] for s in summaries]
        q1, med, q3 = (float(v) for v in np.percentile(champs, [25, 50, 75]))
        aggregate = ["aggregate_median", med]
        for t in CONVERGENCE_THRESHOLDS:
            aggregate.append(float(np.median([s["convergence"][t] for s in summaries])))
        for key in ("lineage_body_fraction", "population_body_fraction"):
            vals = [s[key] for s in summaries if s[key] is not None]
            aggregate.append(float(np.median(vals)) if vals else None)
        rows.append(aggregate)

    report_csv = os.path.join(run_dir, "report.csv")
    _write_csv_atomic(report_csv, header, rows)

    lines = [f"runs: {len(summaries)}"]
    for s in summaries:
        conv = ", ".join(f"{int(t*100)}%@gen {s['convergence'][t]}"
                         for t in CONVERGENCE_THRESHOLDS)
        lines.append(f"{s['run_dir']}: champion {s['champion_fitness']!r} ({conv})")
    if len(summaries) > 1:
        lines.append(f"champion fitness median {med!r} IQR [{q1!r}, {q3!r}]")
    text = "\n".join(lines) + "\n"
    atomic_write_bytes(os.path.join(run_dir, "report.txt"), text.encode("utf-8"))
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxevo",
        description="Evolve voxel soft robots and analyze the results.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required: bool):
        p.add_argument("--config", required=config_required,
                       help="path to a run configuration file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--workers", type=int,
                       help="parallel evaluation processes "
                            "(falls back to VOXEVO_WORKERS, then CPU count)")
        p.add_argument("--out", help="override the output directory")

    p_evolve = sub.add_parser("evolve", help="run the evolutionary algorithm")
    common(p_evolve, config_required=True)
    p_evolve.set_defaults(func=cmd_evolve)

    p_transfer = sub.add_parser(
        "transfer", help="evaluate a champion controller on mutated bodies")
    common(p_transfer, config_required=True)
    p_transfer.add_argument("--champion", required=True,
                            help="champion checkpoint file")
    p_transfer.set_defaults(func=cmd_transfer)

    p_replay = sub.add_parser(
        "replay", help="export one recorded episode as JSON lines")
    p_replay.add_argument("--champion", required=True,
                          help="champion checkpoint file")
    p_replay.add_argument("--out", required=True, help="output trajectory file")
    p_replay.add_argument("--config", help="optional run configuration file")
    p_replay.set_defaults(func=cmd_replay)

    p_report = sub.add_parser(
        "report", help="summarize a finished run or battery directory")
    p_report.add_argument("run_dir", help="run directory to summarize")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
