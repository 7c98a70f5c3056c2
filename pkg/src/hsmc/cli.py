"""Experiment driver.

Subcommands:

* ``run <config.yaml>`` parses a run recipe, executes the requested
  algorithm (mh, hmc, smc or hsmc) and writes ``particles.csv``,
  ``report.json`` and, for 2-d targets, ``grid.csv`` into the output
  directory.
* ``gen-data <kind> <n> <seed> <out>`` writes benchmark datasets.

Outputs contain no timestamps and floats are written with full
round-trip precision, so identical configs and seeds produce
byte-identical files regardless of ``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .core import BoxConstraints, DegenerateWeightsError, RandomSource, TargetDensity
from .kernels import HmcConfig, MhConfig, hmc_step, mh_step
from .smc import (
    InitialDistribution,
    IterationRecord,
    RunReport,
    SmcConfig,
    annealing_sequence,
    blockwise_sequence,
    compare_groups,
    diag_gaussian_initial,
    run_smc,
    tempering_sequence,
    uniform_box_initial,
)
from .targets import (
    LogitData,
    dropwave,
    gaussian,
    rosenbrock,
    sample_dropwave_data,
    sample_smiley_data,
    simulate_logit_data,
    smiley,
    nonlinear_logit_loglik,
)

__all__ = ["RunConfig", "ConfigError", "parse_config", "run", "generate_data", "main"]

ALGORITHMS = ("mh", "hmc", "smc", "hsmc")
DATA_KINDS = ("smiley", "dropwave", "logit")
GRID_RESOLUTION = 101


class ConfigError(ValueError):
    """A run configuration violates a contract; the message names the field."""


@dataclass(frozen=True)
class RunConfig:
    """Validated run recipe; see the repository README for the file format."""

    algorithm: str
    seed: int
    output: Path
    base_dir: Path
    kernel: HmcConfig | MhConfig
    n_particles: int = 0
    n_groups: int = 1
    mutation_steps: int = 1
    iterations: int = 0
    resampling: str = "multinomial"
    threads: int = 1
    record_all: bool = False
    start: tuple[float, ...] | None = None
    target_spec: dict | None = None
    sequence_spec: dict | None = None
    initial_spec: dict | None = None
    grid_spec: dict | None = None

    @property
    def weight_mode(self) -> str:
        return "loo_kde_ratio" if self.algorithm == "hsmc" else "theoretical_ratio"


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"{context}{key}: missing required field")
    return mapping[key]


def _as_int(value, field: str, minimum: int | None = None) -> int:
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{field}: expected an integer, got {value!r}") from None
    if minimum is not None and out < minimum:
        raise ConfigError(f"{field}: must be at least {minimum}")
    return out


def _as_vector(value, field: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{field}: expected a list of numbers") from None
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError(f"{field}: expected a nonempty list of numbers")
    return arr


def _build_kernel(spec, context: str = "kernel.") -> HmcConfig | MhConfig:
    if not isinstance(spec, dict):
        raise ConfigError("kernel: expected a mapping")
    ktype = _require(spec, "type", context)
    try:
        if ktype == "hmc":
            return HmcConfig(
                mass_diag=np.asarray(spec.get("mass_diag", 1.0), dtype=float),
                leapfrog_steps=_as_int(spec.get("leapfrog_steps", 20), context + "leapfrog_steps"),
                step_size=float(spec.get("step_size", 0.05)),
            )
        if ktype == "mh":
            return MhConfig(proposal_scale=float(spec.get("proposal_scale", 1.0)))
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{context}{err}") from err
    raise ConfigError(f"{context}type: unknown kernel type {ktype!r}")


def parse_config(path) -> RunConfig:
    """Read and validate a YAML run recipe.

    Contract violations raise :class:`ConfigError` naming the offending
    field; a missing file raises FileNotFoundError.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping at the top level")
    base_dir = path.parent

    algorithm = _require(raw, "algorithm", "")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm: unknown algorithm {algorithm!r}")
    seed = _as_int(_require(raw, "seed", ""), "seed", minimum=0)
    output = Path(_require(raw, "output", ""))
    if not output.is_absolute():
        output = base_dir / output
    kernel = _build_kernel(_require(raw, "kernel", ""))

    threads = _as_int(raw.get("threads", 1), "threads", minimum=1)
    record_all = bool(raw.get("record_all", False))
    resampling = raw.get("resampling", "multinomial")
    if resampling not in ("multinomial", "systematic"):
        raise ConfigError(f"resampling: unknown scheme {resampling!r}")

    target_spec = raw.get("target")
    sequence_spec = raw.get("sequence")
    initial_spec = raw.get("initial")
    grid_spec = raw.get("grid")

    if algorithm in ("mh", "hmc"):
        if target_spec is None:
            raise ConfigError("target: required for mh/hmc runs")
        iterations = _as_int(_require(raw, "iterations", ""), "iterations", minimum=1)
        n_groups = _as_int(raw.get("groups", 1), "groups", minimum=1)
        n_particles = 0
        mutation_steps = 1
        start = raw.get("start")
        start = tuple(float(v) for v in _as_vector(start, "start")) if start is not None else None
        if isinstance(kernel, MhConfig) and algorithm == "hmc":
            raise ConfigError("kernel.type: hmc runs need an hmc kernel")
        if isinstance(kernel, HmcConfig) and algorithm == "mh":
            raise ConfigError("kernel.type: mh runs need an mh kernel")
    else:
        if sequence_spec is None:
            raise ConfigError("sequence: required for smc/hsmc runs")
        if initial_spec is None:
            raise ConfigError("initial: required for smc/hsmc runs")
        iterations = 0
        start = None
        n_particles = _as_int(_require(raw, "particles", ""), "particles", minimum=2)
        n_groups = _as_int(raw.get("groups", 1), "groups", minimum=1)
        mutation_steps = _as_int(raw.get("mutation_steps", 1), "mutation_steps", minimum=1)

    config = RunConfig(
        algorithm=algorithm,
        seed=seed,
        output=output,
        base_dir=base_dir,
        kernel=kernel,
        n_particles=n_particles,
        n_groups=n_groups,
        mutation_steps=mutation_steps,
        iterations=iterations,
        resampling=resampling,
        threads=threads,
        record_all=record_all,
        start=start,
        target_spec=target_spec,
        sequence_spec=sequence_spec,
        initial_spec=initial_spec,
        grid_spec=grid_spec,
    )
    # fail fast on malformed specs and missing data files
    if target_spec is not None:
        _build_target(config)
    if initial_spec is not None:
        _build_initial(config)
    if sequence_spec is not None:
        _check_sequence_spec(config)
    return config


def _resolve_data_path(config: RunConfig, value, field: str) -> Path:
    data_path = Path(value)
    if not data_path.is_absolute():
        data_path = config.base_dir / data_path
    if not data_path.is_file():
        raise ConfigError(f"{field}: data file not found: {data_path}")
    return data_path


def _build_target(config: RunConfig) -> TargetDensity:
    spec = config.target_spec
    if not isinstance(spec, dict):
        raise ConfigError("target: expected a mapping")
    name = _require(spec, "name", "target.")
    if name == "rosenbrock":
        return rosenbrock()
    if name == "smiley":
        return smiley()
    if name == "dropwave":
        return dropwave()
    if name == "gaussian":
        mean = _as_vector(_require(spec, "mean", "target."), "target.mean")
        cov = _as_vector(_require(spec, "cov_diag", "target."), "target.cov_diag")
        try:
            return gaussian(mean, cov)
        except ValueError as err:
            raise ConfigError(f"target.cov_diag: {err}") from err
    if name == "logit":
        data_path = _resolve_data_path(config, _require(spec, "data", "target."), "target.data")
        return nonlinear_logit_loglik(LogitData.from_csv(data_path))
    raise ConfigError(f"target.name: unknown target {name!r}")


def _build_initial(config: RunConfig) -> InitialDistribution:
    spec = config.initial_spec
    if not isinstance(spec, dict):
        raise ConfigError("initial: expected a mapping")
    try:
        if "mean" in spec:
            return diag_gaussian_initial(
                _as_vector(_require(spec, "mean", "initial."), "initial.mean"),
                _as_vector(_require(spec, "sigma", "initial."), "initial.sigma"),
            )
        if "lower" in spec:
            return uniform_box_initial(
                _as_vector(spec["lower"], "initial.lower"),
                _as_vector(_require(spec, "upper", "initial."), "initial.upper"),
            )
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(f"initial: {err}") from err
    raise ConfigError("initial: expected either mean/sigma or lower/upper")


def _check_sequence_spec(config: RunConfig) -> None:
    spec = config.sequence_spec
    if not isinstance(spec, dict):
        raise ConfigError("sequence: expected a mapping")
    kind = _require(spec, "kind", "sequence.")
    if kind in ("kde-blocks", "loglik-blocks"):
        _resolve_data_path(config, _require(spec, "data", "sequence."), "sequence.data")
        _as_int(_require(spec, "block_size", "sequence."), "sequence.block_size", minimum=1)
    elif kind == "tempering":
        _as_vector(_require(spec, "phis", "sequence."), "sequence.phis")
        if config.target_spec is None:
            raise ConfigError("target: required for tempering sequences")
    elif kind == "annealing":
        _as_vector(_require(spec, "gammas", "sequence."), "sequence.gammas")
        if config.target_spec is None:
            raise ConfigError("target: required for annealing sequences")
    else:
        raise ConfigError(f"sequence.kind: unknown kind {kind!r}")


def _build_sequence(config: RunConfig):
    spec = config.sequence_spec
    kind = spec["kind"]
    initial = _build_initial(config)
    try:
        if kind == "kde-blocks":
            data_path = _resolve_data_path(config, spec["data"], "sequence.data")
            rows = np.genfromtxt(data_path, delimiter=",", names=True)
            points = np.column_stack([np.atleast_1d(rows["x"]), np.atleast_1d(rows["y"])])
            constraints = None
            if "constraints" in spec:
                cons = spec["constraints"]
                constraints = BoxConstraints(
                    _as_vector(_require(cons, "lower", "sequence.constraints."),
                               "sequence.constraints.lower"),
                    _as_vector(_require(cons, "upper", "sequence.constraints."),
                               "sequence.constraints.upper"),
                )
            return blockwise_sequence(
                "kde", points, int(spec["block_size"]),
                constraints=constraints, initial=initial,
            )
        if kind == "loglik-blocks":
            data_path = _resolve_data_path(config, spec["data"], "sequence.data")
            return blockwise_sequence(
                "loglik", LogitData.from_csv(data_path), int(spec["block_size"]),
                initial=initial,
            )
        if kind == "tempering":
            return tempering_sequence(
                initial, _build_target(config), [float(p) for p in spec["phis"]]
            )
        if kind == "annealing":
            return annealing_sequence(
                _build_target(config), [float(g) for g in spec["gammas"]], initial=initial
            )
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(f"sequence: {err}") from err
    raise ConfigError(f"sequence.kind: unknown kind {kind!r}")


def _float_repr(x: float) -> str:
    return repr(float(x))


def _write_particles(path: Path, dim: int, rows) -> None:
    header = ["group", "iteration", "particle_id"]
    header += [f"x{d}" for d in range(dim)]
    header += ["weight", "accepted"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for group, iteration, pid, coords, weight, accepted in rows:
            writer.writerow(
                [group, iteration, pid]
                + [_float_repr(c) for c in coords]
                + [_float_repr(weight), int(accepted)]
            )


def _write_grid(path: Path, target: TargetDensity, lower, upper, resolution: int) -> None:
    xs = np.linspace(lower[0], upper[0], resolution)
    ys = np.linspace(lower[1], upper[1], resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack([gx.ravel(), gy.ravel()])
    values = np.empty(points.shape[0])
    for lo in range(0, points.shape[0], 1024):
        hi = min(lo + 1024, points.shape[0])
        values[lo:hi] = target.log_f(points[lo:hi])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "log_f"])
        for (x, y), v in zip(points, values):
            writer.writerow([_float_repr(x), _float_repr(y), _float_repr(v)])


def _grid_bounds(config: RunConfig, target: TargetDensity, positions: np.ndarray):
    spec = config.grid_spec or {}
    resolution = _as_int(spec.get("resolution", GRID_RESOLUTION), "grid.resolution", minimum=2)
    if "lower" in spec or "upper" in spec:
        lower = _as_vector(_require(spec, "lower", "grid."), "grid.lower")
        upper = _as_vector(_require(spec, "upper", "grid."), "grid.upper")
        return lower, upper, resolution
    box = target.constraints
    if box is not None and np.all(np.isfinite(box.lower)) and np.all(np.isfinite(box.upper)):
        return box.lower, box.upper, resolution
    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    margin = 0.1 * np.maximum(hi - lo, 1e-6)
    return lo - margin, hi + margin, resolution


def _report_jsonable(config: RunConfig, report: RunReport) -> dict:
    out = {
        "algorithm": config.algorithm,
        "seed": config.seed,
        "n_particles": report.n_particles,
        "n_groups": report.n_groups,
        "n_iterations": report.n_iterations,
        "rows": [r.to_jsonable() for r in report.rows],
    }
    out["group_divergence"] = compare_groups(report) if report.n_groups >= 2 else None
    return out


def _run_mcmc(config: RunConfig) -> int:
    target = _build_target(config)
    start = np.array(config.start if config.start is not None else np.zeros(target.dim))
    if start.shape != (target.dim,):
        raise ConfigError(f"start: expected {target.dim} coordinates")
    if not np.isfinite(target.log_f(start)):
        raise ConfigError("start: zero density at the starting position")
    step = hmc_step if config.algorithm == "hmc" else mh_step
    root = RandomSource(config.seed)

    particle_rows = []
    report_rows = []
    final_positions = []
    for j in range(config.n_groups):
        gen = root.derive(j).generator()
        pos = start
        chain = [pos]
        accepted_flags = [True]
        acc = 0
        for _ in range(config.iterations):
            out = step(target, pos, config.kernel, gen)
            pos = out.new_position
            chain.append(pos)
            accepted_flags.append(out.accepted)
            acc += out.accepted
        samples = np.array(chain)
        final_positions.append(pos)
        for i, (p, a) in enumerate(zip(samples, accepted_flags)):
            particle_rows.append((j, i, 0, p, 1.0, a))
        mean = samples.mean(axis=0)
        cov = samples.var(axis=0)
        report_rows.append(
            IterationRecord(
                group=j,
                iteration=config.iterations,
                acceptance_count=acc,
                ess=float(samples.shape[0]),
                weight_min=1.0 / samples.shape[0],
                weight_max=1.0 / samples.shape[0],
                mean=mean,
                cov_diag=cov,
            )
        )
        all_samples = samples if j == 0 else np.vstack([all_samples, samples])

    report = RunReport(
        n_particles=config.iterations + 1,
        n_groups=config.n_groups,
        n_iterations=config.iterations,
        rows=tuple(report_rows),
    )
    _write_outputs(config, target, particle_rows, report, all_samples)
    return 0


def _run_sequential(config: RunConfig) -> int:
    sequence = _build_sequence(config)
    smc_config = SmcConfig(
        n_particles=config.n_particles,
        mutation=config.kernel,
        n_groups=config.n_groups,
        mutation_steps=config.mutation_steps,
        weight_mode=config.weight_mode,
        resampling=config.resampling,
        n_threads=config.threads,
    )
    result = run_smc(sequence, smc_config, RandomSource(config.seed), keep_history=True)

    particle_rows = []
    for j, group_history in enumerate(result.history):
        recorded = enumerate(group_history) if config.record_all else [
            (len(group_history) - 1, group_history[-1])
        ]
        for t, (ens, accepted) in recorded:
            for pid in range(ens.n_particles):
                particle_rows.append(
                    (j, ens.iteration_index, pid, ens.positions[pid],
                     ens.weights[pid], bool(accepted[pid]))
                )
    final_target = sequence.stages[-1]
    cloud = np.vstack([ens.positions for ens in result.ensembles])
    _write_outputs(config, final_target, particle_rows, result.report, cloud)
    return 0


def _write_outputs(config, target, particle_rows, report, cloud) -> None:
    config.output.mkdir(parents=True, exist_ok=True)
    _write_particles(config.output / "particles.csv", target.dim, particle_rows)
    with open(config.output / "report.json", "w") as fh:
        json.dump(_report_jsonable(config, report), fh, indent=2)
        fh.write("\n")
    if target.dim == 2:
        lower, upper, resolution = _grid_bounds(config, target, cloud)
        _write_grid(config.output / "grid.csv", target, lower, upper, resolution)


def run(config: RunConfig) -> int:
    """Execute a validated run; returns the process exit status."""
    try:
        if config.algorithm in ("mh", "hmc"):
            return _run_mcmc(config)
        return _run_sequential(config)
    except DegenerateWeightsError as err:
        stage = err.stage if err.stage is not None else "?"
        print(f"error: degenerate weights at stage {stage}: {err}", file=sys.stderr)
        return 2


def generate_data(kind: str, n: int, seed: int, out) -> int:
    """Write a benchmark dataset as CSV; returns the process exit status."""
    if kind not in DATA_KINDS:
        raise ConfigError(f"kind: unknown dataset kind {kind!r}")
    if n < 1:
        raise ConfigError("n: must be at least 1")
    if seed < 0:
        raise ConfigError("seed: must be nonnegative")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rng = RandomSource(seed)
    if kind == "logit":
        simulate_logit_data(n, (3.0, 3.0), rng).to_csv(out)
        return 0
    points = sample_smiley_data(n, rng) if kind == "smiley" else sample_dropwave_data(n, rng)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"])
        for x, y in points:
            writer.writerow([_float_repr(x), _float_repr(y)])
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hsmc", description="Sequential sampler experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="execute a run recipe")
    run_parser.add_argument("config", help="path to a YAML run configuration")
    run_parser.add_argument("--record-all", action="store_true",
                            help="record every iteration's particles, not just the final ones")
    run_parser.add_argument("--threads", type=int, default=None,
                            help="worker threads for particle groups (outputs are unaffected)")

    gen_parser = sub.add_parser("gen-data", help="generate a benchmark dataset")
    gen_parser.add_argument("kind", choices=DATA_KINDS)
    gen_parser.add_argument("n", type=int)
    gen_parser.add_argument("seed", type=int)
    gen_parser.add_argument("out")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = parse_config(args.config)
            overrides = {}
            if args.record_all:
                overrides["record_all"] = True
            threads = args.threads
            env_threads = os.environ.get("HSMC_THREADS")
            if env_threads is not None:
                threads = _as_int(env_threads, "HSMC_THREADS", minimum=1)
            if threads is not None:
                overrides["threads"] = threads
            if overrides:
                from dataclasses import replace

                config = replace(config, **overrides)
            return run(config)
        if args.command == "gen-data":
            return generate_data(args.kind, args.n, args.seed, args.out)
    except (ConfigError, FileNotFoundError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
