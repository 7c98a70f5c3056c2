"""Sequential Monte Carlo engines.

A run walks an ensemble through a sequence of targets f_1 ... f_T by
repeating correction (importance reweighting), selection (resampling
with replacement) and mutation (MCMC moves under the current target).
Two weight rules are supported: the classic ratio f_t / f_{t-1} and the
kernel variant f_t / f-hat_{t-1}, where f-hat is a leave-one-out KDE of
the current particle cloud.  Independent particle groups can run in
parallel and are compared afterwards as a convergence check.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .core import (
    INIT_STREAM,
    SELECTION_STREAM,
    BoxConstraints,
    DegenerateEnsembleError,
    DegenerateWeightsError,
    Ensemble,
    RandomSource,
    TargetDensity,
    as_generator,
    make_ensemble,
    normalize_weights,
)
from .diagnostics import effective_sample_size, weighted_moments
from .kde import kde_target, loo_log_density_all, silverman_bandwidth
from .kernels import HmcConfig, KernelConfig, MhConfig, mutate_ensemble
from .targets import LogitData, gaussian, geometric_bridge, nonlinear_logit_loglik, powered

__all__ = [
    "InitialDistribution",
    "TargetSequence",
    "SmcConfig",
    "IterationRecord",
    "RunReport",
    "SmcRun",
    "diag_gaussian_initial",
    "uniform_box_initial",
    "blockwise_sequence",
    "tempering_sequence",
    "annealing_sequence",
    "correction_weights",
    "resample",
    "run_smc",
    "compare_groups",
]

WEIGHT_MODES = ("theoretical_ratio", "loo_kde_ratio")
RESAMPLING_SCHEMES = ("multinomial", "systematic")


@dataclass(frozen=True)
class InitialDistribution:
    """A start density f_0 together with an exact sampler for it."""

    density: TargetDensity
    sample: Callable[[int, np.random.Generator], np.ndarray]


def diag_gaussian_initial(mean, sigma) -> InitialDistribution:
    """Diagonal Gaussian f_0 with per-dimension standard deviations."""
    mu = np.atleast_1d(np.asarray(mean, dtype=float))
    sd = np.atleast_1d(np.asarray(sigma, dtype=float))
    if sd.shape != mu.shape:
        raise ValueError("mean and sigma must have the same length")
    if np.any(sd <= 0):
        raise ValueError("sigma must be strictly positive")
    density = gaussian(mu, sd**2)

    def sample(n: int, gen: np.random.Generator) -> np.ndarray:
        return mu + sd * gen.standard_normal((n, mu.shape[0]))

    return InitialDistribution(density, sample)


def uniform_box_initial(lower, upper) -> InitialDistribution:
    """Uniform f_0 on a finite box."""
    box = BoxConstraints(lower, upper)
    if not (np.all(np.isfinite(box.lower)) and np.all(np.isfinite(box.upper))):
        raise ValueError("uniform initial distribution needs finite bounds")
    dim = box.dim

    def batch_log_f(pos):
        return np.where(box.contains(pos), 0.0, -np.inf)

    def batch_grad(pos):
        return np.zeros_like(pos)

    def log_f(position):
        pos = np.asarray(position, dtype=float)
        out = batch_log_f(np.atleast_2d(pos))
        return float(out[0]) if pos.ndim == 1 else out

    def grad_log_f(position):
        pos = np.asarray(position, dtype=float)
        out = batch_grad(np.atleast_2d(pos))
        return out[0] if pos.ndim == 1 else out

    density = TargetDensity(dim, log_f, grad_log_f, constraints=box)

    def sample(n: int, gen: np.random.Generator) -> np.ndarray:
        return gen.uniform(box.lower, box.upper, size=(n, dim))

    return InitialDistribution(density, sample)


@dataclass(frozen=True)
class TargetSequence:
    """Ordered targets f_1 ... f_T plus the start distribution f_0."""

    stages: tuple[TargetDensity, ...]
    initial: InitialDistribution | None = None

    def __post_init__(self):
        stages = tuple(self.stages)
        if len(stages) < 1:
            raise ValueError("a target sequence needs at least one stage")
        dims = {t.dim for t in stages}
        if len(dims) != 1:
            raise ValueError("all stages must share one dimension")
        if self.initial is not None and self.initial.density.dim != stages[0].dim:
            raise ValueError("initial distribution dimension does not match the stages")
        object.__setattr__(self, "stages", stages)

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def dim(self) -> int:
        return self.stages[0].dim

    def with_initial(self, initial: InitialDistribution) -> "TargetSequence":
        return TargetSequence(self.stages, initial)


@dataclass(frozen=True)
class SmcConfig:
    """Engine parameters: ensemble sizes, mutation kernel and weight rule."""

    n_particles: int
    mutation: KernelConfig
    n_groups: int = 1
    mutation_steps: int = 1
    weight_mode: str = "theoretical_ratio"
    resampling: str = "multinomial"
    ess_threshold: float | None = None
    n_threads: int = 1

    def __post_init__(self):
        if int(self.n_particles) < 2:
            raise ValueError("n_particles must be at least 2")
        if int(self.n_groups) < 1:
            raise ValueError("n_groups must be at least 1")
        if int(self.mutation_steps) < 1:
            raise ValueError("mutation_steps must be at least 1")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.resampling not in RESAMPLING_SCHEMES:
            raise ValueError(f"resampling must be one of {RESAMPLING_SCHEMES}")
        if not isinstance(self.mutation, (HmcConfig, MhConfig)):
            raise ValueError("mutation must be an HmcConfig or MhConfig")
        if self.ess_threshold is not None:
            if not 0.0 < self.ess_threshold <= 1.0:
                raise ValueError("ess_threshold must lie in (0, 1]")
            if self.weight_mode == "loo_kde_ratio":
                raise ValueError(
                    "the leave-one-out weight rule assumes an unweighted cloud; "
                    "resampling cannot be skipped"
                )
        if int(self.n_threads) < 1:
            raise ValueError("n_threads must be at least 1")


@dataclass(frozen=True)
class IterationRecord:
    """Per (group, iteration) diagnostics."""

    group: int
    iteration: int
    acceptance_count: int
    ess: float
    weight_min: float
    weight_max: float
    mean: np.ndarray
    cov_diag: np.ndarray

    def to_jsonable(self) -> dict:
        return {
            "group": self.group,
            "iteration": self.iteration,
            "acceptance_count": self.acceptance_count,
            "ess": float(self.ess),
            "weight_min": float(self.weight_min),
            "weight_max": float(self.weight_max),
            "mean": [float(v) for v in self.mean],
            "cov_diag": [float(v) for v in self.cov_diag],
        }


@dataclass(frozen=True)
class RunReport:
    """All iteration records of a run, ordered by (group, iteration)."""

    n_particles: int
    n_groups: int
    n_iterations: int
    rows: tuple[IterationRecord, ...]

    def group_rows(self, group: int) -> list[IterationRecord]:
        return [r for r in self.rows if r.group == group]

    def final_rows(self) -> list[IterationRecord]:
        return [r for r in self.rows if r.iteration == self.n_iterations]

    def to_jsonable(self) -> dict:
        return {
            "n_particles": self.n_particles,
            "n_groups": self.n_groups,
            "n_iterations": self.n_iterations,
            "rows": [r.to_jsonable() for r in self.rows],
        }


@dataclass(frozen=True)
class SmcRun:
    """Result of a run: final ensembles per group, report, optional history.

    ``history[j]`` lists (ensemble, accepted flags) per recorded iteration
    of group j, starting with the initial draws (flags all True there).
    """

    ensembles: tuple[Ensemble, ...]
    report: RunReport
    history: tuple[tuple[tuple[Ensemble, np.ndarray], ...], ...] | None = None


def blockwise_sequence(
    kind: str,
    data,
    block_size: int,
    constraints: BoxConstraints | None = None,
    initial: InitialDistribution | None = None,
    bandwidth_factor: Callable[[int], float] | None = None,
) -> TargetSequence:
    """Stage t uses the first t blocks of the data; the last block may be short.

    kind "kde": data is an (n, d) point array and stage t is a Gaussian KDE
    of the revealed points, with per-dimension bandwidth
    sd(revealed) * n_t^(-1/5) (override the rate via ``bandwidth_factor``).
    kind "loglik": data is LogitData and stage t is the log-likelihood of
    the revealed observations.
    """
    if block_size < 1:
        raise ValueError("block_size must be at least 1")
    if kind not in ("kde", "loglik"):
        raise ValueError("kind must be 'kde' or 'loglik'")

    if kind == "loglik":
        if not isinstance(data, LogitData):
            raise ValueError("loglik sequences need LogitData")
        total = len(data)
    else:
        data = np.atleast_2d(np.asarray(data, dtype=float))
        total = data.shape[0]
    if total == 0:
        raise ValueError("data must be nonempty")

    if bandwidth_factor is None:
        bandwidth_factor = lambda n: float(n) ** (-0.2)

    stages = []
    cut = block_size
    while True:
        cut = min(cut, total)
        if kind == "kde":
            revealed = data[:cut]
            sd = revealed.std(axis=0, ddof=1) if cut > 1 else np.ones(data.shape[1])
            if np.any(sd <= 0):
                raise ValueError("revealed data has zero spread in some dimension")
            stages.append(kde_target(revealed, sd * bandwidth_factor(cut), constraints))
        else:
            stages.append(nonlinear_logit_loglik(data.subset(cut)))
        if cut == total:
            break
        cut += block_size
    return TargetSequence(tuple(stages), initial)


def tempering_sequence(
    f1: TargetDensity | InitialDistribution,
    f: TargetDensity,
    phis: Sequence[float],
    initial: InitialDistribution | None = None,
) -> TargetSequence:
    """Geometric bridge stages f^phi f1^(1-phi) for increasing phi ending at 1.

    ``f1`` may be an InitialDistribution, in which case it doubles as f_0.
    """
    if isinstance(f1, InitialDistribution):
        if initial is None:
            initial = f1
        f1 = f1.density
    phis = [float(p) for p in phis]
    if len(phis) < 1 or phis[-1] != 1.0:
        raise ValueError("phis must end at exactly 1")
    if any(not 0.0 < p <= 1.0 for p in phis):
        raise ValueError("phis must lie in (0, 1]")
    if any(b <= a for a, b in zip(phis, phis[1:])):
        raise ValueError("phis must be strictly increasing")
    stages = tuple(geometric_bridge(f1, f, p) for p in phis)
    return TargetSequence(stages, initial)


def annealing_sequence(
    f: TargetDensity,
    gammas: Sequence[float],
    initial: InitialDistribution | None = None,
) -> TargetSequence:
    """Powered stages f^gamma for strictly increasing positive gammas."""
    gammas = [float(g) for g in gammas]
    if len(gammas) < 1:
        raise ValueError("need at least one gamma")
    if any(g <= 0 for g in gammas):
        raise ValueError("gammas must be strictly positive")
    if any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gammas must be strictly increasing")
    return TargetSequence(tuple(powered(f, g) for g in gammas), initial)


def correction_weights(
    ensemble: Ensemble,
    f_next: TargetDensity,
    f_prev: TargetDensity | None,
    mode: str = "theoretical_ratio",
    loo_bandwidth=None,
) -> np.ndarray:
    """Importance weights carrying the ensemble from f_prev to f_next.

    "theoretical_ratio" uses f_next / f_prev pointwise;  "loo_kde_ratio"
    replaces the denominator with a leave-one-out KDE of the current cloud
    (bandwidth selected by the Silverman rule unless ``loo_bandwidth``
    overrides it).  Weights are computed in log space and exponentiated
    after subtracting the maximum, so only their ratios are meaningful.
    """
    if mode not in WEIGHT_MODES:
        raise ValueError(f"mode must be one of {WEIGHT_MODES}")
    log_next = np.atleast_1d(f_next.log_f(ensemble.positions))
    if mode == "theoretical_ratio":
        if f_prev is None:
            raise ValueError("theoretical weights need the previous target")
        log_prev = np.atleast_1d(f_prev.log_f(ensemble.positions))
    else:
        bandwidth = loo_bandwidth if loo_bandwidth is not None else silverman_bandwidth(ensemble)
        log_prev = loo_log_density_all(ensemble.positions, bandwidth)
    with np.errstate(invalid="ignore"):
        log_w = np.where(np.isneginf(log_next), -np.inf, log_next - log_prev)
    log_w = np.where(np.isnan(log_w), -np.inf, log_w)
    if not np.any(np.isfinite(log_w)):
        raise DegenerateWeightsError("every particle has zero density under the next target")
    return np.exp(log_w - log_w[np.isfinite(log_w)].max())


def resample(
    ensemble: Ensemble,
    weights,
    scheme: str = "multinomial",
    rng: RandomSource | np.random.Generator | None = None,
) -> Ensemble:
    """Draw N particles with replacement; the new particles get weight 1.

    "multinomial" draws i.i.d. categorical indices; "systematic" uses one
    uniform offset on a stratified inverse-CDF grid (lower variance).
    """
    if scheme not in RESAMPLING_SCHEMES:
        raise ValueError(f"scheme must be one of {RESAMPLING_SCHEMES}")
    if rng is None:
        raise ValueError("resampling needs a random source")
    gen = as_generator(rng)
    probs = normalize_weights(np.asarray(weights, dtype=float))
    n = ensemble.n_particles
    if probs.shape != (n,):
        raise ValueError("weights must have one entry per particle")
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    if scheme == "multinomial":
        u = gen.uniform(size=n)
    else:
        u = (gen.uniform() + np.arange(n)) / n
    idx = np.searchsorted(cum, u, side="left")
    return Ensemble(
        ensemble.positions[idx],
        np.ones(n),
        iteration_index=ensemble.iteration_index,
        group_id=ensemble.group_id,
    )


def _truncate_weights(w: np.ndarray, n: int) -> np.ndarray:
    """Truncate weights at sqrt(N) times their own truncated mean.

    Kernel denominators can vanish for particles that drifted away from
    the cloud, handing one particle the whole selection pool.  The cap is
    the fixed point of c = sqrt(N) * mean(min(w, c)), so it is immune to
    the outliers it removes, and it grows with N, which preserves the
    large-N consistency of the reweighting.
    """
    cap = np.inf
    scale = np.sqrt(n)
    for _ in range(64):
        new_cap = scale * np.minimum(w, cap).mean()
        if new_cap >= cap:
            break
        cap = new_cap
    return np.minimum(w, cap)


def _loo_engine_bandwidth(
    ensemble: Ensemble, fallback: np.ndarray, knn: int = 7, reach: float = 3.0
) -> np.ndarray:
    """Per-particle bandwidths: the Silverman rule widened for stragglers.

    Starting from the Silverman bandwidth of the current cloud (falling
    back to the initial cloud's value if some dimension collapsed), each
    particle whose ``knn``-th neighbour sits farther than ``reach``
    bandwidths gets its kernel widened to keep that neighbour in range.
    Without this, a particle that drifted away from a concentrated cloud
    is assigned an exponentially vanishing leave-one-out density and its
    importance ratio swallows the whole selection pool.
    """
    try:
        base = silverman_bandwidth(ensemble)
    except DegenerateEnsembleError:
        base = fallback
    z = ensemble.positions / base
    sq = z @ z.T
    sq *= -2.0
    norms = (z * z).sum(axis=1)
    sq += norms[:, None]
    sq += norms[None, :]
    np.fill_diagonal(sq, np.inf)
    k = min(knn, ensemble.n_particles - 1)
    kth = np.sqrt(np.maximum(np.partition(sq, k - 1, axis=1)[:, k - 1], 0.0))
    widen = np.maximum(1.0, kth / reach)
    return base[None, :] * widen[:, None]


def _run_group(
    group: int,
    sequence: TargetSequence,
    config: SmcConfig,
    rng: RandomSource,
    keep_history: bool,
):
    group_rng = rng.derive(group)
    gen_init = group_rng.derive(INIT_STREAM, 0).generator()
    draws = sequence.initial.sample(config.n_particles, gen_init)
    ens = make_ensemble(draws, iteration_index=0, group_id=group)
    bandwidth_fallback = None
    if config.weight_mode == "loo_kde_ratio":
        bandwidth_fallback = silverman_bandwidth(ens)

    rows = []
    history = [(ens, np.ones(config.n_particles, dtype=bool))] if keep_history else None
    f_prev = sequence.initial.density
    for t, f_t in enumerate(sequence.stages, start=1):
        try:
            loo_bw = None
            if bandwidth_fallback is not None:
                loo_bw = _loo_engine_bandwidth(ens, bandwidth_fallback)
            # weights carried over skipped resampling steps multiply on top
            w = ens.weights * correction_weights(
                ens, f_t, f_prev, config.weight_mode, loo_bandwidth=loo_bw
            )
            if config.weight_mode == "loo_kde_ratio":
                w = _truncate_weights(w, config.n_particles)
            probs = normalize_weights(w)
        except DegenerateWeightsError as err:
            raise DegenerateWeightsError(
                f"degenerate weights at stage {t} of group {group}: {err}", stage=t
            ) from err
        ess = effective_sample_size(w)
        if config.ess_threshold is None or ess < config.ess_threshold * config.n_particles:
            ens = resample(
                ens, w, config.resampling, group_rng.derive(SELECTION_STREAM, t).generator()
            )
        else:
            # carry the weights; the next correction multiplies on top
            ens = Ensemble(ens.positions, w, iteration_index=ens.iteration_index,
                           group_id=group)
        ens = replace(ens, iteration_index=t)
        ens, accepted_count, accepted = mutate_ensemble(
            f_t, ens, config.mutation, config.mutation_steps, group_rng
        )
        moments = weighted_moments(ens)
        rows.append(
            IterationRecord(
                group=group,
                iteration=t,
                acceptance_count=accepted_count,
                ess=ess,
                weight_min=float(probs.min()),
                weight_max=float(probs.max()),
                mean=moments.mean,
                cov_diag=moments.covariance_diag,
            )
        )
        if keep_history:
            history.append((ens, accepted))
        f_prev = f_t
    return ens, rows, tuple(history) if keep_history else None


def run_smc(
    sequence: TargetSequence,
    config: SmcConfig,
    rng: RandomSource,
    keep_history: bool = False,
) -> SmcRun:
    """Run correction / selection / mutation over the whole sequence.

    Each of the ``n_groups`` particle groups runs independently on its own
    derived random stream; with ``n_threads > 1`` groups execute in
    parallel, with results bit-identical to the sequential run.  Raises
    :class:`DegenerateWeightsError` (carrying the stage index) when every
    particle dies under some stage.
    """
    if sequence.initial is None:
        raise ValueError("the target sequence has no initial distribution to draw from")
    if not isinstance(rng, RandomSource):
        raise TypeError("run_smc needs a RandomSource")

    groups = list(range(config.n_groups))
    if config.n_threads > 1:
        with ThreadPoolExecutor(max_workers=config.n_threads) as pool:
            results = list(
                pool.map(
                    lambda j: _run_group(j, sequence, config, rng, keep_history), groups
                )
            )
    else:
        results = [_run_group(j, sequence, config, rng, keep_history) for j in groups]

    report = RunReport(
        n_particles=config.n_particles,
        n_groups=config.n_groups,
        n_iterations=sequence.n_stages,
        rows=tuple(row for _, rows, _ in results for row in rows),
    )
    ensembles = tuple(ens for ens, _, _ in results)
    history = tuple(h for _, _, h in results) if keep_history else None
    return SmcRun(ensembles=ensembles, report=report, history=history)


def compare_groups(report: RunReport) -> float:
    """Between-group spread of final means over the pooled standard error.

    For each dimension, the standard deviation of the J final group means
    is divided by the pooled within-group standard error of a mean; the
    maximum over dimensions is returned.  Values near or below ~3 indicate
    the groups agree; much larger values flag a convergence problem.
    """
    if report.n_groups < 2:
        raise ValueError("group comparison needs at least 2 groups")
    finals = sorted(report.final_rows(), key=lambda r: r.group)
    means = np.array([r.mean for r in finals])
    variances = np.array([r.cov_diag for r in finals])
    spread = means.std(axis=0, ddof=1)
    se = np.sqrt(variances.mean(axis=0) / report.n_particles)
    se = np.where(se > 0, se, np.inf)
    return float((spread / se).max())
