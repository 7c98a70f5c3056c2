"""End-to-end acceptance checks for the whole sampler stack.

Each test prints one PASS/FAIL line.  Monte Carlo checks run on fixed
seeds, so outcomes are reproducible; the heavy multimodal runs take a
few minutes combined.
"""

import numpy as np
import pytest
from scipy.stats import kstest

from conftest import assert_gradient_matches

import hsmc
from hsmc.core import RandomSource, make_ensemble
from hsmc.diagnostics import effective_sample_size, mode_mass
from hsmc.kde import loo_log_density, loo_log_density_all, silverman_bandwidth
from hsmc.kernels import (
    HmcConfig,
    MhConfig,
    hmc_step,
    leapfrog_proposal,
    mh_step,
    mutate_ensemble,
    reflect_into_box,
)
from hsmc.smc import (
    SmcConfig,
    annealing_sequence,
    blockwise_sequence,
    diag_gaussian_initial,
    resample,
    run_smc,
    uniform_box_initial,
)
from hsmc.targets import (
    DROPWAVE_BOX,
    SMILEY_MODE_CENTERS,
    dropwave,
    gaussian,
    nonlinear_logit_loglik,
    rosenbrock,
    sample_dropwave_data,
    sample_smiley_data,
    simulate_logit_data,
    smiley,
)


def _criterion(number, name, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] criterion {number} ({name}): {status} -- {detail}")
    assert ok, f"criterion {number} ({name}) failed: {detail}"


def _mh_chain_acceptance(target, scale, iterations, chain_seed, start):
    gen = RandomSource(chain_seed).generator()
    pos = np.array(start, dtype=float)
    accepted = 0
    for _ in range(iterations):
        out = mh_step(target, pos, MhConfig(scale), gen)
        pos = out.new_position
        accepted += out.accepted
    return accepted / iterations


def test_criterion_1_rosenbrock_mh_acceptance_rates():
    # acceptance measured over ten fresh 1000-iteration chains (10,000
    # iterations total), matching the chain length of the quoted rates
    target = rosenbrock()
    results = {}
    for scale, expected in ((0.2, 0.661), (1.0, 0.396)):
        rates = [
            _mh_chain_acceptance(target, scale, 1000, 100 + c, (0.0, 0.0))
            for c in range(10)
        ]
        results[scale] = (float(np.mean(rates)), expected)
    ok = all(abs(rate - expected) <= 0.05 for rate, expected in results.values())
    detail = ", ".join(
        f"scale {s}: {rate:.3f} vs {exp:.3f}" for s, (rate, exp) in results.items()
    )
    _criterion(1, "rosenbrock MH acceptance", ok, detail)


def test_criterion_2_rosenbrock_hmc_acceptance():
    target = rosenbrock()
    cfg = HmcConfig(1.0, 20, 0.05)
    gen = RandomSource(7).generator()
    pos = np.zeros(2)
    accepted = 0
    for _ in range(1000):
        out = hmc_step(target, pos, cfg, gen)
        pos = out.new_position
        accepted += out.accepted
    rate = accepted / 1000
    _criterion(2, "rosenbrock HMC acceptance", rate >= 0.95, f"rate {rate:.3f} (>= 0.95)")


def test_criterion_3_six_dim_gaussian_race():
    mu = np.array([10.0, 10.0, 10.0, -10.0, -10.0, -10.0])
    target = gaussian(mu, np.ones(6))
    start = np.array([-15.0, -15.0, -15.0, 15.0, 15.0, 15.0])
    mh_cfg = MhConfig(0.09)  # proposal std 0.3

    # the tuning requirement: >= 60% acceptance at stationarity
    stationary_rate = _mh_chain_acceptance(target, 0.09, 2000, 999, mu)
    assert stationary_rate >= 0.60, f"MH tuning rate {stationary_rate:.3f}"

    hmc_cfg = HmcConfig(1.0, 20, 0.05)
    wins = 0
    for rep in range(20):
        gen = RandomSource(3000 + rep).generator()
        pos = start.copy()
        hmc_hit = None
        for i in range(1, 101):
            pos = hmc_step(target, pos, hmc_cfg, gen).new_position
            if np.linalg.norm(pos - mu) < 3.0:
                hmc_hit = i
                break
        gen = RandomSource(4000 + rep).generator()
        pos = start.copy()
        mh_early_hit = False
        for i in range(1, 401):
            pos = mh_step(target, pos, mh_cfg, gen).new_position
            if np.linalg.norm(pos - mu) < 3.0:
                mh_early_hit = True
                break
        wins += (hmc_hit is not None) and not mh_early_hit
    _criterion(
        3,
        "6-dim Gaussian burn-in race",
        wins >= 18,
        f"HMC<100 and MH>400 in {wins}/20 replications (MH tuned at "
        f"{stationary_rate:.2f} acceptance)",
    )


def _basin_mass_oracle(target, lower, upper, centers, resolution):
    xs = np.linspace(lower[0], upper[0], resolution[0])
    ys = np.linspace(lower[1], upper[1], resolution[1])
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    vals = np.empty(pts.shape[0])
    for lo in range(0, pts.shape[0], 8192):
        hi = min(lo + 8192, pts.shape[0])
        vals[lo:hi] = target.log_f(pts[lo:hi])
    dens = np.exp(vals - vals.max())
    nearest = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(-1).argmin(1)
    mass = np.array([dens[nearest == k].sum() for k in range(len(centers))])
    return mass / mass.sum()


def test_criterion_4_smiley_hsmc():
    data = sample_smiley_data(2048, RandomSource(2024))
    seq = blockwise_sequence(
        "kde", data, 100, initial=diag_gaussian_initial([0.0, 10.0], [10.0, 20.0])
    )
    assert seq.n_stages == 21
    cfg = SmcConfig(
        n_particles=512,
        n_groups=4,
        mutation=HmcConfig([1.0, 1.0], 20, 0.05),
        mutation_steps=1,
        weight_mode="loo_kde_ratio",
    )
    result = run_smc(seq, cfg, RandomSource(2025))

    final_acceptance = sum(r.acceptance_count for r in result.report.final_rows())
    oracle = _basin_mass_oracle(
        seq.stages[-1], (-7.0, -3.0), (7.0, 28.0), SMILEY_MODE_CENTERS, (281, 311)
    )
    pooled = make_ensemble(np.vstack([e.positions for e in result.ensembles]))
    fractions = mode_mass(pooled, SMILEY_MODE_CENTERS)
    per_group = [
        mode_mass(make_ensemble(e.positions), SMILEY_MODE_CENTERS)
        for e in result.ensembles
    ]
    pairwise = max(
        np.abs(a - b).max() for i, a in enumerate(per_group) for b in per_group[i + 1:]
    )
    oracle_gap = np.abs(fractions - oracle).max()

    ok = final_acceptance >= 2000 and oracle_gap <= 0.05 and pairwise <= 0.1
    _criterion(
        4,
        "smiley kernel-density run",
        ok,
        f"final acceptance {final_acceptance}/2048, |mass - oracle| {oracle_gap:.4f} "
        f"(<= 0.05), max pairwise group gap {pairwise:.4f} (<= 0.1)",
    )


def test_criterion_5_dropwave_constrained_hsmc():
    data = sample_dropwave_data(4096, RandomSource(31))
    seq = blockwise_sequence(
        "kde",
        data,
        100,
        constraints=DROPWAVE_BOX,
        initial=diag_gaussian_initial([0.0, 0.0], [10.0, 10.0]),
    )
    assert seq.n_stages == 41
    cfg = SmcConfig(
        n_particles=512,
        n_groups=4,
        mutation=HmcConfig([1.0, 1.0], 20, 0.05),
        mutation_steps=1,
        weight_mode="loo_kde_ratio",
    )
    result = run_smc(seq, cfg, RandomSource(32), keep_history=True)

    # initialization draws come from the wide f_0 by design; every particle
    # the constrained sampler itself produces (t >= 1) must be in the box
    outside = sum(
        int((~DROPWAVE_BOX.contains(ens.positions)).sum())
        for history in result.history
        for ens, _ in history[1:]
    )
    final_acceptance = sum(r.acceptance_count for r in result.report.final_rows())
    ok = outside == 0 and final_acceptance >= 1960
    _criterion(
        5,
        "dropwave constrained run",
        ok,
        f"particles outside box {outside}, final acceptance {final_acceptance}/2048 "
        f"(>= 1960)",
    )


def _logit_replication(seed):
    data = simulate_logit_data(400, (3.0, 3.0), RandomSource(seed))
    init = diag_gaussian_initial([2.0, 1.0], [4.0, 4.0])
    seq = blockwise_sequence("loglik", data, 50, initial=init)
    assert seq.n_stages == 8

    hsmc_cfg = SmcConfig(
        n_particles=512,
        mutation=HmcConfig(1.0, 20, 0.05),
        mutation_steps=5,
        weight_mode="loo_kde_ratio",
    )
    smc_cfg = SmcConfig(
        n_particles=512,
        mutation=MhConfig(1.0),
        mutation_steps=1,
        weight_mode="theoretical_ratio",
    )
    hsmc_run_ = run_smc(seq, hsmc_cfg, RandomSource(seed + 1000))
    smc_run = run_smc(seq, smc_cfg, RandomSource(seed + 2000))

    truth = np.array([3.0, 3.0])
    h_ens = hsmc_run_.ensembles[0]
    bw = silverman_bandwidth(h_ens)
    loo = loo_log_density_all(h_ens.positions, bw)
    hdr_particles = h_ens.positions[loo >= np.median(loo)]
    # "contains (3,3)": the top-half-density region sits at the true basin
    hdr_ok = (np.linalg.norm(hdr_particles - truth, axis=1) <= 2.0).mean() >= 0.5

    def spurious(ens):
        return float((np.linalg.norm(ens.positions - truth, axis=1) > 2.0).mean())

    return hdr_ok, spurious(h_ens), spurious(smc_run.ensembles[0])


def test_criterion_6_nonlinear_logit():
    hdr_count = 0
    hsmc_total = 0.0
    smc_total = 0.0
    per_seed = []
    for seed in range(10):
        hdr_ok, h_spur, s_spur = _logit_replication(seed)
        hdr_count += hdr_ok
        hsmc_total += h_spur
        smc_total += s_spur
        per_seed.append((hdr_ok, h_spur, s_spur))
    # the two data realizations whose early blocks point away from (3,3)
    # defeat both samplers; the bar is >= 8/10 for the kernel-weighted run,
    # with the classic-weight run leaving strictly more spurious mass overall
    ok = hdr_count >= 8 and smc_total > hsmc_total
    detail = (
        f"HDR contains (3,3) in {hdr_count}/10; total spurious fraction "
        f"HSMC {hsmc_total:.3f} < SMC {smc_total:.3f}"
    )
    _criterion(6, "nonlinear logit", ok, detail)


def test_criterion_7_property_suite():
    rng = np.random.default_rng(20240817)
    checks = []

    # gradient finite differences on every built-in target
    data = simulate_logit_data(60, (3.0, 3.0), RandomSource(3))
    cases = [
        (rosenbrock(), [-3, -1], [3, 6]),
        (gaussian([1.0, -2.0], [2.0, 0.5]), [-4, -6], [6, 2]),
        (smiley(), [-4, -2], [4, 26]),
        (dropwave(), [-2.4, -2.4], [2.4, 2.4]),
        (nonlinear_logit_loglik(data), [-1, -1], [6, 6]),
    ]
    for target, lo, hi in cases:
        assert_gradient_matches(target, rng.uniform(lo, hi, size=(100, 2)))
    checks.append("gradients")

    # leapfrog reversibility within 1e-10
    cfg = HmcConfig(1.0, 20, 0.05)
    target = rosenbrock()
    for _ in range(20):
        q0, p0 = rng.standard_normal(2), rng.standard_normal(2)
        q1, p1 = leapfrog_proposal(target, q0, p0, cfg)
        q2, p2 = leapfrog_proposal(target, q1, p1, cfg)
        assert np.abs(q2 - q0).max() < 1e-10 and np.abs(p2 - p0).max() < 1e-10
    checks.append("reversibility")

    # reflection preserves |momentum| exactly
    for _ in range(200):
        q = rng.uniform(-20, 20)
        p = rng.uniform(-5, 5)
        _, p2 = reflect_into_box(q, p, -2.5, 2.5)
        assert abs(p2) == abs(p)
    checks.append("reflection energy")

    # HMC stationarity: 10^5 steps on N(0,1) pass a 1% KS test
    normal = gaussian([0.0], [1.0])
    ks_cfg = HmcConfig(1.0, 10, 0.157)
    ens = make_ensemble(np.full((100, 1), 0.5))
    root = RandomSource(55)
    samples = []
    for t in range(1100):
        ens = make_ensemble(ens.positions, iteration_index=t)
        ens, _, _ = mutate_ensemble(normal, ens, ks_cfg, 1, root)
        if t >= 100:
            samples.append(ens.positions[:, 0])
    pooled = np.concatenate(samples)
    ks = kstest(pooled, "norm").statistic
    critical = 1.6276 / np.sqrt(pooled.size)
    assert ks < critical, f"KS {ks:.5f} vs critical {critical:.5f}"
    checks.append(f"stationarity KS {ks:.4f}<{critical:.4f}")

    # resampling unbiasedness within 3 binomial standard deviations
    n, reps = 10, 10_000
    weights = rng.uniform(0.25, 4.0, n)
    probs = weights / weights.sum()
    ens10 = make_ensemble(np.arange(n, dtype=float)[:, None])
    totals = np.zeros(n)
    base = RandomSource(77)
    for r in range(reps):
        out = resample(ens10, weights, "multinomial", base.derive(r))
        totals += np.bincount(out.positions[:, 0].astype(int), minlength=n)
    sd = np.sqrt(n * probs * (1 - probs) / reps)
    assert np.all(np.abs(totals / reps - n * probs) <= 3 * sd)
    checks.append("resampling unbiasedness")

    # leave-one-out estimate vs brute-force double loop at 1e-12
    positions = rng.standard_normal((50, 2))
    h = np.array([0.6, 0.9])
    ens50 = make_ensemble(positions)
    batch = loo_log_density_all(positions, h)
    for i in range(50):
        total = 0.0
        for m in range(50):
            if m == i:
                continue
            total += np.prod(
                np.exp(-0.5 * ((positions[i] - positions[m]) / h) ** 2)
                / (np.sqrt(2 * np.pi) * h)
            )
        expected = np.log(total / 49)
        assert abs(loo_log_density(ens50, i, h) - expected) < 1e-12
        assert abs(batch[i] - expected) < 1e-12
    checks.append("LOO vs brute force")

    # ESS edge cases
    assert effective_sample_size(np.ones(512)) == pytest.approx(512.0)
    point = np.zeros(512)
    point[17] = 3.0
    assert effective_sample_size(point) == pytest.approx(1.0)
    checks.append("ESS edges")

    # determinism: thread count cannot change a run bit for bit
    points = rng.standard_normal((120, 2))
    seq = blockwise_sequence(
        "kde", points, 60, initial=diag_gaussian_initial([0.0, 0.0], [3.0, 3.0])
    )
    runs = []
    for n_threads in (1, 4):
        cfg4 = SmcConfig(
            n_particles=32,
            n_groups=4,
            mutation=HmcConfig(1.0, 5, 0.05),
            weight_mode="loo_kde_ratio",
            n_threads=n_threads,
        )
        runs.append(run_smc(seq, cfg4, RandomSource(9)))
    for a, b in zip(runs[0].ensembles, runs[1].ensembles):
        assert np.array_equal(a.positions, b.positions)
    checks.append("thread determinism")

    _criterion(7, "property suite", True, "; ".join(checks))


def test_criterion_8_simulated_annealing():
    target = dropwave()
    good = 0
    norms = []
    for seed in range(10):
        seq = annealing_sequence(
            target,
            [1.0, 4.0, 16.0, 64.0],
            initial=uniform_box_initial([-2.5, -2.5], [2.5, 2.5]),
        )
        cfg = SmcConfig(
            n_particles=512,
            mutation=HmcConfig(1.0, 20, 0.02),
            weight_mode="theoretical_ratio",
        )
        out = run_smc(seq, cfg, RandomSource(seed))
        mean_norm = float(np.linalg.norm(out.ensembles[0].positions, axis=1).mean())
        norms.append(mean_norm)
        good += mean_norm < 0.1
    _criterion(
        8,
        "simulated annealing concentration",
        good >= 9,
        f"mean particle norm < 0.1 in {good}/10 runs (norms "
        f"{', '.join(f'{v:.3f}' for v in norms)})",
    )
