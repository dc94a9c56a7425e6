"""Acceptance criteria, one test each, at the stated tolerances.

Every test appends a ``CRITERION k PASS|FAIL ...`` line that is printed as it
runs and again in the terminal summary, then asserts.
"""

import itertools
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from polygene import hypercube as hc
from polygene.forward import InitialCondition, SimConfig, run_simulation
from polygene.hypercube import FitnessSpec, MutationRates
from polygene.meanfield import InitialLaw, MeanFieldConfig, evolve_density, evolve_particles, lande_residual
from polygene.recombination import RecombinationModel, harmonic_stats
from polygene.rng import make_rng, replicate_rng
from polygene.stationary import (bifurcation_scan, chi_prime, fixed_points, kappa_c, pi_y_moments,
                                 three_root_window)

SYM = MutationRates(0.6, 0.6)
SKEW = MutationRates(1.1, 3.3)


def report(k: int, passed: bool, detail: str) -> None:
    line = f"CRITERION {k:2d} {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


# -- 1: Jacobian of the recombinator ----------------------------------------------

def test_criterion_01_recombinator_spectrum():
    t0 = time.perf_counter()
    rng = make_rng(101)
    W = hc.linkage_basis(3)
    fd_err = diag_err = off_max = 0.0
    h = 1e-6
    for _ in range(20):
        x = hc.HypercubeDistribution.random(3, rng).weights
        nu = rng.dirichlet(np.ones(8))
        J = hc.recomb_jacobian_linkage(x, nu)
        cols = [W.T @ (hc.recombinator(x + h * W[:, j], nu) - hc.recombinator(x - h * W[:, j], nu)) / (2 * h)
                for j in range(8)]
        fd_err = max(fd_err, float(np.max(np.abs(np.array(cols).T - J))))
        diag_err = max(diag_err, max(abs(J[i, i] + hc.beta_from_law(nu, i)) for i in range(8)))
        off_max = max(off_max, max((abs(J[i, k]) for i in range(8) for k in range(8) if k & ~i), default=0.0))
    secs = time.perf_counter() - t0
    ok = fd_err < 1e-6 and diag_err < 1e-10 and off_max == 0.0 and secs < 5
    report(1, ok, f"fd error {fd_err:.2e} (<1e-6), diagonal error {diag_err:.2e} (<1e-10), "
                  f"max |J[I,K]| for K not in I = {off_max:g} (==0), {secs:.2f}s (<5s)")
    assert ok


# -- 2: free recombination ---------------------------------------------------------

def test_criterion_02_free_recombination():
    t0 = time.perf_counter()
    vals = []
    for L in (2, 10, 100):
        r_star, rss = harmonic_stats(RecombinationModel.free(L))
        vals.append(bool(np.all(r_star == 0.5)) and rss == 0.5)
    secs = time.perf_counter() - t0
    ok = all(vals) and secs < 1
    report(2, ok, f"r* = r** = 0.5 exactly for L in (2, 10, 100): {vals}, {secs:.3f}s (<1s)")
    assert ok


# -- 3: critical kappa and pitchfork ---------------------------------------------

def test_criterion_03_kappa_c_and_pitchfork():
    t0 = time.perf_counter()
    kc = kappa_c(0.6)
    rows = bifurcation_scan(0.6, -3.0, 0.0, 61)
    above = all(r.n_roots == 1 for r in rows if r.kappa > kc)
    window = three_root_window(rows)
    slope = abs(chi_prime(0.0, 0.6, kappa=kc) - 1.0)
    secs = time.perf_counter() - t0
    ok = kc == -1.7 and above and window is not None and window[1] < kc and slope < 1e-3 and secs < 30
    report(3, ok, f"kappa_c = {kc!r} (== -1.7), one root above kappa_c: {above}, three-root window {window}, "
                  f"|chi'(0) - 1| = {slope:.2e} (<1e-3), {secs:.1f}s (<30s)")
    assert ok


# -- 4: cumulants of the neutral law -------------------------------------------------

def test_criterion_04_cumulant_identities():
    thetas = (0.3, 0.6, 1.0)
    var_err = max(abs(pi_y_moments(0.0, th).variance - 1 / (4 * (4 * th + 1))) for th in thetas)
    k4 = [pi_y_moments(0.0, th).fourth_cumulant for th in thetas]
    ok = var_err < 1e-8 and all(k < 0 for k in k4)
    report(4, ok, f"variance error {var_err:.2e} (<1e-8), fourth cumulants {np.round(k4, 6).tolist()} (<0)")
    assert ok


# -- 5: stationarity of the outer branch ------------------------------------------------

def test_criterion_05_stationary_branch_is_invariant():
    t0 = time.perf_counter()
    R = 8
    spec = FitnessSpec.from_mean_field_kappa(-2.0)
    fp = fixed_points(-2.0, 0.0, SYM)[-1]
    cfg = MeanFieldConfig(spec, SYM, InitialLaw.pi(fp.y, SYM), T=2.0, dt=1e-3, M=100_000, record_every=10)
    runs = [evolve_particles(cfg, replicate_rng(5, r)) for r in range(R)]
    secs = time.perf_counter() - t0
    traj = np.array([run.mean_trait for run in runs])
    se = traj.std(axis=0, ddof=1) / np.sqrt(R)
    z = np.abs(traj.mean(axis=0) - fp.branch)[1:] / se[1:]
    # information only: the i.i.d. standard error of one ensemble at t = 2
    naive_se = np.std(2 * runs[0].final.f - 1) / np.sqrt(cfg.M)
    naive = np.max(np.abs(traj[0] - fp.branch)) / naive_se
    ok = z.max() < 3 and secs < 60
    report(5, ok, f"branch {fp.branch:.4f}: max |mean of {R} ensembles - branch| / SE = {z.max():.2f} (<3) "
                  f"over t in (0, 2]; single run vs naive iid SE {naive:.2f}; {secs:.1f}s (<60s)")
    assert ok


# -- 6: simulation against mean field, desk-scale parameters ---------------------

def test_criterion_06_propagation_of_chaos():
    t0 = time.perf_counter()
    N, L = 500, 50
    spec = FitnessSpec.quadratic(15.0)
    mf = evolve_density(MeanFieldConfig(spec, SKEW, InitialLaw.pi(0.0, SKEW), T=1.0, dt=1e-4, K=400,
                                        record_every=100))
    cfg = SimConfig(N=N, L=L, generations=N, fitness=spec, mutation=SKEW,
                    recombination=RecombinationModel.single(L), rho=float(N),
                    init=InitialCondition("neutral"), stride=5, n_pairs=0, n_triples=0)
    sims = [run_simulation(cfg, replicate_rng(7, i)) for i in range(5)]
    t = sims[0].t
    sim_p = np.mean([s.mean_p for s in sims], axis=0)
    mf_p = np.interp(t, mf.t, (mf.mean_trait + 1) / 2)
    sup = float(np.max(np.abs(sim_p - mf_p)))
    secs = time.perf_counter() - t0
    ok = sup < 0.1 and secs < 600
    report(6, ok, f"sup_t |mean p (sim, 5 seeds) - mean-field| = {sup:.4f} (<0.1), {secs:.1f}s (<600s)")
    assert ok


# -- 7: long simulations settle near a stationary branch ------------------------------

def test_criterion_07_bifurcation_endpoints():
    t0 = time.perf_counter()
    N, L = 200, 100
    details, ok = [], True
    for i, kappa in enumerate((0.0, -1.0, -2.5)):
        cfg = SimConfig(N=N, L=L, generations=20 * N, fitness=FitnessSpec.from_mean_field_kappa(kappa),
                        mutation=SYM, recombination=RecombinationModel.free(L), rho=float(N),
                        init=InitialCondition("all_plus"), stride=20 * N, n_pairs=0, n_triples=0)
        terminal = float(run_simulation(cfg, replicate_rng(70, i)).trait_mean[-1])
        branches = [fp.branch for fp in fixed_points(kappa, 0.0, SYM)]
        gap = min(abs(terminal - b) for b in branches)
        ok &= gap < 0.15
        details.append(f"kappa {kappa:g}: terminal {terminal:+.4f}, gap {gap:.4f}")
    secs = time.perf_counter() - t0
    ok = ok and secs < 900
    report(7, ok, "; ".join(details) + f" (gaps <0.15), {secs:.1f}s (<900s)")
    assert ok


# -- 8: genetic variance ladder --------------------------------------------------------

def _ladder_point(L: int, rho: float, seeds: int, mf):
    N = int(rho)
    cfg = SimConfig(N=N, L=L, generations=N, fitness=FitnessSpec.quadratic(15.0), mutation=SKEW,
                    recombination=RecombinationModel.single(L), rho=rho,
                    init=InitialCondition("neutral_beta"), stride=N // 50, n_pairs=0, n_triples=0)
    gaps_mf, gaps_sim = [], []
    for s in range(seeds):
        rec = run_simulation(cfg, replicate_rng(8, L, s))
        keep = rec.t >= 0.1 - 1e-12
        LV = L * rec.trait_var[keep]
        gaps_mf.append(np.mean(np.abs(LV - np.interp(rec.t[keep], mf.t, mf.sigma2))))
        gaps_sim.append(np.mean(np.abs(LV - rec.sigma2_hat[keep])))
    return float(np.mean(gaps_mf)), float(np.mean(gaps_sim))


@pytest.mark.slow
def test_criterion_08_genetic_variance_ladder():
    t0 = time.perf_counter()
    mf = evolve_density(MeanFieldConfig(FitnessSpec.quadratic(15.0), SKEW, InitialLaw.pi(0.0, SKEW),
                                        T=1.0, dt=1e-4, K=400, record_every=100))
    ladder = [(25, 12.5 * 50), (50, 25 * 100), (100, 50 * 200)]
    points = [_ladder_point(L, rho, 5, mf) for L, rho in ladder]
    vs_mf = [p[0] for p in points]
    vs_sim = [p[1] for p in points]
    ok = vs_mf[0] > vs_mf[1] > vs_mf[2]
    secs = time.perf_counter() - t0
    report(8, ok, "time-averaged |L Var Z - sigma_t^2| over t in [0.1, 1] along (L, rho) = "
                  f"{[(L, rho) for L, rho in ladder]}: {np.round(vs_mf, 4).tolist()} (strictly decreasing); "
                  f"against the population's own 4 mean p(1-p): {np.round(vs_sim, 4).tolist()}; {secs:.0f}s")
    assert ok


# -- 9: Lande's equation ---------------------------------------------------------------

def test_criterion_09_lande_residual():
    spec = FitnessSpec.linear(1.0)
    cfg = MeanFieldConfig(spec, MutationRates(0.0, 0.0), InitialLaw.pi(0.0, SYM), T=1.0, dt=1e-3, M=100_000)
    run = evolve_particles(cfg, make_rng(9))
    rel = lande_residual(run.t, run.mean_trait, run.sigma2, spec).relative_l2()
    ok = rel < 0.1
    report(9, ok, f"relative L2 Lande residual {rel:.4f} (<0.1)")
    assert ok


# -- 10: oracle equivalences -------------------------------------------------------------

def _consistency_error(rng) -> float:
    worst = 0.0
    theta = MutationRates(0.7, 0.4)
    for _ in range(100):
        L = int(rng.integers(2, 7))
        x = hc.HypercubeDistribution.random(L, rng).weights
        nu = rng.dirichlet(np.ones(1 << L))
        A = tuple(sorted(rng.choice(L, int(rng.integers(1, L + 1)), replace=False).tolist()))
        spec = FitnessSpec.quadratic(float(rng.uniform(-5, 5)), float(rng.uniform(-1, 1)))
        nuA = hc.subset_law_marginal(hc.symmetrize(nu), A)
        pairs = [
            (hc.marginal(hc.recombinator(x, nu), A), hc.recombinator(hc.marginal(x, A), nuA)),
            (hc.marginal(hc.mutator(x, theta), A), hc.mutator(hc.marginal(x, A), theta)),
            (hc.marginal(hc.selector(x, spec), A), hc.selector_marginal(x, A, spec)),
        ]
        worst = max(worst, max(float(np.max(np.abs(a - b))) for a, b in pairs))
    return worst


def _one_locus_errors(rng, spec):
    """Max over loci of |L S^l(pi(x)) - p(1-p) sbar| and of its distance to the closed form."""
    out = []
    for L in range(4, 13):
        p = rng.uniform(0.05, 0.95, L)
        x = hc.product_weights(p)
        err = np.array([L * hc.selector_locus(x, l, spec) - p[l] * (1 - p[l]) * hc.allelic_sbar(x, spec)
                        for l in range(L)])
        oracle = 4 * spec.kappa * p * (1 - p) * (2 * p - 1) / L if spec.form == "quadratic" else 0 * p
        out.append((L, float(np.max(np.abs(err))), float(np.max(np.abs(err - oracle)))))
    return out


def _prop_bounds(rng, n=500):
    violations = 0
    for _ in range(n):
        L = int(rng.integers(4, 9))
        x = hc.HypercubeDistribution.random(L, rng, float(rng.choice([0.2, 1.0, 5.0]))).weights
        if rng.random() < 0.5:
            spec = FitnessSpec.quadratic(float(rng.uniform(-20, 20)), float(rng.uniform(-1, 1)))
            C = 4 * np.sqrt(2) * abs(spec.kappa) + 2 * abs(spec.kappa * spec.z_star)
        else:
            spec = FitnessSpec.linear(float(rng.uniform(-5, 5)))
            C = abs(spec.beta)
        l0 = int(rng.integers(L))
        lhs = abs(hc.selector_locus(x, l0, spec) - hc.selector_locus(hc.le_projection(x), l0, spec))
        rhs = 0.0
        for k in (1, 2):
            for A in itertools.combinations([l for l in range(L) if l != l0], k):
                m = hc.marginal(x, (l0, *A))
                rhs += L ** (-k) * np.linalg.norm(m - hc.le_projection(m))
        violations += lhs > C * rhs + 1e-14
        a, b = (int(v) for v in rng.choice(L, 2, replace=False))
        m = hc.marginal(x, (a, b))
        violations += abs(hc.ld(x, a, b)) > np.linalg.norm(m - hc.le_projection(m)) + 1e-15
    return violations


def test_criterion_10_oracle_equivalences():
    rng = make_rng(10)
    consistency = _consistency_error(rng)
    quad = _one_locus_errors(rng, FitnessSpec.quadratic(2.0, 0.3))
    lin = _one_locus_errors(rng, FitnessSpec.linear(1.5))
    oracle_gap = max(g for _, _, g in quad + lin)
    # O(1/L): L times the error stays below 4|kappa| max p(1-p)|2p-1| = 2|kappa| / (3 sqrt 3)
    bound = 2 * 2.0 / (3 * np.sqrt(3))
    scaled = max(L * e for L, e, _ in quad)
    slope = np.polyfit(np.log([L for L, _, _ in quad]), np.log([e for _, e, _ in quad]), 1)[0]
    violations = _prop_bounds(rng)
    ok = consistency < 1e-12 and oracle_gap < 1e-12 and scaled <= bound + 1e-12 and violations == 0
    report(10, ok, f"marginal consistency {consistency:.1e} (<1e-12); one-locus error vs closed form "
                   f"{oracle_gap:.1e}, max L*error {scaled:.4f} (<={bound:.4f}), log-log slope {slope:.2f}; "
                   f"bound violations {violations}/1000 (==0)")
    assert ok
