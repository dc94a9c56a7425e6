"""Self-check harness: quick numerical checks grouped into suites.

Each check returns a :class:`CheckResult`; failures are report entries, never
exceptions. A filter string selects the checks whose ``suite/check`` name
contains it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import hypercube as hc
from .forward import PopulationState, SimConfig, population_stats, step_generation
from .meanfield import InitialLaw, MeanFieldConfig, evolve_density, evolve_particles, lande_residual
from .recombination import RecombinationModel, empirical_pairwise, harmonic_stats
from .rng import make_rng
from .stationary import (StationaryDensity, bifurcation_scan, chi_prime, kappa_c, pi_y_moments,
                         three_root_window)


class CheckResult(NamedTuple):
    suite: str
    check: str
    observed: float
    tolerance: str
    passed: bool
    seconds: float = 0.0

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "FAIL"


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    fn: Callable[[], tuple]

    @property
    def key(self) -> str:
        return f"{self.suite}/{self.name}"


REGISTRY: list[Check] = []


def check(suite: str, name: str):
    def register(fn):
        REGISTRY.append(Check(suite, name, fn))
        return fn
    return register


def _random_pairs(L: int, n: int, seed: int):
    rng = make_rng(seed)
    for _ in range(n):
        yield hc.HypercubeDistribution.random(L, rng).weights, rng.dirichlet(np.ones(1 << L))


def _fd_jacobian_error(x, nu, h=1e-6) -> float:
    L = hc.n_loci(x)
    W = hc.linkage_basis(L)
    analytic = hc.recomb_jacobian_linkage(x, nu)
    cols = []
    for J in range(1 << L):
        d = (hc.recombinator(x + h * W[:, J], nu) - hc.recombinator(x - h * W[:, J], nu)) / (2 * h)
        cols.append(W.T @ d)
    return float(np.max(np.abs(np.array(cols).T - analytic)))


# -- hypercube ----------------------------------------------------------------

@check("hypercube", "jacobian")
def _jacobian():
    err = max(_fd_jacobian_error(x, nu) for x, nu in _random_pairs(3, 20, 11))
    return err, "< 1e-6", err < 1e-6


@check("hypercube", "jacobian-diagonal")
def _jacobian_diag():
    err = 0.0
    for x, nu in _random_pairs(3, 20, 12):
        J = hc.recomb_jacobian_linkage(x, nu)
        beta = np.array([hc.beta_from_law(nu, I) for I in range(8)])
        err = max(err, float(np.max(np.abs(np.diag(J) + beta))))
    return err, "< 1e-10", err < 1e-10


@check("hypercube", "jacobian-triangular")
def _jacobian_zero():
    worst = 0.0
    for x, nu in _random_pairs(3, 20, 13):
        J = hc.recomb_jacobian_linkage(x, nu)
        for I in range(8):
            for K in range(8):
                if K & ~I:
                    worst = max(worst, abs(J[I, K]))
    return worst, "== 0", worst == 0.0


@check("hypercube", "marginal-consistency")
def _consistency():
    rng = make_rng(14)
    L, A = 5, (1, 3)
    worst = 0.0
    spec = hc.FitnessSpec.quadratic(1.3, 0.2)
    theta = hc.MutationRates(0.7, 0.4)
    for _ in range(20):
        x = hc.HypercubeDistribution.random(L, rng).weights
        nu = rng.dirichlet(np.ones(1 << L))
        nuA = hc.subset_law_marginal(hc.symmetrize(nu), A)
        pairs = [
            (hc.marginal(hc.recombinator(x, nu), A), hc.recombinator(hc.marginal(x, A), nuA)),
            (hc.marginal(hc.mutator(x, theta), A), hc.mutator(hc.marginal(x, A), theta)),
            (hc.marginal(hc.selector(x, spec), A), hc.selector_marginal(x, A, spec)),
        ]
        worst = max(worst, max(float(np.max(np.abs(a - b))) for a, b in pairs))
    return worst, "< 1e-12", worst < 1e-12


@check("hypercube", "le-projection")
def _le_projection():
    rng = make_rng(15)
    worst = 0.0
    for _ in range(20):
        x = hc.HypercubeDistribution.random(6, rng).weights
        pi = hc.le_projection(x)
        worst = max(worst, float(np.max(np.abs(hc.allele_frequencies(pi) - hc.allele_frequencies(x)))),
                    float(np.max(np.abs(hc.le_projection(pi) - pi))))
    return worst, "< 1e-12", worst < 1e-12


# -- recombination ------------------------------------------------------------

@check("recomb", "free-recomb")
def _free_recomb():
    worst = 0.0
    for L in (2, 10, 100):
        r_star, rss = harmonic_stats(RecombinationModel.free(L))
        worst = max(worst, abs(rss - 0.5), float(np.max(np.abs(r_star - 0.5))))
    return worst, "== 0", worst == 0.0


@check("recomb", "single-pairwise-mc")
def _single_mc():
    model = RecombinationModel.single(8)
    n = 200_000
    masks = empirical_pairwise(_unpacked(model, n, 16))
    exact = model.pairwise_matrix()
    se = np.sqrt(exact * (1 - exact) / n) + 1e-12
    z = float(np.max(np.abs(masks - exact) / se))
    return z, "< 5 (max z over pairs)", z < 5


@check("recomb", "poisson-pairwise-mc")
def _poisson_mc():
    model = RecombinationModel.poisson(5, 2.0)
    n = 200_000
    masks = empirical_pairwise(_unpacked(model, n, 17))
    exact = model.pairwise_matrix()
    se = np.sqrt(exact * (1 - exact) / n) + 1e-12
    off = ~np.eye(5, dtype=bool)
    z = float(np.max(np.abs(masks - exact)[off] / se[off]))
    return z, "< 5 (max z over pairs)", z < 5


def _unpacked(model, n, seed):
    from .bitset import unpack
    return unpack(model.sample_masks(make_rng(seed), n), model.L)


# -- forward simulation -------------------------------------------------------

def _small_sim(**kw) -> SimConfig:
    base = dict(N=50, L=20, generations=1, fitness=hc.FitnessSpec.quadratic(2.0),
                mutation=hc.MutationRates(0.0, 0.0), recombination=RecombinationModel.free(20), rho=25.0)
    base.update(kw)
    return SimConfig(**base)


@check("forward", "monomorphic-absorbing")
def _absorbing():
    cfg = _small_sim()
    rng = make_rng(18)
    state = PopulationState.from_alleles(np.tile(rng.random(20) < 0.5, (50, 1)))
    start = state.genomes.copy()
    for _ in range(20):
        state = step_generation(state, cfg, rng)
    same = bool(np.array_equal(state.genomes, start))
    return float(same), "identical", same


@check("forward", "two-genotype-ld")
def _two_genotype():
    plus = np.array([[True, True]] * 5 + [[False, False]] * 5)
    D = float(population_stats(PopulationState.from_alleles(plus)).ld[0])
    return D, "== 0.25", abs(D - 0.25) < 1e-15


@check("forward", "variance-identity")
def _variance_identity():
    rng = make_rng(19)
    worst = 0.0
    for _ in range(20):
        plus = rng.random((60, 12)) < rng.random(12)
        st = population_stats(PopulationState.from_alleles(plus))
        L = 12
        lhs = L * st.trait_var - 4 * np.mean(st.p * (1 - st.p))
        rhs = 8.0 / L * st.ld.sum()
        worst = max(worst, abs(lhs - rhs))
    return worst, "< 1e-12", worst < 1e-12


# -- mean field ---------------------------------------------------------------

@check("meanfield", "lande")
def _lande():
    spec = hc.FitnessSpec.linear(1.0)
    theta = hc.MutationRates(0.0, 0.0)
    init = InitialLaw.pi(0.0, hc.MutationRates(0.6, 0.6))
    run = evolve_particles(MeanFieldConfig(spec, theta, init, T=1.0, dt=1e-3, M=100_000), make_rng(20))
    rel = lande_residual(run.t, run.mean_trait, run.sigma2, spec).relative_l2()
    return rel, "< 0.1", rel < 0.1


@check("meanfield", "grid-stationarity")
def _grid_stationary():
    theta = hc.MutationRates(0.6, 0.6)
    cfg = MeanFieldConfig(hc.FitnessSpec.linear(0.0), theta, InitialLaw.pi(0.0, theta),
                          T=1.0, dt=1e-4, K=400, record_every=1000)
    run = evolve_density(cfg)
    ref = StationaryDensity(0.0, theta).cell_averages(400)
    l1 = float(np.abs(run.final.u - ref).sum() / 400)
    return l1, "< 0.02", l1 < 0.02


# -- stationary analysis ------------------------------------------------------

@check("stationary", "kappa_c")
def _kappa_c():
    k = kappa_c(0.6)
    return k, "== -1.7", k == -1.7


@check("stationary", "chi-prime-at-kappa_c")
def _chi_prime():
    d = abs(chi_prime(0.0, 0.6, kappa=-1.7) - 1.0)
    return d, "< 1e-3", d < 1e-3


@check("stationary", "variance-identity")
def _variance():
    worst = max(abs(pi_y_moments(0.0, th).variance - 1.0 / (4 * (4 * th + 1))) for th in (0.3, 0.6, 1.0))
    return worst, "< 1e-8", worst < 1e-8


@check("stationary", "fourth-cumulant")
def _fourth():
    worst = max(pi_y_moments(0.0, th).fourth_cumulant for th in (0.3, 0.6, 1.0))
    return worst, "< 0", worst < 0


@check("stationary", "pitchfork")
def _pitchfork():
    rows = bifurcation_scan(0.6, -3.0, 0.0, 31)
    above_ok = all(r.n_roots == 1 for r in rows if r.kappa > -1.7)
    window = three_root_window(rows)
    ok = above_ok and window is not None and window[1] < -1.7
    return (window[1] if window else float("nan")), "3 roots only below -1.7", ok


def run_checks(filter_text: str = "") -> list[CheckResult]:
    results = []
    for c in REGISTRY:
        if filter_text and filter_text not in c.key:
            continue
        t0 = time.perf_counter()
        try:
            observed, tol, passed = c.fn()
        except Exception as exc:  # a crashing check is a failed check
            observed, tol, passed = float("nan"), f"raised {type(exc).__name__}: {exc}", False
        results.append(CheckResult(c.suite, c.name, float(observed), tol, bool(passed),
                                   time.perf_counter() - t0))
    return results
