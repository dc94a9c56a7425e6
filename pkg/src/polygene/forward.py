"""Haploid Wright-Fisher simulation with selection on an additive trait, recombination and mutation.

Genomes are stored as packed bitsets (bit set = allele +1). One generation
builds ``N`` offspring: two parents are drawn independently with probability
proportional to ``exp((L / N) W)``; with probability ``rho / N`` the child
takes the loci of a fresh recombination mask from the first parent and the
rest from the second, otherwise it copies a parent; finally every locus
mutates -1 -> +1 with probability ``theta+ / N`` and +1 -> -1 with
probability ``theta- / N``. Time is reported on the diffusion scale ``t = k / N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import bitset
from .hypercube import FitnessSpec, MutationRates, le_projection
from .recombination import RecombinationModel, strong_recombination_ratio
from .rng import make_rng

INIT_KINDS = ("all_plus", "all_minus", "neutral", "neutral_beta", "frequencies")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class InitialCondition:
    """How generation 0 is built.

    ``neutral`` draws i.i.d. loci with ``P(+1) = theta+ / |theta|`` and then runs
    the neutral chain for ``burn_in`` generations (default ``10 N``).
    ``neutral_beta`` is a fast stand-in: each locus frequency is drawn from
    Beta(2 theta+, 2 theta-) and exactly that many carriers are placed at random,
    independently across loci. ``frequencies`` draws i.i.d. alleles with the
    given per-locus frequencies.
    """

    kind: str = "all_plus"
    freqs: Optional[tuple] = None
    burn_in: Optional[int] = None

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ValueError(f"initial condition must be one of {INIT_KINDS}, got {self.kind!r}")
        if self.kind == "frequencies":
            if self.freqs is None:
                raise ValueError("explicit initial frequencies missing")
            f = np.asarray(self.freqs, dtype=float)
            if np.any((f < 0) | (f > 1)):
                raise ValueError("initial frequencies must lie in [0, 1]")
            object.__setattr__(self, "freqs", tuple(f.tolist()))
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn-in must be nonnegative")


@dataclass(frozen=True)
class SimConfig:
    N: int
    L: int
    generations: int
    fitness: FitnessSpec
    mutation: MutationRates
    recombination: RecombinationModel
    rho: float = 0.0
    init: InitialCondition = InitialCondition()
    seed: int = 0
    stride: int = 1
    hist_bins: int = 20
    n_pairs: int = 200
    n_triples: int = 100

    def __post_init__(self):
        if self.N < 1 or self.L < 1 or self.generations < 0:
            raise ValueError("need N >= 1, L >= 1 and a nonnegative number of generations")
        if self.stride < 1:
            raise ValueError("recording stride must be at least 1")
        if self.recombination.L != self.L:
            raise ValueError("recombination model built for a different number of loci")
        if not 0 <= self.rho <= self.N:
            raise ValueError("need 0 <= rho <= N so that rho / N is a probability")
        if max(self.mutation.theta_plus, self.mutation.theta_minus) > self.N:
            raise ValueError("need theta / N <= 1 so that mutation rates are probabilities")
        if self.init.freqs is not None and len(self.init.freqs) != self.L:
            raise ValueError("explicit initial frequencies must have one entry per locus")

    @property
    def recombination_ratio(self) -> float:
        """``rho r** / (L^2 ln rho)``, large in the mean-field regime."""
        if self.L < 2:
            return float("inf")
        return strong_recombination_ratio(self.recombination, self.rho)


@dataclass
class PopulationState:
    genomes: np.ndarray
    L: int
    generation: int = 0

    def __post_init__(self):
        if self.genomes.ndim != 2 or self.genomes.shape[1] != bitset.n_words(self.L):
            raise ValueError("genome array has the wrong shape for L loci")

    @property
    def N(self) -> int:
        return self.genomes.shape[0]

    @classmethod
    def from_alleles(cls, plus: np.ndarray, generation: int = 0) -> "PopulationState":
        """Build from an ``(N, L)`` boolean array marking +1 alleles."""
        plus = np.asarray(plus, dtype=bool)
        return cls(bitset.pack(plus), plus.shape[1], generation)

    def alleles(self) -> np.ndarray:
        return bitset.unpack(self.genomes, self.L)

    def traits(self) -> np.ndarray:
        return (2.0 * bitset.popcount(self.genomes) - self.L) / self.L


def _mutate(genomes: np.ndarray, L: int, theta: MutationRates, N: int, rng) -> None:
    """Independent per-locus flips, drawn sparsely.

    For each direction a Binomial number of (genome, locus) slots is chosen
    uniformly without replacement, which selects every slot independently with
    the right probability. Only slots holding the source allele are flipped,
    judged on the state before either direction is applied.
    """
    n_slots = genomes.shape[0] * L
    flips = []
    for rate, source in ((theta.theta_plus / N, 0), (theta.theta_minus / N, 1)):
        if rate <= 0:
            continue
        k = rng.binomial(n_slots, rate)
        if k == 0:
            continue
        slots = rng.choice(n_slots, size=k, replace=False)
        rows, loci = np.divmod(slots, L)
        words, bits = np.divmod(loci, 64)
        current = (genomes[rows, words] >> bits.astype(np.uint64)) & np.uint64(1)
        keep = current == source
        flips.append((rows[keep], words[keep], bits[keep]))
    for rows, words, bits in flips:
        np.bitwise_xor.at(genomes, (rows, words), np.left_shift(np.uint64(1), bits.astype(np.uint64)))


def step_generation(state: PopulationState, cfg: SimConfig, rng: np.random.Generator,
                    fitness: Optional[FitnessSpec] = None) -> PopulationState:
    """One generation of selection, recombination and mutation."""
    G = state.genomes
    N, L = cfg.N, state.L
    spec = cfg.fitness if fitness is None else fitness
    W = spec.U(state.traits())
    logw = (L / N) * W
    if not np.all(np.isfinite(logw)):
        raise SimulationError("non-finite fitness weights")
    w = np.exp(logw - logw.max())
    cw = np.cumsum(w)
    # inversion with sorted uniforms is cache friendly; a uniform shuffle then
    # restores an i.i.d. sequence of parent draws
    u = np.sort(rng.random(2 * N)) * cw[-1]
    parents = rng.permutation(np.searchsorted(cw, u, side="right"))
    np.minimum(parents, G.shape[0] - 1, out=parents)
    p1, p2 = parents[:N], parents[N:]

    child = G[p1]
    if cfg.rho > 0:
        rec = np.flatnonzero(rng.random(N) < cfg.rho / N)
        if rec.size:
            masks = cfg.recombination.sample_masks(rng, rec.size)
            child[rec] = (G[p1[rec]] & masks) | (G[p2[rec]] & ~masks & bitset.valid_mask(L))
    if cfg.mutation.total > 0:
        _mutate(child, L, cfg.mutation, N, rng)
    return PopulationState(child, L, state.generation + 1)


def initial_state(cfg: SimConfig, rng: np.random.Generator) -> PopulationState:
    N, L = cfg.N, cfg.L
    kind = cfg.init.kind
    if kind in ("all_plus", "all_minus"):
        return PopulationState.from_alleles(np.full((N, L), kind == "all_plus"))
    if kind == "frequencies":
        return PopulationState.from_alleles(rng.random((N, L)) < np.asarray(cfg.init.freqs))
    th = cfg.mutation
    if th.total <= 0:
        raise ValueError("neutral initial conditions need a positive total mutation rate")
    if kind == "neutral_beta":
        p = rng.beta(2 * th.theta_plus, 2 * th.theta_minus, size=L) if min(th.theta_plus, th.theta_minus) > 0 \
            else np.full(L, float(th.theta_plus > 0))
        counts = np.rint(p * N).astype(int)
        plus = rng.random((N, L)).argsort(axis=0) < counts[None, :]
        return PopulationState.from_alleles(plus)
    plus = rng.random((N, L)) < th.theta_plus / th.total
    state = PopulationState.from_alleles(plus)
    neutral = FitnessSpec.linear(0.0)
    burn = 10 * N if cfg.init.burn_in is None else cfg.init.burn_in
    for _ in range(burn):
        state = step_generation(state, cfg, rng, fitness=neutral)
    return PopulationState(state.genomes, L, 0)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass
class PopulationStats:
    p: np.ndarray
    histogram: np.ndarray
    trait_mean: float
    trait_var: float
    pairs: np.ndarray
    ld: np.ndarray
    triples: np.ndarray
    le_dev: np.ndarray

    @property
    def mean_p(self) -> float:
        return float(self.p.mean())

    @property
    def sigma2_hat(self) -> float:
        """``4 mean(p (1 - p))``, the finite-population analogue of the genetic variance."""
        return float(4.0 * np.mean(self.p * (1.0 - self.p)))


def sample_pairs(L: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` distinct-locus pairs, or all pairs when there are at most ``n``."""
    if L < 2 or n <= 0:
        return np.zeros((0, 2), dtype=int)
    if L * (L - 1) // 2 <= n:
        return np.array(np.triu_indices(L, 1)).T
    a = rng.integers(0, L, size=n)
    b = (a + rng.integers(1, L, size=n)) % L
    return np.sort(np.stack([a, b], axis=1), axis=1)


def sample_triples(L: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if L < 3 or n <= 0:
        return np.zeros((0, 3), dtype=int)
    return np.sort(np.array([rng.choice(L, 3, replace=False) for _ in range(n)]), axis=1)


def population_stats(state: PopulationState, pairs=None, triples=None, bins: int = 20) -> PopulationStats:
    """Allele frequencies, trait moments, pairwise LD and three-locus LE deviations.

    ``pairs`` and ``triples`` default to all pairs and no triples.
    """
    bits = state.alleles()
    N, L = bits.shape
    p = bits.mean(axis=0)
    hist = np.histogram(p, bins=bins, range=(0.0, 1.0))[0] / L
    z = state.traits()
    if pairs is None:
        pairs = np.array(np.triu_indices(L, 1)).T
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if len(pairs):
        both = np.mean(bits[:, pairs[:, 0]] & bits[:, pairs[:, 1]], axis=0)
        ld = both - p[pairs[:, 0]] * p[pairs[:, 1]]
    else:
        ld = np.zeros(0)
    triples = np.zeros((0, 3), dtype=int) if triples is None else np.asarray(triples, dtype=int).reshape(-1, 3)
    le_dev = np.empty(len(triples))
    for k, (a, b, c) in enumerate(triples):
        code = bits[:, a] + 2 * bits[:, b].astype(int) + 4 * bits[:, c].astype(int)
        table = np.bincount(code, minlength=8) / N
        le_dev[k] = np.linalg.norm(table - le_projection(table))
    return PopulationStats(p, hist, float(z.mean()), float(z.var()), pairs, ld, triples, le_dev)


@dataclass
class TrajectoryRecord:
    """Statistics at each recorded generation; row ``k`` of every array belongs to ``gen[k]``."""

    N: int
    L: int
    gen: np.ndarray
    p: np.ndarray
    histogram: np.ndarray
    trait_mean: np.ndarray
    trait_var: np.ndarray
    mean_abs_D: np.ndarray
    le_dev: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.gen / self.N

    @property
    def mean_p(self) -> np.ndarray:
        return self.p.mean(axis=1)

    @property
    def het(self) -> np.ndarray:
        return np.mean(2.0 * self.p * (1.0 - self.p), axis=1)

    @property
    def sigma2_hat(self) -> np.ndarray:
        return np.mean(4.0 * self.p * (1.0 - self.p), axis=1)

    @property
    def mean_le_dev(self) -> np.ndarray:
        if self.le_dev.shape[1] == 0:
            return np.full(len(self.gen), np.nan)
        return self.le_dev.mean(axis=1)

    def columns(self) -> dict:
        """Scalar time series, keyed in output-column order."""
        return {
            "gen": self.gen, "t": self.t, "trait_mean": self.trait_mean,
            "trait_var": self.trait_var, "mean_p": self.mean_p, "het": self.het,
            "sigma2_hat": self.sigma2_hat, "L_trait_var": self.L * self.trait_var,
            "mean_abs_D": self.mean_abs_D, "mean_le_dev": self.mean_le_dev,
        }


def run_simulation(cfg: SimConfig, rng: Optional[np.random.Generator] = None) -> TrajectoryRecord:
    """Run ``cfg.generations`` generations, recording every ``cfg.stride`` and at the end.

    Without an explicit ``rng`` the stream comes from ``cfg.seed``. The pairs and
    triples used for LD diagnostics are drawn once, from a separate stream, so
    the diagnostics never perturb the dynamics.
    """
    if rng is None:
        rng = make_rng(cfg.seed)
    diag_rng = rng.spawn(1)[0]
    pairs = sample_pairs(cfg.L, cfg.n_pairs, diag_rng)
    triples = sample_triples(cfg.L, cfg.n_triples, diag_rng)

    state = initial_state(cfg, rng)
    rows = []

    def record(s):
        st = population_stats(s, pairs, triples, cfg.hist_bins)
        rows.append((s.generation, st))

    record(state)
    for k in range(1, cfg.generations + 1):
        state = step_generation(state, cfg, rng)
        if k % cfg.stride == 0 or k == cfg.generations:
            record(state)

    stats = [r[1] for r in rows]
    ratio = cfg.recombination_ratio if cfg.rho > 1 and cfg.L > 1 else 0.0
    return TrajectoryRecord(
        N=cfg.N, L=cfg.L,
        gen=np.array([r[0] for r in rows]),
        p=np.array([s.p for s in stats]),
        histogram=np.array([s.histogram for s in stats]),
        trait_mean=np.array([s.trait_mean for s in stats]),
        trait_var=np.array([s.trait_var for s in stats]),
        mean_abs_D=np.array([np.abs(s.ld).mean() if s.ld.size else 0.0 for s in stats]),
        le_dev=np.array([s.le_dev for s in stats]).reshape(len(stats), len(triples)),
        meta={"pairs": pairs, "triples": triples, "recombination_ratio": ratio},
    )
