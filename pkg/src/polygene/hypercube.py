"""Exact distributions on the hypercube {-1,+1}^L and the operators acting on them.

Everything here is dense: a distribution over L loci is a vector of 2^L
weights, so L is capped at ``MAX_LOCI``. These routines are the brute-force
reference that the simulators and the mean-field code are checked against.

Indexing convention
-------------------
A genotype ``gamma`` maps to the integer ``sum_i ((gamma_i + 1) / 2) << i``,
i.e. bit ``i`` is set iff locus ``i`` (0-based) carries the +1 allele. Locus
subsets use the same encoding (bit ``i`` set iff ``i`` is in the subset), so a
law on subsets is itself a vector of length 2^L and its marginals are computed
exactly like genotype marginals. For a subset ``A`` the restricted hypercube
``{-1,+1}^A`` is indexed with bit ``j`` standing for the ``j``-th smallest
element of ``A``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence, Union

import numpy as np

MAX_LOCI = 12
SUM_TOL = 1e-12

Subset = Union[int, Iterable[int]]


class HypercubeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitnessSpec:
    """Log-fitness of the form ``W(gamma) = U(Z(gamma))``.

    ``form == "linear"`` gives ``U(z) = beta * z``; ``form == "quadratic"``
    gives ``U(z) = -kappa * (z - z_star)**2``.
    """

    form: str = "quadratic"
    beta: float = 0.0
    kappa: float = 0.0
    z_star: float = 0.0

    def __post_init__(self):
        if self.form not in ("linear", "quadratic"):
            raise HypercubeError(f"unknown fitness form {self.form!r}")
        for name in ("beta", "kappa", "z_star"):
            if not math.isfinite(getattr(self, name)):
                raise HypercubeError(f"fitness coefficient {name} must be finite")
        if self.form == "quadratic" and abs(self.z_star) > 1:
            warnings.warn(f"optimum z*={self.z_star} lies outside the trait range [-1, 1]")

    @classmethod
    def linear(cls, beta: float) -> "FitnessSpec":
        return cls(form="linear", beta=float(beta))

    @classmethod
    def quadratic(cls, kappa: float, z_star: float = 0.0) -> "FitnessSpec":
        return cls(form="quadratic", kappa=float(kappa), z_star=float(z_star))

    @classmethod
    def from_mean_field_kappa(cls, kappa: float, z_star: float = 0.0) -> "FitnessSpec":
        """Quadratic fitness whose mean-field coefficient is ``-2 kappa (m - z*)``.

        The stationary analysis parameterises symmetric quadratic selection by
        ``sbar = -2 kappa (m - z*)``. Since ``sbar = 2 U'(m)`` this corresponds
        to ``U(z) = -(kappa / 2) (z - z*)^2``.
        """
        return cls.quadratic(kappa / 2.0, z_star)

    @property
    def mean_field_kappa(self) -> float:
        """Inverse of :meth:`from_mean_field_kappa` (zero for linear fitness)."""
        return 2.0 * self.kappa if self.form == "quadratic" else 0.0

    def U(self, z):
        z = np.asarray(z, dtype=float)
        if self.form == "linear":
            return self.beta * z
        return -self.kappa * (z - self.z_star) ** 2

    def dU(self, z):
        z = np.asarray(z, dtype=float)
        if self.form == "linear":
            return np.full_like(z, self.beta)
        return -2.0 * self.kappa * (z - self.z_star)


@dataclass(frozen=True)
class MutationRates:
    theta_plus: float
    theta_minus: float

    def __post_init__(self):
        if not (self.theta_plus >= 0 and self.theta_minus >= 0):
            raise HypercubeError("mutation rates must be nonnegative")

    @property
    def total(self) -> float:
        return self.theta_plus + self.theta_minus

    def law(self) -> np.ndarray:
        """Mutational law as ``[P(-1), P(+1)]``."""
        if self.total <= 0:
            raise HypercubeError("mutational law undefined when both rates vanish")
        return np.array([self.theta_minus, self.theta_plus]) / self.total

    def drift(self, f):
        """One-locus mutation drift ``theta+ (1 - f) - theta- f``."""
        return self.theta_plus * (1.0 - f) - self.theta_minus * f


# ---------------------------------------------------------------------------
# Genotypes and index helpers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Genotype:
    """A single genome stored as an integer bitmask."""

    bits: int
    L: int

    def __post_init__(self):
        if self.L < 1:
            raise HypercubeError("a genotype needs at least one locus")
        if not 0 <= self.bits < (1 << self.L):
            raise HypercubeError("genotype bits out of range for L")

    @classmethod
    def from_alleles(cls, alleles: Sequence[int]) -> "Genotype":
        bits = 0
        for i, a in enumerate(alleles):
            if a not in (-1, 1):
                raise HypercubeError(f"allele at locus {i} is {a}, expected -1 or +1")
            if a == 1:
                bits |= 1 << i
        return cls(bits, len(alleles))

    @property
    def alleles(self) -> np.ndarray:
        return 2 * ((self.bits >> np.arange(self.L)) & 1) - 1


def subset_mask(A: Subset) -> int:
    """Bitmask of a locus subset given as an iterable of 0-based loci (or a mask)."""
    if isinstance(A, (int, np.integer)):
        return int(A)
    mask = 0
    for a in A:
        mask |= 1 << int(a)
    return mask


def mask_loci(mask: int, L: int) -> tuple[int, ...]:
    return tuple(i for i in range(L) if mask >> i & 1)


def _check_L(L: int) -> None:
    if not 1 <= L <= MAX_LOCI:
        raise HypercubeError(f"dense hypercube limited to 1 <= L <= {MAX_LOCI}, got {L}")


def n_loci(x: np.ndarray) -> int:
    n = len(x)
    L = n.bit_length() - 1
    if n != 1 << L:
        raise HypercubeError(f"vector length {n} is not a power of two")
    return L


@lru_cache(maxsize=None)
def allele_signs(L: int) -> np.ndarray:
    """``(2^L, L)`` array whose row ``g`` holds the +-1 alleles of genotype ``g``."""
    idx = np.arange(1 << L)
    s = 2 * ((idx[:, None] >> np.arange(L)[None, :]) & 1) - 1
    s.setflags(write=False)
    return s


@lru_cache(maxsize=None)
def restrict_index(L: int, mask: int) -> np.ndarray:
    """For every genotype on L loci, the index of its restriction to ``mask``."""
    idx = np.arange(1 << L)
    out = np.zeros(1 << L, dtype=np.int64)
    for j, locus in enumerate(mask_loci(mask, L)):
        out |= ((idx >> locus) & 1) << j
    out.setflags(write=False)
    return out


def trait_values(L: int) -> np.ndarray:
    """Additive trait ``Z`` for every genotype on L loci."""
    return allele_signs(L).mean(axis=1)


def trait_value(g: Genotype) -> float:
    return float(g.alleles.mean())


def fitness(g: Genotype, spec: FitnessSpec) -> float:
    return float(spec.U(trait_value(g)))


def fitness_vector(L: int, spec: FitnessSpec) -> np.ndarray:
    return spec.U(trait_values(L))


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HypercubeDistribution:
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        L = n_loci(w)
        _check_L(L)
        if np.any(w < 0):
            raise HypercubeError("negative weight in distribution")
        if abs(w.sum() - 1.0) > SUM_TOL:
            raise HypercubeError(f"weights sum to {w.sum()!r}, not 1")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def L(self) -> int:
        return n_loci(self.weights)

    @classmethod
    def uniform(cls, L: int) -> "HypercubeDistribution":
        _check_L(L)
        return cls(np.full(1 << L, 1.0 / (1 << L)))

    @classmethod
    def product(cls, p: Sequence[float]) -> "HypercubeDistribution":
        """Product of per-locus laws with ``P(+1) = p[i]`` at locus ``i``."""
        return cls(product_weights(np.asarray(p, dtype=float)))

    @classmethod
    def point(cls, g: Genotype) -> "HypercubeDistribution":
        w = np.zeros(1 << g.L)
        w[g.bits] = 1.0
        return cls(w)

    @classmethod
    def random(cls, L: int, rng: np.random.Generator, concentration: float = 1.0):
        _check_L(L)
        w = rng.dirichlet(np.full(1 << L, concentration))
        return cls(w / w.sum())

    def marginal(self, A: Subset) -> "HypercubeDistribution":
        m = marginal(self.weights, A)
        return HypercubeDistribution(m / m.sum())

    def le_projection(self) -> "HypercubeDistribution":
        return HypercubeDistribution(le_projection(self.weights))

    def allele_frequencies(self) -> np.ndarray:
        return allele_frequencies(self.weights)


def _w(x) -> np.ndarray:
    if isinstance(x, HypercubeDistribution):
        return x.weights
    return np.asarray(x, dtype=float)


def marginal(x, A: Subset) -> np.ndarray:
    """Marginal of ``x`` on the loci of ``A`` (a vector over ``{-1,+1}^A``).

    Works for any real vector, not only probability vectors. The empty subset
    is rejected.
    """
    x = _w(x)
    L = n_loci(x)
    mask = subset_mask(A)
    if mask == 0:
        raise HypercubeError("marginal on the empty subset")
    if mask >> L:
        raise HypercubeError("subset refers to loci beyond L")
    k = bin(mask).count("1")
    return np.bincount(restrict_index(L, mask), weights=x, minlength=1 << k)


def _marginal_or_total(x: np.ndarray, L: int, mask: int) -> np.ndarray:
    if mask == 0:
        return np.array([x.sum()])
    return np.bincount(restrict_index(L, mask), weights=x, minlength=1 << bin(mask).count("1"))


def tensor(xI: np.ndarray, yJ: np.ndarray, mask_I: int, L: int) -> np.ndarray:
    """``xI (x) yJ`` on L loci, with ``xI`` over ``I`` and ``yJ`` over the complement."""
    full = (1 << L) - 1
    a = xI[restrict_index(L, mask_I)] if mask_I else np.full(1 << L, xI[0])
    comp = full ^ mask_I
    b = yJ[restrict_index(L, comp)] if comp else np.full(1 << L, yJ[0])
    return a * b


def allele_frequencies(x) -> np.ndarray:
    """``p[l]``: total weight on genotypes carrying +1 at locus ``l``."""
    x = _w(x)
    L = n_loci(x)
    return (allele_signs(L) > 0).T.astype(float) @ x


def product_weights(p: np.ndarray) -> np.ndarray:
    L = len(p)
    _check_L(L)
    bits = allele_signs(L) > 0
    return np.prod(np.where(bits, p[None, :], 1.0 - p[None, :]), axis=1)


def le_projection(x) -> np.ndarray:
    """Product measure with the same one-locus marginals as ``x``."""
    x = _w(x)
    p = allele_frequencies(x) / x.sum()
    return product_weights(p) * x.sum()


def ld(x, l1: int, l2: int) -> float:
    """Covariance of the +1 indicators at loci ``l1`` and ``l2``."""
    if l1 == l2:
        raise HypercubeError("linkage disequilibrium needs two distinct loci")
    x = _w(x)
    L = n_loci(x)
    bits = allele_signs(L) > 0
    both = x[bits[:, l1] & bits[:, l2]].sum()
    return float(both - x[bits[:, l1]].sum() * x[bits[:, l2]].sum())


def le_deviation(x, A: Subset) -> float:
    """``||x^A - pi(x^A)||_2``."""
    m = marginal(x, A)
    return float(np.linalg.norm(m - le_projection(m)))


def drift_covariance(x) -> np.ndarray:
    """Instantaneous covariance ``delta_{g g'} x(g) - x(g) x(g')`` of genetic drift."""
    x = _w(x)
    return np.diag(x) - np.outer(x, x)


# ---------------------------------------------------------------------------
# Recombination laws on subsets
# ---------------------------------------------------------------------------


def symmetrize(nu) -> np.ndarray:
    """``(nu(I) + nu(I^c)) / 2``."""
    nu = np.asarray(nu, dtype=float)
    full = len(nu) - 1
    return 0.5 * (nu + nu[full ^ np.arange(len(nu))])


def _check_subset_law(nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    L = n_loci(nu)
    _check_L(L)
    if np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-9:
        raise HypercubeError("subset law must be a probability vector")
    return symmetrize(nu)


def free_subset_law(L: int) -> np.ndarray:
    _check_L(L)
    return np.full(1 << L, 1.0 / (1 << L))


def subset_law_marginal(nu, A: Subset) -> np.ndarray:
    """Law of ``K & A`` when ``K ~ nu`` (the marginal of ``nu`` on ``A``)."""
    return marginal(nu, A)


def beta_from_law(nu, I: Subset) -> float:
    """Probability that a mask drawn from ``nu`` splits ``I``: ``1 - 2 nu^I(I)``.

    For the empty set the convention ``beta_{} = -beta_{[L]}`` is used.
    """
    nu = symmetrize(nu)
    L = n_loci(nu)
    mask = subset_mask(I)
    if mask == 0:
        return -beta_from_law(nu, (1 << L) - 1)
    k = np.arange(len(nu))
    return float(1.0 - 2.0 * nu[(k & mask) == mask].sum())


def recombinator(x, nu) -> np.ndarray:
    """``sum_I nu(I) (x^I (x) x^{I^c} - x)`` over proper nonempty ``I``.

    ``nu`` is a law on subsets (length ``2^L``); it is symmetrised first. The
    map is evaluated bilinearly, so it also accepts non-normalised vectors
    (used by the finite-difference Jacobian checks).
    """
    x = _w(x)
    L = n_loci(x)
    nu = _check_subset_law(nu)
    full = (1 << L) - 1
    proper = nu[1:full]
    if proper.sum() == 0:
        if L > 1:
            warnings.warn("recombination law has no mass on proper subsets; recombinator is zero")
        return np.zeros_like(x)
    out = np.zeros_like(x)
    for I in range(1, full):
        if nu[I] == 0:
            continue
        xI = _marginal_or_total(x, L, I)
        xJ = _marginal_or_total(x, L, full ^ I)
        out += nu[I] * (tensor(xI, xJ, I, L) - x)
    return out


def recombinator_derivative(x, nu, h) -> np.ndarray:
    """Directional derivative of the recombinator at ``x`` along ``h``."""
    x = _w(x)
    h = np.asarray(h, dtype=float)
    L = n_loci(x)
    nu = _check_subset_law(nu)
    full = (1 << L) - 1
    out = np.zeros_like(x)
    for I in range(1, full):
        if nu[I] == 0:
            continue
        J = full ^ I
        xI, xJ = _marginal_or_total(x, L, I), _marginal_or_total(x, L, J)
        hI, hJ = _marginal_or_total(h, L, I), _marginal_or_total(h, L, J)
        out += nu[I] * (tensor(xI, hJ, I, L) + tensor(hI, xJ, I, L) - h)
    return out


@lru_cache(maxsize=None)
def linkage_basis(L: int) -> np.ndarray:
    """Matrix whose column ``I`` is the normalised linkage vector ``w_I``.

    ``w_I(gamma) = 2^{-L/2} prod_{l in I} gamma_l``; the columns form an
    orthonormal basis.
    """
    _check_L(L)
    g = np.arange(1 << L)
    parity = np.zeros((1 << L, 1 << L), dtype=np.int64)
    for I in range(1 << L):
        # number of -1 alleles of g inside I
        parity[:, I] = np.bitwise_count(~g & I)
    basis = np.where(parity % 2 == 0, 1.0, -1.0) * 2.0 ** (-L / 2)
    basis.setflags(write=False)
    return basis


def recomb_jacobian_entry(x, nu, I: Subset, J: Subset) -> float:
    """``<w_I, grad R(x) w_J>`` from the closed form.

    Zero unless ``J`` is a subset of ``I``; ``-beta_I`` on the diagonal and
    ``sum_K nu(K) 2^{1+L/2} <w_{I & K}, x> [I \\ K == J]`` strictly below it.
    """
    x = _w(x)
    L = n_loci(x)
    nu = _check_subset_law(nu)
    I, J = subset_mask(I), subset_mask(J)
    if J & ~I:
        return 0.0
    if I == J:
        return -beta_from_law(nu, I)
    full = (1 << L) - 1
    W = linkage_basis(L)
    total = 0.0
    for K in range(1, full):
        if nu[K] and (I & ~K) == J:
            total += nu[K] * 2.0 ** (1 + L / 2) * float(W[:, I & K] @ x)
    return total


def recomb_jacobian_linkage(x, nu) -> np.ndarray:
    """Full matrix of :func:`recomb_jacobian_entry` (rows ``I``, columns ``J``)."""
    L = n_loci(_w(x))
    n = 1 << L
    return np.array([[recomb_jacobian_entry(x, nu, I, J) for J in range(n)] for I in range(n)])


# ---------------------------------------------------------------------------
# Mutation and selection
# ---------------------------------------------------------------------------


def mutator(x, theta: MutationRates) -> np.ndarray:
    """``|theta| sum_l (x^{[L]\\{l}} (x) L_theta - x)``; zero when ``|theta| = 0``."""
    x = _w(x)
    L = n_loci(x)
    if theta.total == 0:
        return np.zeros_like(x)
    law = theta.law()
    full = (1 << L) - 1
    out = np.zeros_like(x)
    for l in range(L):
        rest = full ^ (1 << l)
        x_rest = _marginal_or_total(x, L, rest)
        # tensor() puts its first factor on `rest` and the second on {l}
        out += tensor(x_rest, law, rest, L) - x
    return theta.total * out


def selector(x, spec: FitnessSpec) -> np.ndarray:
    """``S(x)(g) = x(g) (W(g) - E_x[W])``."""
    x = _w(x)
    W = fitness_vector(n_loci(x), spec)
    return x * (W - x @ W)


def selector_marginal(x, A: Subset, spec: FitnessSpec) -> np.ndarray:
    """``Cov_x[W(g), 1{g|_A = gamma}]`` for every ``gamma`` over ``A``."""
    x = _w(x)
    W = fitness_vector(n_loci(x), spec)
    return marginal(x * W, A) - (x @ W) * marginal(x, A)


def selector_locus(x, locus: int, spec: FitnessSpec) -> float:
    """``S^l(x)``: the +1 coordinate of the one-locus selector marginal."""
    return float(selector_marginal(x, [locus], spec)[1])


def allelic_sbar(x, spec: FitnessSpec) -> float:
    """``2 U'(<mu_x, 2Id - 1>)`` for the allelic measure of ``x``."""
    p = allele_frequencies(x)
    return float(2.0 * spec.dU(np.mean(2 * p - 1)))
