"""Recombination models: free recombination, a single crossover and Poisson crossovers.

Loci ``0..L-1`` sit at positions ``(i + 1) / (L + 1)`` on the unit interval. A
sampled mask ``J`` is the set of loci inherited from the first parent; the
second parent supplies the complement.

Crossover densities are tabulated on a fixed 1024-point grid and linearly
interpolated between nodes. Interval masses are integrated exactly for that
piecewise-linear density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Union

import numpy as np

from . import bitset
from .hypercube import MAX_LOCI, HypercubeError

GRID_POINTS = 1024
KINDS = ("free", "single", "poisson")

DensityLike = Union[None, Callable[[np.ndarray], np.ndarray], np.ndarray, str, Path]


class DegenerateRecombination(ValueError):
    pass


def _tabulate(density: DensityLike) -> np.ndarray:
    grid = np.linspace(0.0, 1.0, GRID_POINTS)
    if density is None:
        values = np.ones(GRID_POINTS)
    elif callable(density):
        values = np.asarray(density(grid), dtype=float) * np.ones(GRID_POINTS)
    elif isinstance(density, (str, Path)):
        pos, val = np.loadtxt(density, comments="#", unpack=True)
        order = np.argsort(pos)
        values = np.interp(grid, pos[order], val[order])
    else:
        arr = np.asarray(density, dtype=float)
        if arr.ndim == 2:
            order = np.argsort(arr[:, 0])
            values = np.interp(grid, arr[order, 0], arr[order, 1])
        elif arr.shape == (GRID_POINTS,):
            values = arr.copy()
        else:
            raise ValueError("density array must be a (n, 2) table or have 1024 grid values")
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise ValueError("crossover density must be finite and strictly positive on [0, 1]")
    return values


@dataclass(frozen=True)
class RecombinationModel:
    """One of the three crossover families on ``L`` loci.

    ``density`` is the crossover-position density (``single``) or the shape of
    the crossover intensity (``poisson``), normalised to unit mass; for
    ``poisson`` the expected number of crossovers is ``lam``.
    """

    kind: str
    L: int
    density: np.ndarray = field(default=None, repr=False)
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"recombination kind must be one of {KINDS}, got {self.kind!r}")
        if self.L < 1:
            raise ValueError("need at least one locus")
        if self.kind == "poisson" and not self.lam > 0:
            raise ValueError("Poisson crossover model needs a positive total intensity")
        values = _tabulate(self.density)
        values.setflags(write=False)
        object.__setattr__(self, "density", values)

    @classmethod
    def free(cls, L: int) -> "RecombinationModel":
        return cls("free", L)

    @classmethod
    def single(cls, L: int, density: DensityLike = None) -> "RecombinationModel":
        return cls("single", L, density)

    @classmethod
    def poisson(cls, L: int, lam: float, intensity: DensityLike = None) -> "RecombinationModel":
        return cls("poisson", L, intensity, float(lam))

    # -- geometry -----------------------------------------------------------

    @property
    def positions(self) -> np.ndarray:
        return np.arange(1, self.L + 1) / (self.L + 1)

    def cdf(self, u) -> np.ndarray:
        """Mass of ``[0, u]`` under the normalised density (exact for linear interpolation)."""
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        h = 1.0 / (GRID_POINTS - 1)
        d = self.density
        cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (d[1:] + d[:-1]))])
        k = np.minimum((u / h).astype(int), GRID_POINTS - 2)
        s = u - k * h
        slope = (d[k + 1] - d[k]) / h
        partial = cum[k] + d[k] * s + 0.5 * slope * s * s
        return partial / cum[-1]

    def _gap_masses(self) -> np.ndarray:
        """Normalised mass between consecutive positions, starting at 0 and ending at 1."""
        return self._gaps

    @cached_property
    def _gaps(self) -> np.ndarray:
        edges = np.concatenate([[0.0], self.positions, [1.0]])
        return np.diff(self.cdf(edges))

    @cached_property
    def _gap_cdf(self) -> np.ndarray:
        return np.cumsum(self._gaps)[:-1]

    def _flip_probabilities(self) -> np.ndarray:
        """Poisson model: probability of an odd number of crossovers in ``(u_{i-1}, u_i]``."""
        lam_gaps = self.lam * self._gap_masses()[: self.L]
        return 0.5 * (1.0 - np.exp(-2.0 * lam_gaps))

    # -- sampling -------------------------------------------------------------

    def sample_masks(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` masks packed as ``(n, n_words(L))`` uint64 rows."""
        L = self.L
        if self.kind == "free":
            words = rng.integers(0, 2**64, size=(n, bitset.n_words(L)), dtype=np.uint64)
            return words & bitset.valid_mask(L)
        if self.kind == "single":
            # only the number of loci left of the crossover matters
            k = np.searchsorted(self._gap_cdf, rng.random(n), side="right")
            return _prefix_table(L)[k]
        flips = rng.random((n, L)) < self._flip_probabilities()
        inside = (np.cumsum(flips, axis=1) % 2) == 0
        return bitset.pack(inside)

    def sample_mask(self, rng: np.random.Generator) -> tuple[int, ...]:
        """One mask as a sorted tuple of 0-based loci."""
        bits = bitset.unpack(self.sample_masks(rng, 1), self.L)[0]
        return tuple(np.flatnonzero(bits).tolist())

    # -- exact summaries --------------------------------------------------------

    def subset_law(self) -> np.ndarray:
        """Exact (unsymmetrised) law of the mask as a dense vector over ``2^L`` subsets."""
        L = self.L
        if L > MAX_LOCI:
            raise HypercubeError(f"dense subset law limited to L <= {MAX_LOCI}")
        if self.kind == "free":
            return np.full(1 << L, 1.0 / (1 << L))
        if self.kind == "single":
            nu = np.zeros(1 << L)
            for k, mass in enumerate(self._gap_masses()):
                nu[(1 << k) - 1] += mass
            return nu
        q = self._flip_probabilities()
        masks = np.arange(1 << L)
        bits = (masks[:, None] >> np.arange(L)[None, :]) & 1
        prev = np.concatenate([np.ones((1 << L, 1), dtype=int), bits[:, :-1]], axis=1)
        flip = bits != prev
        return np.prod(np.where(flip, q, 1.0 - q), axis=1)

    def pairwise_r(self, l1: int, l2: int) -> float:
        """Probability that a mask separates loci ``l1`` and ``l2``."""
        if l1 == l2:
            raise ValueError("recombination rate needs two distinct loci")
        return float(self.pairwise_matrix()[l1, l2])

    def pairwise_matrix(self) -> np.ndarray:
        """All pairwise rates; the diagonal is set to 0."""
        L = self.L
        if self.kind == "free":
            r = np.full((L, L), 0.5)
        else:
            c = self.cdf(self.positions)
            mass = np.abs(c[:, None] - c[None, :])
            if self.kind == "single":
                r = mass
            else:
                r = 0.5 * (1.0 - np.exp(-2.0 * self.lam * mass))
        np.fill_diagonal(r, 0.0)
        return r

    def beta_subset(self, I) -> float:
        """Probability that a mask splits ``I`` (``1 - 2 nu^I(I)``)."""
        loci = sorted(set(int(i) for i in I))
        if not loci:
            raise ValueError("beta is defined for nonempty subsets")
        if len(loci) == 1:
            return 0.0
        if self.kind == "free":
            return 1.0 - 2.0 ** (1 - len(loci))
        c = self.cdf(self.positions[loci])
        if self.kind == "single":
            return float(c[-1] - c[0])
        seg = np.diff(c) * self.lam
        return float(1.0 - np.prod(0.5 * (1.0 + np.exp(-2.0 * seg))))


_PREFIX_CACHE: dict[int, np.ndarray] = {}


def _prefix_table(L: int) -> np.ndarray:
    if L not in _PREFIX_CACHE:
        _PREFIX_CACHE[L] = bitset.prefix_table(L)
    return _PREFIX_CACHE[L]


def harmonic_stats(model: RecombinationModel) -> tuple[np.ndarray, float]:
    """Per-locus harmonic recombination rates ``r*_l`` and their genome average ``r**``."""
    L = model.L
    if L < 2:
        raise ValueError("harmonic recombination rates need at least two loci")
    r = model.pairwise_matrix()
    off = ~np.eye(L, dtype=bool)
    if np.any(r[off] <= 0):
        raise DegenerateRecombination("some pair of loci never recombines (r = 0)")
    inv = np.where(off, 1.0 / np.where(off, r, 1.0), 0.0)
    r_star = (L - 1) / inv.sum(axis=1)
    r_starstar = L / np.sum(1.0 / r_star)
    return r_star, float(r_starstar)


def strong_recombination_ratio(model: RecombinationModel, rho: float) -> float:
    """``rho r** / (L^2 ln rho)``; the mean-field regime needs this to be large."""
    if rho <= 1:
        return 0.0
    _, rss = harmonic_stats(model)
    return rho * rss / (model.L**2 * math.log(rho))


def empirical_pairwise(masks_bool: np.ndarray) -> np.ndarray:
    """Fraction of masks separating each pair of loci, from an ``(n, L)`` boolean array."""
    m = masks_bool.astype(float)
    n = m.shape[0]
    both_in = m.T @ m
    both_out = (1 - m).T @ (1 - m)
    return 1.0 - (both_in + both_out) / n
