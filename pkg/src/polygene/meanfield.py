"""Mean-field limit of a single locus: particle and grid solvers.

The frequency ``f`` of the +1 allele at a typical locus follows

    df = sbar(law(f)) f (1 - f) dt + (theta+ (1 - f) - theta- f) dt + sqrt(f (1 - f)) dB,

with ``sbar(law) = 2 U'(E[2 f - 1])``. ``evolve_particles`` runs an interacting
particle Euler-Maruyama scheme; ``evolve_density`` integrates the matching
nonlinear Fokker-Planck equation with a conservative finite-volume scheme.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .hypercube import FitnessSpec, MutationRates
from .stationary import StationaryDensity

EXCURSION_LO, EXCURSION_HI = -0.1, 1.1


class SchemeError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Laws on [0, 1]
# ---------------------------------------------------------------------------

_GAUSS3_NODES = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GAUSS3_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass
class ParticleEnsemble:
    f: np.ndarray
    t: float = 0.0

    def expect(self, fn) -> float:
        return float(np.mean(fn(self.f)))


@dataclass
class GridDensity:
    """Cell averages of a density on ``K`` equal cells of [0, 1]."""

    u: np.ndarray
    t: float = 0.0

    @property
    def K(self) -> int:
        return len(self.u)

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.K) + 0.5) / self.K

    def mass(self) -> float:
        return float(self.u.sum() / self.K)

    def expect(self, fn) -> float:
        # three-point Gauss rule per cell, exact for polynomials up to degree five
        h = 1.0 / self.K
        x = self.centers[:, None] + 0.5 * h * _GAUSS3_NODES[None, :]
        return float(np.sum(self.u[:, None] * fn(x) * _GAUSS3_WEIGHTS[None, :]) * h)


def _expect(measure, fn) -> float:
    if hasattr(measure, "expect"):
        return measure.expect(fn)
    arr = np.asarray(measure, dtype=float)
    return float(np.mean(fn(arr)))


def mean_trait(measure) -> float:
    """``<measure, 2Id - 1>``; arrays are read as empirical particle laws, scalars as point masses."""
    return _expect(measure, lambda x: 2.0 * x - 1.0)


def sbar(measure, spec: FitnessSpec) -> float:
    """Mean-field selection coefficient ``2 U'(<measure, 2Id - 1>)``."""
    return float(2.0 * spec.dU(mean_trait(measure)))


def genetic_variance(measure) -> float:
    """``4 E[x (1 - x)]``."""
    return _expect(measure, lambda x: 4.0 * x * (1.0 - x))


@dataclass(frozen=True)
class InitialLaw:
    """Initial condition for either solver.

    kind ``"pi"``: the stationary law ``Pi_y`` for ``y`` and ``theta``;
    ``"point"``: a point mass at ``point``; ``"samples"``: the empirical law
    of ``values`` (e.g. simulated allele frequencies); ``"histogram"``: bin
    ``edges`` with probabilities ``values``, uniform within each bin.
    """

    kind: str
    y: float = 0.0
    theta: Optional[MutationRates] = None
    point: float = 0.5
    values: Optional[np.ndarray] = field(default=None, repr=False)
    edges: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def pi(cls, y: float, theta: MutationRates) -> "InitialLaw":
        return cls("pi", y=float(y), theta=theta)

    @classmethod
    def point_mass(cls, x0: float) -> "InitialLaw":
        return cls("point", point=float(x0))

    @classmethod
    def from_samples(cls, values) -> "InitialLaw":
        return cls("samples", values=np.asarray(values, dtype=float))

    @classmethod
    def histogram(cls, edges, probs) -> "InitialLaw":
        probs = np.asarray(probs, dtype=float)
        return cls("histogram", edges=np.asarray(edges, dtype=float), values=probs / probs.sum())

    def sample(self, rng: np.random.Generator, M: int) -> np.ndarray:
        if self.kind == "pi":
            return StationaryDensity(self.y, self.theta).sample(rng, M)
        if self.kind == "point":
            return np.full(M, self.point)
        if self.kind == "samples":
            return rng.choice(self.values, size=M, replace=True)
        if self.kind == "histogram":
            b = rng.choice(len(self.values), size=M, p=self.values)
            lo, hi = self.edges[b], self.edges[b + 1]
            return lo + (hi - lo) * rng.random(M)
        raise ValueError(f"unknown initial law {self.kind!r}")

    def cell_averages(self, K: int) -> np.ndarray:
        edges = np.linspace(0.0, 1.0, K + 1)
        if self.kind == "pi":
            return StationaryDensity(self.y, self.theta).cell_averages(K)
        if self.kind == "point":
            mass = np.zeros(K)
            mass[min(int(self.point * K), K - 1)] = 1.0
        elif self.kind == "samples":
            idx = np.minimum((self.values * K).astype(int), K - 1)
            mass = np.bincount(idx, minlength=K) / len(self.values)
        elif self.kind == "histogram":
            cdf = np.interp(edges, self.edges, np.concatenate([[0.0], np.cumsum(self.values)]))
            mass = np.diff(cdf)
        else:
            raise ValueError(f"unknown initial law {self.kind!r}")
        return mass * K


@dataclass
class MeanFieldConfig:
    spec: FitnessSpec
    theta: MutationRates
    init: InitialLaw
    T: float = 1.0
    dt: Optional[float] = None
    M: int = 100_000
    K: int = 400
    record_every: int = 10

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 0 or self.M < 1 or self.K < 2 or self.record_every < 1:
            raise ValueError("invalid mean-field configuration")


@dataclass
class MeanFieldRun:
    """Recorded statistics of a mean-field solve, one row per recorded time."""

    t: np.ndarray
    mean_trait: np.ndarray
    sbar: np.ndarray
    sigma2: np.ndarray
    mean_f: np.ndarray
    final: object = None
    snapshots: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def _n_steps(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("horizon T must be an integer multiple of dt")
    return n


def evolve_particles(cfg: MeanFieldConfig, rng: np.random.Generator,
                     snapshot_times=()) -> MeanFieldRun:
    """Interacting-particle Euler-Maruyama solve.

    Each step first computes ``sbar`` from the current ensemble, then moves all
    particles. Positions are clamped to [0, 1] and the noise amplitude uses
    ``max(f (1 - f), 0)``.
    """
    dt = cfg.dt if cfg.dt is not None else 1e-3
    n = _n_steps(cfg.T, dt)
    tp, tm = cfg.theta.theta_plus, cfg.theta.theta_minus
    f = np.clip(cfg.init.sample(rng, cfg.M), 0.0, 1.0).astype(float)
    noise_amp = np.empty_like(f)
    sqdt = np.sqrt(dt)
    snap_steps = {int(round(s / dt)): s for s in snapshot_times}

    rec_t, rec_m, rec_s, rec_v, rec_f = [], [], [], [], []
    snapshots = {}
    unstable = 0

    def record(k, sb):
        rec_t.append(k * dt)
        rec_m.append(2.0 * f.mean() - 1.0)
        rec_s.append(sb)
        rec_v.append(4.0 * np.mean(f * (1.0 - f)))
        rec_f.append(f.mean())

    for k in range(n + 1):
        sb = float(2.0 * cfg.spec.dU(2.0 * f.mean() - 1.0))
        if k % cfg.record_every == 0 or k == n:
            record(k, sb)
        if k in snap_steps:
            snapshots[snap_steps[k]] = f.copy()
        if k == n:
            break
        het = f * (1.0 - f)
        np.maximum(het, 0.0, out=noise_amp)
        np.sqrt(noise_amp, out=noise_amp)
        noise = rng.standard_normal(f.size)
        noise *= noise_amp
        noise *= sqdt
        # drift s f (1 - f) + theta+ (1 - f) - theta- f, added in place
        het *= sb * dt
        f *= 1.0 - (tp + tm) * dt
        f += tp * dt
        f += het
        f += noise
        if f.min() < EXCURSION_LO or f.max() > EXCURSION_HI:
            unstable += 1
        np.clip(f, 0.0, 1.0, out=f)

    if n and unstable > 0.01 * n:
        warnings.warn(f"particle excursions outside [-0.1, 1.1] in {unstable} of {n} steps; reduce dt")
    return MeanFieldRun(
        t=np.array(rec_t), mean_trait=np.array(rec_m), sbar=np.array(rec_s),
        sigma2=np.array(rec_v), mean_f=np.array(rec_f),
        final=ParticleEnsemble(f, n * dt), snapshots=snapshots,
        diagnostics={"unstable_steps": unstable, "steps": n, "dt": dt},
    )


def _density_bands(K: int, sb: float, theta: MutationRates, dt: float) -> np.ndarray:
    """Banded form of ``I - dt A`` for the upwind / centred finite-volume operator."""
    h = 1.0 / K
    xc = (np.arange(K) + 0.5) * h
    a = xc * (1.0 - xc)
    xf = np.arange(1, K) * h
    b = sb * xf * (1.0 - xf) + theta.theta_plus * (1.0 - xf) - theta.theta_minus * xf
    bp, bm = np.maximum(b, 0.0), np.minimum(b, 0.0)
    # flux through interface i+1/2: F = cl * u_i + cr * u_{i+1}
    cl = bp + a[:-1] / (2 * h)
    cr = bm - a[1:] / (2 * h)
    diag = np.zeros(K)
    upper = np.zeros(K)
    lower = np.zeros(K)
    # du_i/dt = (F_{i-1/2} - F_{i+1/2}) / h
    diag[:-1] -= cl / h
    diag[1:] += cr / h
    upper[1:] = -cr / h     # coefficient of u_{i+1} in row i
    lower[:-1] = cl / h     # coefficient of u_{i-1} in row i
    ab = np.zeros((3, K))
    ab[0] = -dt * upper
    ab[1] = 1.0 - dt * diag
    ab[2] = -dt * lower
    return ab


def evolve_density(cfg: MeanFieldConfig, snapshot_times=()) -> MeanFieldRun:
    """Finite-volume solve of the nonlinear Fokker-Planck equation.

    Drift is upwinded, the diffusion of ``x (1 - x) u / 2`` is centred, both
    boundaries carry zero flux, and each step is backward Euler with ``sbar``
    taken from the density at the start of the step.
    """
    dt = cfg.dt if cfg.dt is not None else 1e-4
    n = _n_steps(cfg.T, dt)
    K = cfg.K
    grid = GridDensity(cfg.init.cell_averages(K))
    grid.u = grid.u / grid.mass()
    snap_steps = {int(round(s / dt)): s for s in snapshot_times}

    rec_t, rec_m, rec_s, rec_v, rec_f = [], [], [], [], []
    snapshots = {}
    worst_drift = 0.0
    for k in range(n + 1):
        m = grid.expect(lambda x: 2.0 * x - 1.0)
        sb = float(2.0 * cfg.spec.dU(m))
        if k % cfg.record_every == 0 or k == n:
            rec_t.append(k * dt)
            rec_m.append(m)
            rec_s.append(sb)
            rec_v.append(genetic_variance(grid))
            rec_f.append(0.5 * (m + 1.0))
        if k in snap_steps:
            snapshots[snap_steps[k]] = grid.u.copy()
        if k == n:
            break
        u = solve_banded((1, 1), _density_bands(K, sb, cfg.theta, dt), grid.u)
        if u.min() < -1e-12:
            raise SchemeError(f"negative cell value {u.min():.3e} at t={(k + 1) * dt:.4g}")
        u = np.maximum(u, 0.0)
        mass = u.sum() / K
        worst_drift = max(worst_drift, abs(mass - 1.0))
        grid = GridDensity(u / mass, (k + 1) * dt)

    if worst_drift > 1e-8:
        warnings.warn(f"mass drift of {worst_drift:.2e} in a single step")
    return MeanFieldRun(
        t=np.array(rec_t), mean_trait=np.array(rec_m), sbar=np.array(rec_s),
        sigma2=np.array(rec_v), mean_f=np.array(rec_f), final=grid, snapshots=snapshots,
        diagnostics={"max_mass_drift_per_step": worst_drift, "steps": n, "dt": dt},
    )


@dataclass
class LandeResidual:
    t: np.ndarray
    derivative: np.ndarray
    lande_term: np.ndarray
    mutation_term: np.ndarray
    residual: np.ndarray

    def relative_l2(self) -> float:
        denom = np.linalg.norm(self.derivative)
        if denom == 0:
            return 0.0 if np.linalg.norm(self.residual) == 0 else np.inf
        return float(np.linalg.norm(self.residual) / denom)


def lande_residual(t, mean_trait_series, sigma2, spec: FitnessSpec,
                   theta: Optional[MutationRates] = None, mean_f=None) -> LandeResidual:
    """Residual of ``d/dt E[2f - 1] = U'(E[2f - 1]) sigma^2`` at interior record times.

    The derivative is a central difference of the recorded mean trait. When
    ``theta`` has nonzero rates, the mutation drift ``2 (theta+ - |theta| E[f])``
    is reported separately and subtracted as well.
    """
    t = np.asarray(t, dtype=float)
    m = np.asarray(mean_trait_series, dtype=float)
    v = np.asarray(sigma2, dtype=float)
    if len(t) < 3:
        raise ValueError("need at least three recorded times to difference")
    deriv = (m[2:] - m[:-2]) / (t[2:] - t[:-2])
    lande = spec.dU(m[1:-1]) * v[1:-1]
    if theta is not None and theta.total > 0:
        ef = 0.5 * (m[1:-1] + 1.0) if mean_f is None else np.asarray(mean_f)[1:-1]
        mut = 2.0 * (theta.theta_plus - theta.total * ef)
    else:
        mut = np.zeros_like(deriv)
    return LandeResidual(t[1:-1], deriv, lande, mut, deriv - lande - mut)
