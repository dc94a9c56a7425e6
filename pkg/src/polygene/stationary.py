"""Stationary laws of the mean-field diffusion and the self-consistency map.

A Wright-Fisher diffusion with constant selection ``y`` and mutation rates
``theta`` has stationary density

    Pi_y(x) = C_y x^(2 theta+ - 1) (1 - x)^(2 theta- - 1) exp(2 x y).

The mean-field dynamics is stationary at ``Pi_y`` exactly when ``y`` is a fixed
point of ``chi(y) = sbar(Pi_y)``.

Selection strength convention: the functions here take a coefficient
``kappa`` with ``sbar(xi) = -2 kappa (<xi, 2Id - 1> - z*)``. In terms of the
genome-level fitness this is ``U(z) = -(kappa / 2) (z - z*)^2``; see
:meth:`polygene.hypercube.FitnessSpec.from_mean_field_kappa`. With this
convention the symmetric pitchfork sits at ``kappa_c = -(4 theta + 1) / 2``.
Any :class:`FitnessSpec` can be passed instead through ``spec=``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy import integrate, optimize, special

from .hypercube import FitnessSpec, MutationRates

DEFAULT_NODES = 200
CHECK_NODES = 400
DEFAULT_Y_MAX = 20.0

ThetaLike = Union[float, MutationRates, Sequence[float]]


def as_theta(theta: ThetaLike) -> MutationRates:
    if isinstance(theta, MutationRates):
        return theta
    if np.ndim(theta) == 0:
        return MutationRates(float(theta), float(theta))
    tp, tm = theta
    return MutationRates(float(tp), float(tm))


def _require_positive(theta: MutationRates) -> None:
    if not (theta.theta_plus > 0 and theta.theta_minus > 0):
        raise ValueError("stationary laws need strictly positive mutation rates in both directions")


@lru_cache(maxsize=64)
def _jacobi_rule(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on [0, 1] and log-weights for the weight ``x^a (1 - x)^b``."""
    t, w = special.roots_jacobi(n, b, a)
    x = 0.5 * (1.0 + t)
    logw = np.log(w) - (a + b + 1.0) * math.log(2.0)
    return x, logw


class PiMoments(NamedTuple):
    C: float
    log_C: float
    mean: float
    mean_trait: float
    variance: float
    third_cumulant: float
    fourth_cumulant: float
    quadrature_error: float


def _moments(y: float, theta: MutationRates, n: int) -> tuple[float, ...]:
    a, b = 2 * theta.theta_plus - 1, 2 * theta.theta_minus - 1
    x, logw = _jacobi_rule(n, a, b)
    logt = logw + 2.0 * x * y
    log_Z = special.logsumexp(logt)
    p = np.exp(logt - log_Z)
    mean = float(p @ x)
    d = x - mean
    m2, m3, m4 = (float(p @ d**k) for k in (2, 3, 4))
    return -log_Z, mean, m2, m3, m4 - 3.0 * m2 * m2


def pi_y_moments(y: float, theta: ThetaLike, n_nodes: int = DEFAULT_NODES) -> PiMoments:
    """Normalisation and low-order moments of ``Pi_y`` by Gauss-Jacobi quadrature.

    ``quadrature_error`` is the change in the mean when the node count is doubled.
    """
    theta = as_theta(theta)
    _require_positive(theta)
    log_C, mean, var, k3, k4 = _moments(float(y), theta, n_nodes)
    _, mean_check, *_ = _moments(float(y), theta, 2 * n_nodes)
    return PiMoments(
        C=math.exp(log_C),
        log_C=log_C,
        mean=mean,
        mean_trait=2.0 * mean - 1.0,
        variance=var,
        third_cumulant=k3,
        fourth_cumulant=k4,
        quadrature_error=abs(mean - mean_check),
    )


def pi_mean_trait(y: float, theta: MutationRates, n_nodes: int = DEFAULT_NODES) -> float:
    """``<Pi_y, 2Id - 1>``, the branch value plotted against ``kappa``."""
    return 2.0 * _moments(float(y), theta, n_nodes)[1] - 1.0


@dataclass(frozen=True)
class StationaryDensity:
    """``Pi_y`` for fixed tilt ``y`` and mutation rates ``theta``."""

    y: float
    theta: MutationRates

    def __post_init__(self):
        object.__setattr__(self, "theta", as_theta(self.theta))
        _require_positive(self.theta)

    @property
    def exponents(self) -> tuple[float, float]:
        return 2 * self.theta.theta_plus - 1, 2 * self.theta.theta_minus - 1

    def moments(self) -> PiMoments:
        return pi_y_moments(self.y, self.theta)

    def pdf(self, x) -> np.ndarray:
        a, b = self.exponents
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            logp = self.moments().log_C + a * np.log(x) + b * np.log1p(-x) + 2 * x * self.y
        return np.exp(logp)

    def expect(self, fn) -> float:
        a, b = self.exponents
        x, logw = _jacobi_rule(DEFAULT_NODES, a, b)
        logt = logw + 2.0 * x * self.y
        p = np.exp(logt - special.logsumexp(logt))
        return float(p @ fn(x))

    def cdf(self, x) -> np.ndarray:
        """Distribution function by adaptive quadrature with algebraic endpoint weights."""
        a, b = self.exponents
        C = self.moments().C
        y = self.y
        out = []
        for xi in np.atleast_1d(np.asarray(x, dtype=float)):
            if xi <= 0:
                out.append(0.0)
            elif xi >= 1:
                out.append(1.0)
            elif xi <= 0.5:
                val, _ = integrate.quad(
                    lambda t: (1 - t) ** b * math.exp(2 * t * y), 0.0, xi, weight="alg", wvar=(a, 0.0)
                )
                out.append(C * val)
            else:
                val, _ = integrate.quad(
                    lambda t: t**a * math.exp(2 * t * y), xi, 1.0, weight="alg", wvar=(0.0, b)
                )
                out.append(1.0 - C * val)
        return np.clip(np.array(out), 0.0, 1.0)

    def cell_averages(self, K: int) -> np.ndarray:
        """Mean density over each of ``K`` equal cells of [0, 1]."""
        edges = self.cdf(np.linspace(0.0, 1.0, K + 1))
        return np.diff(edges) * K

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Exact draws by rejection from the untilted Beta law."""
        tp, tm = self.theta.theta_plus, self.theta.theta_minus
        y = self.y
        out = np.empty(0)
        while out.size < n:
            m = max(2 * (n - out.size), 1024)
            x = rng.beta(2 * tp, 2 * tm, size=m)
            log_acc = 2 * y * (x - 1.0) if y > 0 else 2 * y * x
            keep = x[np.log(rng.random(m)) < log_acc]
            out = np.concatenate([out, keep])
        return out[:n]


# ---------------------------------------------------------------------------
# Self-consistency map
# ---------------------------------------------------------------------------


def chi(
    y: float,
    theta: ThetaLike,
    kappa: Optional[float] = None,
    z_star: float = 0.0,
    spec: Optional[FitnessSpec] = None,
) -> float:
    """``sbar(Pi_y)``.

    Either ``kappa`` (mean-field convention, ``sbar = -2 kappa (m - z*)``) or a
    full fitness ``spec`` (``sbar = 2 U'(m)``) must be given.
    """
    theta = as_theta(theta)
    _require_positive(theta)
    m = pi_mean_trait(y, theta)
    if spec is not None:
        return float(2.0 * spec.dU(m))
    if kappa is None:
        raise ValueError("chi needs either kappa or spec")
    return -2.0 * kappa * (m - z_star)


def chi_prime(y: float, theta: ThetaLike, kappa=None, z_star=0.0, spec=None, h: float = 1e-4) -> float:
    """Central difference of :func:`chi` with step ``h``."""
    up = chi(y + h, theta, kappa, z_star, spec)
    down = chi(y - h, theta, kappa, z_star, spec)
    return (up - down) / (2 * h)


def kappa_c(theta: ThetaLike) -> float:
    """Critical disruptive strength ``-(4 theta + 1) / 2`` for symmetric mutation."""
    theta = as_theta(theta)
    if theta.theta_plus != theta.theta_minus:
        raise ValueError("the critical kappa is only defined for theta+ == theta-")
    if theta.theta_plus < 0:
        raise ValueError("mutation rate must be nonnegative")
    return -(4 * theta.theta_plus + 1) / 2


def kappa_c_numeric(theta: ThetaLike, bracket=(-50.0, -1e-3)) -> float:
    """Root of ``kappa -> chi'(0; kappa) - 1``, found from :func:`chi_prime` alone."""
    return optimize.brentq(lambda k: chi_prime(0.0, theta, kappa=k) - 1.0, *bracket, xtol=1e-12)


class FixedPoint(NamedTuple):
    y: float
    branch: float
    slope: float


def _scan_grid(y_max: float, grid_n: int) -> np.ndarray:
    lin = np.linspace(-y_max, y_max, grid_n)
    # geometric points resolve roots close to zero near the bifurcation
    geo = np.geomspace(1e-4, y_max, grid_n)
    return np.unique(np.concatenate([lin, geo, -geo, [0.0]]))


def fixed_points(
    kappa: Optional[float] = None,
    z_star: float = 0.0,
    theta: ThetaLike = 0.6,
    y_max: float = DEFAULT_Y_MAX,
    grid_n: int = 401,
    spec: Optional[FitnessSpec] = None,
    tol: float = 1e-10,
) -> list[FixedPoint]:
    """All solutions of ``chi(y) = y`` on ``[-y_max, y_max]``.

    Sign changes of ``chi(y) - y`` on a scan grid are refined by bisection.
    Roots closer than 1e-8 are merged. If no sign change is seen, the root
    nearest zero is located by a local solve and a warning is issued.
    """
    if grid_n < 100:
        raise ValueError("grid_n must be at least 100")
    if not y_max > 0:
        raise ValueError("y_max must be positive")
    theta = as_theta(theta)

    def g(y):
        return chi(y, theta, kappa, z_star, spec) - y

    ys = _scan_grid(y_max, grid_n)
    gs = np.array([g(y) for y in ys])
    roots = list(ys[gs == 0.0])
    for i in np.flatnonzero(gs[:-1] * gs[1:] < 0):
        roots.append(optimize.bisect(g, ys[i], ys[i + 1], xtol=tol, maxiter=200))
    if not roots:
        warnings.warn("no sign change of chi(y) - y on the scan grid; solving locally from y = 0")
        roots = [float(optimize.fsolve(g, 0.0, xtol=tol)[0])]
    roots.sort()
    merged: list[float] = []
    for r in roots:
        if not merged or abs(r - merged[-1]) > 1e-8:
            merged.append(float(r))
    return [
        FixedPoint(y=r, branch=pi_mean_trait(r, theta), slope=chi_prime(r, theta, kappa, z_star, spec))
        for r in merged
    ]


def damped_iteration(y0: float, theta: ThetaLike, kappa=None, z_star=0.0, spec=None,
                     damping: float = 0.5, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Fixed point of ``chi`` by the relaxation ``y <- (1 - a) y + a chi(y)``."""
    y = float(y0)
    for _ in range(max_iter):
        nxt = (1 - damping) * y + damping * chi(y, theta, kappa, z_star, spec)
        if abs(nxt - y) < tol:
            return nxt
        y = nxt
    raise RuntimeError("damped fixed-point iteration did not converge")


class BifurcationRow(NamedTuple):
    kappa: float
    n_roots: int
    roots: tuple[float, ...]
    branches: tuple[float, ...]


def bifurcation_scan(theta: ThetaLike, kappa_min: float, kappa_max: float, steps: int,
                     z_star: float = 0.0, y_max: float = DEFAULT_Y_MAX, grid_n: int = 401,
                     ) -> list[BifurcationRow]:
    rows = []
    for k in np.linspace(kappa_min, kappa_max, steps):
        fps = fixed_points(float(k), z_star, theta, y_max, grid_n)
        rows.append(BifurcationRow(float(k), len(fps), tuple(f.y for f in fps),
                                   tuple(f.branch for f in fps)))
    return rows


def three_root_window(rows: Sequence[BifurcationRow]) -> Optional[tuple[float, float]]:
    """Smallest and largest scanned ``kappa`` with at least three fixed points."""
    ks = [r.kappa for r in rows if r.n_roots >= 3]
    return (min(ks), max(ks)) if ks else None
