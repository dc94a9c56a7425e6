import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from polygene.hypercube import FitnessSpec, MutationRates
from polygene.stationary import (StationaryDensity, bifurcation_scan, chi, chi_prime, damped_iteration,
                                 fixed_points, kappa_c, kappa_c_numeric, pi_mean_trait, pi_y_moments,
                                 three_root_window)


def quad_moments(y, tp, tm):
    """Independent oracle: adaptive quadrature of the unnormalised density."""
    a, b = 2 * tp - 1, 2 * tm - 1

    def integral(k):
        f = lambda x: x**k * math.exp(2 * x * y)
        return integrate.quad(f, 0, 1, weight="alg", wvar=(a, b), epsabs=1e-14, epsrel=1e-13)[0]

    z = integral(0)
    m1, m2, m3, m4 = (integral(k) / z for k in (1, 2, 3, 4))
    var = m2 - m1**2
    return m1, var


@pytest.mark.parametrize("theta", [0.3, 0.6, 1.0, 2.5])
def test_neutral_variance_closed_form(theta):
    assert pi_y_moments(0.0, theta).variance == pytest.approx(1 / (4 * (4 * theta + 1)), abs=1e-12)


@pytest.mark.parametrize("theta", [0.3, 0.6, 1.0])
def test_neutral_fourth_cumulant_negative(theta):
    m = pi_y_moments(0.0, theta)
    assert m.fourth_cumulant < 0
    # symmetric law: vanishing third cumulant and mean 1/2
    assert abs(m.third_cumulant) < 1e-13
    assert m.mean == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize("y,tp,tm", [(0.0, 1.1, 3.3), (1.7, 0.6, 0.6), (-4.0, 0.4, 1.2), (9.0, 2.0, 0.7)])
def test_moments_match_adaptive_quadrature(y, tp, tm):
    m = pi_y_moments(y, (tp, tm))
    mean, var = quad_moments(y, tp, tm)
    assert m.mean == pytest.approx(mean, abs=1e-11)
    assert m.variance == pytest.approx(var, abs=1e-11)
    assert m.quadrature_error < 1e-10


def test_neutral_mean_is_beta_mean():
    assert pi_y_moments(0.0, (1.1, 3.3)).mean == pytest.approx(1.1 / 4.4, abs=1e-14)


def test_pdf_integrates_to_one_and_cdf_consistent():
    d = StationaryDensity(1.3, MutationRates(0.8, 0.5))
    assert d.expect(lambda x: np.ones_like(x)) == pytest.approx(1.0)
    val = integrate.quad(d.pdf, 0.2, 0.7)[0]
    lo, hi = d.cdf([0.2, 0.7])
    assert val == pytest.approx(hi - lo, abs=1e-10)
    assert d.cell_averages(50).mean() == pytest.approx(1.0, abs=1e-12)


def test_untilted_cdf_is_beta():
    d = StationaryDensity(0.0, MutationRates(1.1, 3.3))
    x = np.array([0.05, 0.3, 0.6, 0.95])
    assert np.allclose(d.cdf(x), stats.beta(2.2, 6.6).cdf(x), atol=1e-10)


def test_sampler_matches_cdf():
    d = StationaryDensity(-2.0, MutationRates(0.6, 0.6))
    x = d.sample(np.random.default_rng(4), 20_000)
    res = stats.kstest(x, lambda v: d.cdf(v))
    assert res.pvalue > 1e-3


def test_requires_positive_rates():
    with pytest.raises(ValueError):
        StationaryDensity(0.0, MutationRates(0.0, 1.0))


def test_kappa_c_values():
    assert kappa_c(0.6) == -1.7
    assert kappa_c(MutationRates(0.25, 0.25)) == -1.0
    with pytest.raises(ValueError):
        kappa_c((0.5, 0.6))


def test_kappa_c_numeric_agrees():
    assert kappa_c_numeric(0.6) == pytest.approx(-1.7, abs=1e-7)
    assert kappa_c_numeric(1.2) == pytest.approx(kappa_c(1.2), abs=1e-7)


def test_chi_prime_at_critical_point():
    assert abs(chi_prime(0.0, 0.6, kappa=-1.7) - 1) < 1e-6


def test_chi_requires_parameters():
    with pytest.raises(ValueError):
        chi(0.0, 0.6)


def test_chi_with_spec_uses_potential_derivative():
    spec = FitnessSpec.quadratic(1.0, 0.5)
    # 2 U'(m) = -4 (m - 0.5)
    m = pi_mean_trait(0.3, MutationRates(0.6, 0.6))
    assert chi(0.3, 0.6, spec=spec) == pytest.approx(-4 * (m - 0.5))
    assert chi(0.3, 0.6, spec=FitnessSpec.from_mean_field_kappa(1.0, 0.5)) == pytest.approx(
        chi(0.3, 0.6, kappa=1.0, z_star=0.5))


@given(st.floats(0.05, 20.0), st.floats(-10, 10))
def test_chi_non_increasing_for_stabilising_selection(kappa, y):
    assert chi(y + 0.01, 0.6, kappa=kappa) <= chi(y, 0.6, kappa=kappa) + 1e-12


@pytest.mark.parametrize("kappa", [-1.6, -1.0, 0.0, 3.0])
def test_single_root_above_critical(kappa):
    roots = fixed_points(kappa, 0.0, 0.6)
    assert len(roots) == 1
    assert abs(roots[0].y) < 1e-8


@pytest.mark.parametrize("kappa", [-3.0, -2.5, -2.0, -1.8])
def test_three_symmetric_roots_below_critical(kappa):
    roots = fixed_points(kappa, 0.0, 0.6)
    assert len(roots) == 3
    lo, mid, hi = roots
    assert lo.y == pytest.approx(-hi.y, rel=1e-8)
    assert lo.branch == pytest.approx(-hi.branch, rel=1e-8)
    assert abs(mid.y) < 1e-8
    for r in roots:
        assert chi(r.y, 0.6, kappa=kappa) == pytest.approx(r.y, abs=1e-8)
    # the outer roots are attracting for the fixed-point map, the middle one is not
    assert hi.slope < 1 < mid.slope


def test_damped_iteration_finds_outer_root():
    hi = fixed_points(-2.0, 0.0, 0.6)[-1]
    assert damped_iteration(1.0, 0.6, kappa=-2.0) == pytest.approx(hi.y, abs=1e-9)


def test_asymmetric_optimum_shifts_root():
    roots = fixed_points(2.0, 0.3, (0.9, 0.4))
    assert len(roots) == 1
    r = roots[0]
    assert r.y == pytest.approx(-4.0 * (r.branch - 0.3), abs=1e-8)


def test_bifurcation_scan_window():
    rows = bifurcation_scan(0.6, -3.0, 0.0, 31)
    assert [r.n_roots for r in rows if r.kappa > -1.7] == [1] * sum(r.kappa > -1.7 for r in rows)
    lo, hi = three_root_window(rows)
    assert lo == pytest.approx(-3.0)
    assert hi < -1.7
    assert three_root_window(bifurcation_scan(0.6, -1.0, 0.0, 5)) is None
