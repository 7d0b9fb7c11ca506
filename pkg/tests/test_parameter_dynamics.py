# tests/test_parameter_dynamics.py
# -*- coding: utf-8 -*-
"""
Tests unitaires pour app/services/parameter_dynamics.py

Ce fichier couvre :
- les pilotes (rotation, doubling exact, logistique, décalage iid, contraction),
- les familles d'applications et leurs coefficients bruts,
- les orbites (loi de semi-groupe, contrôle de domaine indexé),
- les tirages de Λ (moyenne, Kolmogorov-Smirnov) et les temps de récurrence (Fibonacci),
- les diagnostics de Birkhoff (moyennes, orbite décalée, ε-certificat, non-intégrabilité).
"""

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from app.services.parameter_dynamics import (
    GOLDEN_ALPHA,
    DriverSystem,
    MapFamily,
    ParameterDomainError,
    UnknownDriverError,
    birkhoff_diagnostics,
    diagnostics_from_log_eta,
    iid_value,
    orbit,
    orbit_coordinates,
    parameter_distance,
    parameter_orbit,
    recurrence_times,
    sample_lambda,
)
from app.services.projective_maps import RationalMapP1

# -----------------------------------------------------------------------------
# Fixtures
# -----------------------------------------------------------------------------

@pytest.fixture
def z2_family() -> MapFamily:
    return MapFamily(kind="quadratic", radius=0.0)


@pytest.fixture
def rotation() -> DriverSystem:
    return DriverSystem(kind="circle_rotation", family=MapFamily(kind="quadratic", radius=0.1))


# -----------------------------------------------------------------------------
# Pilotes
# -----------------------------------------------------------------------------

def test_unknown_driver_rejected(z2_family):
    with pytest.raises(UnknownDriverError):
        DriverSystem(kind="baker", family=z2_family)


def test_contraction_rate_must_be_below_one(z2_family):
    with pytest.raises(ValueError):
        DriverSystem(kind="contraction", family=z2_family, rate=1.0)


def test_rotation_orbit(rotation):
    pts = parameter_orbit(rotation, 0.0, 3)
    assert pts == pytest.approx([0.0, GOLDEN_ALPHA, (2 * GOLDEN_ALPHA) % 1.0])


def test_semigroup_law(rotation):
    """F^{n+m}(t) = F^m(F^n(t))."""
    long = parameter_orbit(rotation, 0.2, 12)
    head = parameter_orbit(rotation, 0.2, 6)
    tail = parameter_orbit(rotation, head[-1], 7)
    assert long[5:] == pytest.approx(tail)


def test_doubling_is_exact(z2_family):
    """Pas d'effondrement flottant : 1/3 est de période 2 exactement."""
    drv = DriverSystem(kind="doubling", family=z2_family)
    pts = parameter_orbit(drv, "1/3", 200)
    assert pts[0] == Fraction(1, 3)
    assert pts[1] == Fraction(2, 3)
    assert pts[199] == Fraction(2, 3)


def test_logistic_step(z2_family):
    drv = DriverSystem(kind="logistic", family=z2_family)
    assert parameter_orbit(drv, 0.5, 3) == [0.5, 1.0, 0.0]


def test_iid_shift_is_reproducible(z2_family):
    drv = DriverSystem(kind="iid_shift", family=z2_family)
    pts = parameter_orbit(drv, (9, 0), 4)
    assert pts[3] == (9, 3)
    assert drv.coordinate(pts[2]) == iid_value(9, 2)
    assert 0.0 <= iid_value(9, 5000) < 1.0
    assert drv.distance((9, 0), (9, 0)) == 0.0
    assert drv.distance((9, 0), (9, 1)) > 0.0


def test_circle_distance(rotation):
    assert parameter_distance(rotation, 0.95, 0.05) == pytest.approx(0.1)


def test_contraction_converges_to_zero(z2_family):
    drv = DriverSystem(kind="contraction", family=z2_family, rate=0.5)
    assert parameter_orbit(drv, 1.0, 11)[-1] == pytest.approx(2.0 ** -10)


# -----------------------------------------------------------------------------
# Familles
# -----------------------------------------------------------------------------

def test_quadratic_raw_coefficients():
    fam = MapFamily(kind="quadratic", c0=0.1j, radius=0.1)
    raw = fam.raw_coefficients([0.0, 0.25])
    assert raw.shape == (2, 2, 3)
    assert raw[0, 0] == pytest.approx([1, 0, 0.1 + 0.1j])
    assert raw[1, 0, 2] == pytest.approx(0.2j)
    assert raw[0, 1] == pytest.approx([0, 0, 1])


def test_line_mode_family():
    fam = MapFamily(kind="quadratic", mode="line", radius=1.0)
    assert fam.c_values(np.array([0.25])) == pytest.approx([0.25])


def test_generic_family_is_not_polynomial():
    fam = MapFamily(kind="generic", degree=3, kappa=0.3)
    raw = fam.raw_coefficients([0.0])[0]
    assert raw[1, 1] == pytest.approx(0.3)
    assert not fam.map_at(0.0).is_degenerate


def test_degenerate_approach_hits_m_at_t_star():
    fam = MapFamily(kind="degenerate_approach", t_star=0.5)
    assert fam.map_at(0.5).is_degenerate
    assert not fam.map_at(0.6).is_degenerate
    # Res = (v(t − t*))², η invariant par normalisation
    assert fam.map_at(0.6).proxy.log_eta == pytest.approx(2 * math.log(0.1), abs=1e-9)


def test_literal_family():
    f = RationalMapP1.from_coefficients([1, 0, 0, 0], [0, 0, 0, 1])
    fam = MapFamily(kind="literal", literal=f)
    assert fam.degree == 3
    assert np.allclose(fam.raw_coefficients([0.3])[0, 0], f.num)


def test_unknown_family_rejected():
    with pytest.raises(UnknownDriverError):
        MapFamily(kind="cubic_spline")


# -----------------------------------------------------------------------------
# Orbites
# -----------------------------------------------------------------------------

def test_orbit_of_constant_z2(z2_family):
    drv = DriverSystem(kind="constant", family=z2_family)
    maps = orbit(drv, 0.0, 5)
    assert len(maps) == 5
    assert all(np.allclose(f.num, [1, 0, 0]) for f in maps)


def test_domain_violation_carries_index():
    fam = MapFamily(kind="quadratic", radius=0.1, domain=(0.0, 0.5))
    drv = DriverSystem(kind="circle_rotation", family=fam, alpha=0.3)
    with pytest.raises(ParameterDomainError) as exc:
        orbit_coordinates(drv, 0.1, 5)
    assert exc.value.index == 2


def test_orbit_length_must_be_positive(rotation):
    with pytest.raises(ValueError):
        parameter_orbit(rotation, 0.0, 0)


def test_sample_lambda_is_seeded(rotation):
    a = sample_lambda(rotation, 50, seed=3)
    b = sample_lambda(rotation, 50, seed=3)
    assert a == b
    assert all(0.0 <= t < 1.0 for t in a)


def test_logistic_samples_in_unit_interval(z2_family):
    drv = DriverSystem(kind="logistic", family=z2_family)
    pts = np.array(sample_lambda(drv, 2000, seed=1))
    assert np.all((pts >= 0.0) & (pts <= 1.0))
    # densité arcsinus : moyenne 1/2
    assert pts.mean() == pytest.approx(0.5, abs=0.05)


def test_recurrence_times_of_period_two_rotation(z2_family):
    drv = DriverSystem(kind="circle_rotation", family=z2_family, alpha=0.5)
    assert recurrence_times(drv, 0.0, 6, 0.01) == [2, 4, 6]


def test_sample_lambda_rotation_mean_within_three_sigma(z2_family):
    drv = DriverSystem(kind="circle_rotation", family=z2_family)
    count = 100_000
    pts = np.array(sample_lambda(drv, count, seed=7))
    sigma = math.sqrt(1.0 / 12.0 / count)
    assert abs(pts.mean() - 0.5) <= 3 * sigma


def test_sample_lambda_doubling_is_uniform(z2_family):
    drv = DriverSystem(kind="doubling", family=z2_family)
    pts = np.array([float(t) for t in sample_lambda(drv, 100_000, seed=8)])
    assert stats.kstest(pts, "uniform").statistic < 0.01


def test_golden_rotation_returns_at_fibonacci_times(z2_family):
    """‖55α‖ ≈ 0.0081 et ‖89α‖ ≈ 0.0050 sont les seuls retours sous 0.01 avant 100."""
    drv = DriverSystem(kind="circle_rotation", family=z2_family, alpha=GOLDEN_ALPHA)
    times = recurrence_times(drv, 0.0, 100, 0.01)
    assert 89 in times
    assert times == [55, 89]


# -----------------------------------------------------------------------------
# Diagnostics de Birkhoff
# -----------------------------------------------------------------------------

def test_constant_z2_diagnostics_are_zero(z2_family):
    drv = DriverSystem(kind="constant", family=z2_family)
    diag = birkhoff_diagnostics(drv, 0.0, 64)
    assert np.all(diag.birkhoff_partial_means == 0.0)
    assert diag.epsilon_certificate == 0.0
    assert not diag.non_integrable


def test_constant_log_eta_certificate():
    diag = diagnostics_from_log_eta([-2.0] * 64)
    assert diag.n0 == 32
    assert diag.epsilon_certificate == pytest.approx(2.0 / 32)
    assert diag.limit_estimate == pytest.approx(-2.0)
    assert not diag.non_integrable


def test_linear_drift_is_flagged():
    diag = diagnostics_from_log_eta([-0.1 * n for n in range(64)])
    assert diag.non_integrable
    assert diag.drift_slope < 0


def test_minus_infinity_is_flagged():
    log_eta = [0.0] * 20
    log_eta[7] = -math.inf
    assert diagnostics_from_log_eta(log_eta).non_integrable


def test_contraction_onto_m_is_flagged():
    fam = MapFamily(kind="degenerate_approach", t_star=0.0)
    drv = DriverSystem(kind="contraction", family=fam, rate=0.5)
    assert birkhoff_diagnostics(drv, 1.0, 64).non_integrable


def test_diagnostics_need_minimum_length():
    with pytest.raises(ValueError):
        diagnostics_from_log_eta([0.0] * 8)


def test_rotation_orbit_is_compliant(rotation):
    diag = birkhoff_diagnostics(rotation, 0.0, 64)
    assert not diag.non_integrable
    assert diag.limit_estimate == pytest.approx(0.0, abs=1e-9)


@pytest.fixture
def generic_rotation() -> DriverSystem:
    """|Res| = |1 + 9c(t)| ∈ [0.1, 1.9] et coefficient max 3 : −log η ∈ [3.7, 6.8]."""
    fam = MapFamily(kind="generic", kappa=3.0, radius=0.1)
    return DriverSystem(kind="circle_rotation", family=fam)


def test_shifted_orbit_has_the_same_birkhoff_limit(generic_rotation):
    """L'orbite issue de f_1 = F(f_0) a les mêmes moyennes, à |x_n − x_0|/n près."""
    length = 256
    base = birkhoff_diagnostics(generic_rotation, 0.0, length)
    shifted = birkhoff_diagnostics(generic_rotation, GOLDEN_ALPHA, length)
    x = base.per_step_log_eta
    assert np.ptp(x) > 0.1
    n = np.arange(1, length + 1)
    gap = np.abs(base.birkhoff_partial_means - shifted.birkhoff_partial_means)
    bound = 2 * np.max(np.abs(x))
    assert np.all(n * gap <= bound + 1e-9)
    assert gap[-1] <= bound / length
    assert shifted.limit_estimate == pytest.approx(base.limit_estimate, abs=0.05)


def test_epsilon_certificate_decreases_with_length(generic_rotation):
    certs = [
        birkhoff_diagnostics(generic_rotation, 0.0, length).epsilon_certificate
        for length in (16, 32, 64, 128, 256)
    ]
    assert certs[0] > 0
    assert all(b <= a for a, b in zip(certs, certs[1:]))
    assert certs[-1] < certs[0] / 8
