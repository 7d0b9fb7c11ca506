# tests/test_mixing_lab.py
# -*- coding: utf-8 -*-
"""
Tests unitaires pour app/services/mixing_lab.py

Ce fichier couvre :
- les observables intégrées (noms, indépendance du représentant, harmoniques),
- l'estimation de la norme DSH (zéro, constantes, potentiel de z²),
- les bornes d'appariement (ψ ≡ 1, symétrie, homogénéité),
- l'opérateur de transfert Λ_f et ses deux contrôles Monte-Carlo,
- l'expérience de mélange (décroissance en 2^{-n} pour z² et le pilote rotation, observable constante),
- l'expérience de récurrence (corrélation centrée sur le produit des moyennes) et le refus des pilotes non conformes.
"""

import logging
import math

import numpy as np
import pytest

from app.services.green_measure import measure_by_preimages
from app.services.green_potential import GridSpec, potential_values, sup_norm_u
from app.services.mixing_lab import (
    HypothesisViolation,
    NoRecurrenceError,
    Observable,
    ObservableError,
    builtin_observable,
    check_pairing_bounds,
    constant_observable,
    dsh_decomposition,
    estimate_dsh_norm,
    grid_function_observable,
    mean_zero_check,
    mixing_experiment,
    operator_identity_check,
    pairing_constant,
    recurrence_experiment,
    require_compliance,
    transfer_operator,
)
from app.services.parameter_dynamics import DriverSystem, MapFamily
from app.services.projective_maps import PointP1, polynomial_map

BUILTINS = ["one", "re", "im", "fs", "harmonic1", "harmonic2", "harmonic_sin3", "log_chordal"]

# -----------------------------------------------------------------------------
# Fixtures
# -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def grid() -> GridSpec:
    return GridSpec(64)


@pytest.fixture(scope="module")
def z2_driver() -> DriverSystem:
    return DriverSystem(kind="constant", family=MapFamily(kind="quadratic"))


@pytest.fixture(scope="module")
def rotation_driver() -> DriverSystem:
    return DriverSystem(kind="circle_rotation", family=MapFamily(kind="quadratic", radius=0.05))


@pytest.fixture(scope="module")
def z2_circle():
    f = polynomial_map(2, 0.0)
    return measure_by_preimages([f] * 16, 15, PointP1(0.31 + 0.47j, 1.0), 100_000, seed=1)


# -----------------------------------------------------------------------------
# Observables
# -----------------------------------------------------------------------------

@pytest.mark.parametrize("name", BUILTINS)
def test_builtins_are_representative_free(name):
    obs = builtin_observable(name)
    pts = np.random.default_rng(0).normal(size=(200, 2)) + 1j * np.random.default_rng(1).normal(size=(200, 2))
    assert obs(pts) == pytest.approx(obs((2.0 - 3.5j) * pts), abs=1e-9)
    assert np.all(np.abs(obs(pts)) <= obs.sup_bound + 1e-12)


@pytest.mark.parametrize("name", ["cos", "harmonic0", "harmonic_cos2", ""])
def test_unknown_observable_rejected(name):
    with pytest.raises(ObservableError):
        builtin_observable(name)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_harmonics_on_unit_circle(k):
    theta = np.linspace(0, 2 * np.pi, 17)
    pts = np.stack([np.exp(1j * theta), np.ones_like(theta)], axis=-1)
    assert builtin_observable(f"harmonic{k}")(pts) == pytest.approx(np.cos(k * theta), abs=1e-12)
    assert builtin_observable(f"harmonic_sin{k}")(pts) == pytest.approx(np.sin(k * theta), abs=1e-12)


def test_grid_function_observable(grid):
    values = np.ones(grid.shape) * 0.25
    obs = grid_function_observable(values, grid)
    pts = np.array([[0.3, 1.0], [1.0, 0.1j], [1.0, 0.0]], dtype=complex)
    assert obs(pts) == pytest.approx([0.25] * 3)
    values[0, 3, 3] = np.nan
    with pytest.raises(ObservableError):
        grid_function_observable(values, grid)


# -----------------------------------------------------------------------------
# Norme DSH
# -----------------------------------------------------------------------------

def test_dsh_of_zero_and_constants(grid):
    assert estimate_dsh_norm(constant_observable(0.0), grid) == 0.0
    assert estimate_dsh_norm(constant_observable(2.5), grid) == pytest.approx(2.5)
    assert estimate_dsh_norm(constant_observable(-2.5), grid) == pytest.approx(2.5)


def test_dsh_of_z2_potential(grid):
    """ψ = u_{z²} : dd^c ψ = f*ω/d − ω, masses de T^± au plus 1 chacune."""
    f = polynomial_map(2, 0.0)
    psi = Observable("u_z2", "smooth_builtin", lambda p: potential_values(f, p), sup_bound=sup_norm_u(f, grid))
    dec = dsh_decomposition(psi, grid)
    assert dec.positive_mass > 0.05
    assert dec.negative_mass > 0.05
    assert dec.positive_mass == pytest.approx(dec.negative_mass, abs=0.05)
    assert dec.l1 < dec.norm <= dec.l1 + 2.0 + 1e-2


def test_dsh_is_deterministic(grid):
    psi = builtin_observable("log_chordal")
    assert estimate_dsh_norm(psi, grid) == estimate_dsh_norm(psi, grid)
    assert math.isfinite(psi.with_dsh_bound(grid).dsh_bound)


# -----------------------------------------------------------------------------
# Bornes d'appariement
# -----------------------------------------------------------------------------

def test_pairing_with_constant_one(z2_circle, grid):
    g_sup = math.log(2) / 2
    report = check_pairing_bounds(z2_circle, g_sup, builtin_observable("one"), grid)
    assert report.pairing == 1.0
    assert report.dsh_norm == pytest.approx(1.0)
    assert report.ratio == pytest.approx(1.0 / (1.0 + g_sup))


def test_pairing_vanishes_by_symmetry(z2_circle, grid):
    report = check_pairing_bounds(z2_circle, 0.35, builtin_observable("re"), grid)
    assert abs(report.pairing) < 4 * report.std_error


def test_pairing_ratio_is_homogeneous(z2_circle, grid):
    psi = builtin_observable("log_chordal")
    a = check_pairing_bounds(z2_circle, 0.35, psi, grid)
    b = check_pairing_bounds(z2_circle, 0.35, psi.scaled(10.0), grid)
    assert b.ratio == pytest.approx(a.ratio, rel=1e-9)
    assert b.reverse_ratio == pytest.approx(a.reverse_ratio, rel=1e-9)


def test_pairing_constant_bounds_the_family(z2_circle, grid):
    family = [builtin_observable(n) for n in BUILTINS]
    constant, reports = pairing_constant(z2_circle, 0.35, family, grid)
    assert len(reports) == len(BUILTINS)
    assert all(r.ratio <= constant for r in reports)


# -----------------------------------------------------------------------------
# Opérateur de transfert
# -----------------------------------------------------------------------------

def test_transfer_operator_of_z2():
    f = polynomial_map(2, 0.0)
    y = np.array([[4.0, 1.0], [0.5j, 1.0]], dtype=complex)
    assert transfer_operator(f, constant_observable(3.0), y) == pytest.approx([3.0, 3.0])
    # (re(2) + re(−2))/2 = 0
    assert transfer_operator(f, builtin_observable("re"), y[:1]) == pytest.approx([0.0], abs=1e-12)


def test_operator_identity_at_first_step(rotation_driver):
    check = operator_identity_check(
        rotation_driver, 0.0, builtin_observable("harmonic1"), builtin_observable("re"), 20_000, seed=3,
        base_depth=12,
    )
    assert check.z_score < 4.0


def test_mean_zero_is_preserved(rotation_driver):
    value, se = mean_zero_check(rotation_driver, 0.0, builtin_observable("log_chordal"), 20_000, seed=4, base_depth=12)
    assert abs(value) < 4 * se


# -----------------------------------------------------------------------------
# Expérience de mélange
# -----------------------------------------------------------------------------

@pytest.mark.slow
def test_z2_mixing_decays_at_rate_log_d(z2_driver, grid):
    """Coefficients de Fourier de ψ en 2^n : corrélation ≈ 2^{−(n+1)}."""
    report = mixing_experiment(
        z2_driver, 0.0, builtin_observable("harmonic1"), builtin_observable("log_chordal"),
        range(2, 8), 100_000, seed=5, grid=grid, bootstrap=100,
    )
    assert list(report.depths) == [2, 3, 4, 5, 6, 7]
    assert report.degree == 2
    assert report.fitted_rate is not None
    assert report.fitted_rate <= -math.log(2) + 0.15
    assert report.dominance_ok
    assert report.fitted_constant > 0
    assert not report.hypothesis_violated
    assert np.all(report.err_low <= report.err_high)
    assert report.correlations[0] == pytest.approx(0.125, abs=0.02)
    assert report.g_n_sup == pytest.approx([math.log(2) / 2] * 6, abs=1e-3)
    assert report.rows()[0]["n"] == 2


@pytest.mark.slow
def test_rotation_mixing_decays_at_rate_log_d(rotation_driver, grid):
    report = mixing_experiment(
        rotation_driver, 0.0, builtin_observable("harmonic1"), builtin_observable("log_chordal"),
        range(2, 13), 100_000, seed=15, grid=grid, bootstrap=100,
    )
    assert list(report.depths) == list(range(2, 13))
    assert report.fitted_rate is not None
    assert report.fitted_rate <= -math.log(2) + 0.15
    assert report.dominance_ok
    assert not report.hypothesis_violated


def test_orthogonal_harmonics_have_zero_correlation(z2_driver, grid):
    """∫cos(2^n θ)·cos θ dθ = 0 pour n ≥ 1."""
    report = mixing_experiment(
        z2_driver, 0.0, builtin_observable("harmonic1"), builtin_observable("harmonic1"),
        [1, 2, 3, 4], 20_000, seed=6, grid=grid, bootstrap=100,
    )
    assert np.all(report.correlations <= 3 * report.std_errors)


def test_constant_phi_annihilates_correlation(rotation_driver, grid):
    report = mixing_experiment(
        rotation_driver, 0.0, constant_observable(1.0), builtin_observable("log_chordal"),
        [1, 3, 5], 5_000, seed=7, grid=grid, bootstrap=50, base_depth=10,
    )
    assert np.all(report.correlations < 1e-12)


def test_invalid_depths_rejected(z2_driver, grid):
    with pytest.raises(ValueError):
        mixing_experiment(z2_driver, 0.0, constant_observable(1.0), constant_observable(1.0), [], 1000, 0, grid=grid)


# -----------------------------------------------------------------------------
# Conformité du pilote
# -----------------------------------------------------------------------------

@pytest.fixture
def drifting_driver() -> DriverSystem:
    return DriverSystem(
        kind="contraction", family=MapFamily(kind="degenerate_approach", t_star=0.0), rate=0.5,
    )


def test_non_compliant_driver_is_refused(drifting_driver, grid):
    with pytest.raises(HypothesisViolation):
        require_compliance(drifting_driver, 1.0, force=False)
    with pytest.raises(HypothesisViolation):
        mixing_experiment(
            drifting_driver, 1.0, constant_observable(1.0), constant_observable(1.0), [1], 1000, 0, grid=grid,
        )


def test_force_runs_and_marks_violation(drifting_driver, caplog):
    with caplog.at_level(logging.WARNING, logger="app.services.mixing_lab"):
        assert require_compliance(drifting_driver, 1.0, force=True) is True
    assert any("hypothesis violated" in r.getMessage() for r in caplog.records)


def test_compliant_driver_passes(rotation_driver):
    assert require_compliance(rotation_driver, 0.0, force=False) is False


# -----------------------------------------------------------------------------
# Récurrence
# -----------------------------------------------------------------------------

@pytest.mark.slow
def test_period_two_recurrence():
    drv = DriverSystem(kind="circle_rotation", family=MapFamily(kind="quadratic", radius=0.05), alpha=0.5)
    table = recurrence_experiment(
        drv, 0.0, builtin_observable("harmonic1"), builtin_observable("log_chordal"),
        6, 0.01, 100_000, seed=8,
    )
    assert [r.alpha_n for r in table.rows] == [2, 4, 6]
    assert all(r.tv_binned < 0.05 for r in table.rows)
    assert abs(table.rows[-1].correlation) < abs(table.rows[0].correlation)
    assert not table.hypothesis_violated


@pytest.mark.slow
def test_period_two_correlation_matches_product_of_means():
    """z ↦ −z préserve μ(f_0) : φ∘F_n paire, ψ impaire, la corrélation est centrée."""
    drv = DriverSystem(kind="circle_rotation", family=MapFamily(kind="quadratic", radius=0.05), alpha=0.5)
    table = recurrence_experiment(
        drv, 0.0, builtin_observable("harmonic1"), builtin_observable("harmonic1"),
        6, 0.01, 100_000, seed=10,
    )
    assert [r.alpha_n for r in table.rows] == [2, 4, 6]
    for row in table.rows:
        assert abs(row.correlation) <= 3 * row.std_error
        assert row.tv_binned < 0.05

def test_constant_driver_recurs_at_every_step(z2_driver):
    table = recurrence_experiment(
        z2_driver, 0.0, builtin_observable("harmonic1"), builtin_observable("log_chordal"),
        10, 0.01, 20_000, seed=9, max_times=3, base_depth=12,
    )
    assert [r.alpha_n for r in table.rows] == [1, 2, 3]


def test_no_recurrence_is_reported():
    drv = DriverSystem(kind="circle_rotation", family=MapFamily(kind="quadratic", radius=0.05))
    with pytest.raises(NoRecurrenceError):
        recurrence_experiment(
            drv, 0.0, constant_observable(1.0), constant_observable(1.0), 3, 1e-6, 1000, seed=0,
        )
