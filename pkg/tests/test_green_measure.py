# tests/test_green_measure.py
# -*- coding: utf-8 -*-
"""
Tests unitaires pour app/services/green_measure.py

Ce fichier couvre :
- les distances (histogramme à deux cartes, variation totale, énergie),
- la mesure par laplacien discret (g ≡ 0 donne ω, cercle unité pour z², queue trop grande),
- l'échantillonneur de préimages (profondeur 0, multiplicités, déterminisme, racines),
- les lois d'invariance (tiré en arrière, poussé en avant, contrôle négatif),
- la localisation des masses (quarts de cellule, sous-réseau du support, budget),
- l'équivalence des deux constructions (z², z² + 0.1, rotation r = 0.05) au découpage 64 x 64.
"""

import math

import numpy as np
import pytest

import app.services.green_measure as green_measure
from app.services.green_measure import (
    CellMasses,
    GreenMeasure,
    TailTooLargeError,
    binned_distribution,
    cloud_distance,
    energy_distance,
    invariance_pullback_check,
    invariance_pushforward_check,
    measure_by_preimages,
    measure_distance,
    measure_from_potential,
    measure_from_values,
    pull_back,
    pullback_cloud,
    run_batches,
    sample_fubini_study,
    tv_binned,
)
from app.services.green_potential import GridSpec, fs_density, green_series
from app.services.parameter_dynamics import DriverSystem, MapFamily, orbit
from app.services.projective_maps import (
    DegenerateMapError,
    PointP1,
    RationalMapP1,
    evaluate_points,
    polynomial_map,
)

ROOT = PointP1(0.31 + 0.47j, 1.0)

# -----------------------------------------------------------------------------
# Fixtures
# -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def z2():
    return polynomial_map(2, 0.0)


@pytest.fixture(scope="module")
def z2_circle(z2) -> GreenMeasure:
    """μ(z²) échantillonnée : 10^5 points, profondeur 15."""
    return measure_by_preimages([z2] * 16, 15, ROOT, 100_000, seed=1)


@pytest.fixture(scope="module")
def z2_laplacian(z2) -> GreenMeasure:
    series = green_series([z2] * 21, 20, GridSpec(128))
    return measure_from_potential(series, seed=2)


@pytest.fixture(scope="module")
def rotation_maps():
    drv = DriverSystem(kind="circle_rotation", family=MapFamily(kind="quadratic", radius=0.05))
    return orbit(drv, 0.0, 24)


# -----------------------------------------------------------------------------
# Distances
# -----------------------------------------------------------------------------

def test_binned_distribution_is_normalized():
    pts = sample_fubini_study(5000, seed=0)
    hist = binned_distribution(pts, bins=16)
    assert hist.shape == (2, 16, 16)
    assert hist.sum() == pytest.approx(1.0)
    assert np.all(hist >= 0)


def test_distances_vanish_on_identical_inputs():
    pts = sample_fubini_study(2000, seed=4)
    d = cloud_distance(pts, pts)
    assert d.tv_binned == 0.0
    assert d.energy_dist == pytest.approx(0.0, abs=1e-12)


def test_fubini_study_sampler_splits_hemispheres():
    pts = sample_fubini_study(100_000, seed=5)
    inside = np.abs(pts[:, 0]) < np.abs(pts[:, 1])
    assert inside.mean() == pytest.approx(0.5, abs=0.01)


def test_energy_distance_separates_distinct_measures(z2_circle):
    fs = sample_fubini_study(2000, seed=6)
    assert energy_distance(z2_circle.sample_cloud, fs) > 0.01


# -----------------------------------------------------------------------------
# Mesure par laplacien
# -----------------------------------------------------------------------------

def test_zero_potential_gives_fubini_study_cells():
    """dd^c 0 = 0 : masses aux nœuds = χ·h²·densité de ω à 1e−6."""
    grid = GridSpec(128)
    mu = measure_from_values(np.zeros(grid.shape), grid, cloud_size=1000)
    xi = grid.chart_coordinates()
    expected = grid.weights() * grid.spacing ** 2 * fs_density(xi)[None, :, :]
    inner = (slice(None), slice(1, -1), slice(1, -1))
    assert np.max(np.abs(mu.grid_masses[inner] - expected[inner])) < 1e-6
    assert mu.mass_before_renormalization == pytest.approx(1.0, abs=5e-3)
    assert not mu.mass_defect


def test_z2_laplacian_concentrates_on_unit_circle(z2_laplacian):
    assert z2_laplacian.method == "laplacian"
    assert z2_laplacian.depth_used == 20
    assert not z2_laplacian.mass_defect
    assert 0.99 <= z2_laplacian.mass_before_renormalization <= 1.01
    assert z2_laplacian.grid_masses.sum() == pytest.approx(1.0)
    assert z2_laplacian.mass_in_annulus(0.9, 1.1) >= 0.99


def test_cell_on_bin_edge_is_split_evenly():
    """Nœud ξ = 0 sur un bord de case : ses quatre quarts tombent dans quatre cases."""
    h = GridSpec(128).spacing
    cells = CellMasses(chart=np.array([0]), coords=np.array([0j]), width=np.array([h]), mass=np.array([1.0]))
    mu = GreenMeasure(orbit_index=0, method="laplacian", depth_used=0,
                      sample_cloud=cells.sample(1000, np.random.default_rng(0)), cells=cells)
    hist = mu.binned()
    assert np.sort(hist[hist > 0]).tolist() == [0.25, 0.25, 0.25, 0.25]
    z = mu.sample_cloud[:, 0] / mu.sample_cloud[:, 1]
    assert np.max(np.abs(z.real)) <= h / 2 and np.max(np.abs(z.imag)) <= h / 2


def test_support_refinement_sharpens_the_circle(z2, z2_laplacian):
    series = green_series([z2] * 21, 20, GridSpec(128))
    coarse = measure_from_potential(series, seed=2, refine=1)
    h = GridSpec(128).spacing
    assert coarse.refine_factor == 1
    assert z2_laplacian.refine_factor == 8
    assert np.isclose(np.min(z2_laplacian.cells.width), h / 8)
    assert z2_laplacian.cells.mass.sum() == pytest.approx(1.0)
    assert np.array_equal(coarse.grid_masses, z2_laplacian.grid_masses)
    assert z2_laplacian.mass_in_annulus(0.98, 1.02) >= 0.99
    assert coarse.mass_in_annulus(0.98, 1.02) < z2_laplacian.mass_in_annulus(0.98, 1.02)


def test_refinement_falls_back_over_budget(z2, monkeypatch):
    monkeypatch.setattr(green_measure, "REFINE_POINT_BUDGET", 10)
    series = green_series([z2] * 21, 20, GridSpec(64))
    mu = measure_from_potential(series, cloud_size=1000)
    assert mu.refine_factor == 1
    assert np.allclose(mu.cells.width, GridSpec(64).spacing)


def test_shallow_series_is_refused(z2):
    series = green_series([z2] * 4, 3, GridSpec(64))
    with pytest.raises(TailTooLargeError) as exc:
        measure_from_potential(series)
    assert "deepen series" in str(exc.value)


# -----------------------------------------------------------------------------
# Échantillonneur de préimages
# -----------------------------------------------------------------------------

def test_depth_zero_cloud_is_two_points(z2):
    """Préimages de [4:1] sous z² : {2, −2} à parts égales."""
    mu = measure_by_preimages([z2], 0, PointP1.affine(4), 1000, seed=0)
    z = mu.sample_cloud[:, 0] / mu.sample_cloud[:, 1]
    assert np.allclose(np.abs(z), 2.0)
    assert np.mean(z.real > 0) == pytest.approx(0.5, abs=0.06)
    # f(f^{-1}(y)) = y
    pushed = evaluate_points(z2, mu.sample_cloud)
    assert np.allclose(pushed[:, 0] / pushed[:, 1], 4.0)


def test_iterated_square_roots_reach_the_circle(z2):
    mu = measure_by_preimages([z2] * 16, 15, PointP1.affine(2), 2000, seed=3)
    z = mu.sample_cloud[:, 0] / mu.sample_cloud[:, 1]
    assert np.mean(np.abs(np.abs(z) - 1.0) < 0.01) >= 0.99


def test_double_root_is_always_selected():
    rng = np.random.default_rng(0)
    out = pull_back(np.array([1, 0, 0]), np.array([0, 0, 1]), np.array([[0.0, 1.0]] * 50, dtype=complex), rng)
    assert np.allclose(out[:, 0], 0.0)


def test_sampler_preconditions(z2):
    with pytest.raises(ValueError):
        measure_by_preimages([z2] * 5, 4, ROOT, 999, seed=0)
    with pytest.raises(ValueError):
        measure_by_preimages([z2] * 3, 4, ROOT, 1000, seed=0)
    bad = RationalMapP1.from_coefficients([1, 0, 0], [1, 0, 0], normalize=False)
    with pytest.raises(DegenerateMapError):
        measure_by_preimages([z2, bad], 1, ROOT, 1000, seed=0)


def test_sampler_is_reproducible_across_threads(rotation_maps):
    a = measure_by_preimages(rotation_maps, 10, ROOT, 10_000, seed=7, threads=1)
    b = measure_by_preimages(rotation_maps, 10, ROOT, 10_000, seed=7, threads=4)
    c = measure_by_preimages(rotation_maps, 10, ROOT, 10_000, seed=8)
    assert np.array_equal(a.sample_cloud, b.sample_cloud)
    assert not np.array_equal(a.sample_cloud, c.sample_cloud)


def test_run_batches_covers_every_index():
    out = run_batches(lambda lo, n, _r: np.arange(lo, lo + n), 10_000, seed=0, threads=3)
    assert np.array_equal(out, np.arange(10_000))


@pytest.mark.slow
def test_root_independence(rotation_maps):
    a = measure_by_preimages(rotation_maps, 20, ROOT, 100_000, seed=11)
    b = measure_by_preimages(rotation_maps, 20, PointP1(-0.8 + 0.2j, 1.0), 100_000, seed=12)
    assert measure_distance(a, b).tv_binned < 0.05


# -----------------------------------------------------------------------------
# Lois d'invariance
# -----------------------------------------------------------------------------

def test_measure_against_itself_is_zero(z2_circle):
    d = measure_distance(z2_circle, z2_circle)
    assert d.tv_binned == 0.0
    assert d.energy_dist == pytest.approx(0.0, abs=1e-12)


def test_pullback_invariance_of_z2(z2, z2_circle):
    d = invariance_pullback_check(z2_circle, z2, z2_circle, seed=5)
    assert d.tv_binned < 0.05


def test_pushforward_invariance_of_z2(z2, z2_circle):
    assert invariance_pushforward_check(z2_circle, z2, z2_circle).tv_binned < 0.05


def test_pullback_then_pushforward_is_identity(z2, z2_circle):
    pulled = pullback_cloud(z2, z2_circle.sample_cloud, seed=9)
    back = evaluate_points(z2, pulled)
    assert cloud_distance(back, z2_circle.sample_cloud).tv_binned < 0.02


def test_mismatched_pair_is_detected(z2, z2_circle):
    fs = GreenMeasure(orbit_index=0, method="preimage", depth_used=0,
                      sample_cloud=sample_fubini_study(100_000, seed=3))
    assert invariance_pullback_check(fs, z2, z2_circle, seed=1).tv_binned > 0.2


@pytest.mark.slow
@pytest.mark.parametrize("i", [0, 1, 2])
def test_invariance_along_rotation_orbit(i, rotation_maps):
    """d^{-1}·f_i^*μ(f_{i+1}) = μ(f_i) et (f_i)_*μ(f_i) = μ(f_{i+1}) pour le pilote rotation r = 0.05."""
    mu_i = measure_by_preimages(rotation_maps[i:], 20, ROOT, 100_000, seed=21 + 2 * i, orbit_index=i)
    mu_next = measure_by_preimages(
        rotation_maps[i + 1:], 20, ROOT, 100_000, seed=22 + 2 * i, orbit_index=i + 1,
    )
    f_i = rotation_maps[i]
    assert invariance_pullback_check(mu_next, f_i, mu_i, seed=30 + i).tv_binned < 0.05
    assert invariance_pushforward_check(mu_i, f_i, mu_next).tv_binned < 0.08


# -----------------------------------------------------------------------------
# Équivalence des deux constructions
# -----------------------------------------------------------------------------

def test_z2_preimage_cloud_on_circle(z2_circle):
    assert z2_circle.size == 100_000
    assert z2_circle.mass_in_annulus(0.99, 1.01) == pytest.approx(1.0)


ORACLE_ORBITS = {
    "z2": lambda: [polynomial_map(2, 0.0)] * 21,
    "z2+0.1": lambda: [polynomial_map(2, 0.1)] * 21,
    "rotation": lambda: orbit(
        DriverSystem(kind="circle_rotation", family=MapFamily(kind="quadratic", radius=0.05)), 0.0, 21,
    ),
}


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(ORACLE_ORBITS))
def test_laplacian_and_preimage_measures_agree(name):
    """Grille 512, profondeur 20, m = 10^5, découpage 64 x 64 par carte."""
    maps = ORACLE_ORBITS[name]()
    series = green_series(maps, 20, GridSpec(512))
    assert series.tail_bound < 1e-4
    lap = measure_from_potential(series, seed=13)
    sampled = measure_by_preimages(maps, 20, ROOT, 100_000, seed=14)
    assert lap.refine_factor == 8
    assert measure_distance(lap, sampled).tv_binned < 0.05
    assert energy_distance(lap.sample_cloud, sampled.sample_cloud) < 0.01
    assert math.isfinite(lap.renormalization_factor)
