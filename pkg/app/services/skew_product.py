# app/services/skew_product.py
# -*- coding: utf-8 -*-
"""
Produit semi-direct τ(t, x) = (F(t), f_t(x)) sur (paramètres) x P^1 et mesure
fibrée α = ∫ μ(f_t) dΛ(t).

L'échantillonnage tire t ~ Λ puis x ~ μ(f_t) par marche arrière le long de
l'orbite de t ; les coefficients bruts de chaque fibre sont utilisés tels quels
(les préimages ne dépendent pas de l'échelle du relevé).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, List, Sequence, Tuple

import numpy as np

from app.services.green_measure import (
    binned_distribution,
    pull_back,
    run_batches,
    sample_fubini_study,
    tv_binned,
)
from app.services.parameter_dynamics import DriverSystem, parameter_orbit, sample_lambda
from app.services.projective_maps import PointP1, evaluate_form, normalize_points

logger = logging.getLogger(__name__)

PARAMETER_BINS = 8
SPHERE_BINS = 16
DEFAULT_SKEW_ROOT = PointP1(0.31 + 0.47j, 1.0)


@dataclass(frozen=True)
class SkewInvarianceReport:
    count: int
    depth: int
    tv_invariance: float      # TV(α, τ_*α), échantillons indépendants
    tv_control: float         # TV(α, Λ ⊗ ω), contrôle négatif


def fibre_coefficients(driver: DriverSystem, params: Sequence[Any], depth: int) -> np.ndarray:
    """Coefficients bruts (N, depth+1, 2, d+1) le long de l'orbite de chaque paramètre."""
    coords = np.array([
        [driver.coordinate(p) for p in parameter_orbit(driver, t, depth + 1)]
        for t in params
    ])
    d = driver.degree
    return driver.family.raw_coefficients(coords.reshape(-1)).reshape(len(params), depth + 1, 2, d + 1)


def sample_skew_measure(
    driver: DriverSystem,
    count: int,
    depth: int,
    seed: int,
    *,
    root: PointP1 = DEFAULT_SKEW_ROOT,
    threads: int = 1,
) -> Tuple[List[Any], np.ndarray]:
    """
    Échantillons (t, x) de α : t ~ Λ, puis x ~ μ(f_t) à la profondeur `depth`.

    Returns:
        (paramètres, points homogènes (count, 2))
    """
    params = sample_lambda(driver, count, seed)
    coeffs = fibre_coefficients(driver, params, depth)

    def walk(lo: int, size: int, rng: np.random.Generator) -> np.ndarray:
        block = coeffs[lo:lo + size]
        pts = np.repeat(root.array[None, :], size, axis=0)
        for level in range(depth, -1, -1):
            pts = pull_back(block[:, level, 0], block[:, level, 1], pts, rng, level=level)
        return pts

    points = run_batches(walk, count, seed, threads)
    logger.debug("mesure fibrée : %d échantillons, profondeur %d", count, depth)
    return params, normalize_points(points)


def apply_skew(driver: DriverSystem, params: Sequence[Any], points: np.ndarray) -> Tuple[List[Any], np.ndarray]:
    """τ appliqué fibre par fibre : (F(t), f_t(x))."""
    coords = np.array([driver.coordinate(p) for p in params])
    raw = driver.family.raw_coefficients(coords)
    pts = normalize_points(points)
    image = np.stack([evaluate_form(raw[:, 0], pts), evaluate_form(raw[:, 1], pts)], axis=-1)
    return [driver.step(p) for p in params], normalize_points(image)


def joint_histogram(driver: DriverSystem, params: Sequence[Any], points: np.ndarray) -> np.ndarray:
    """Histogramme joint normalisé (8 cases de paramètre, 2 cartes, 16 x 16)."""
    coords = np.clip(np.array([driver.coordinate(p) for p in params]), 0.0, 1.0 - 1e-12)
    which = np.floor(coords * PARAMETER_BINS).astype(int)
    hist = np.zeros((PARAMETER_BINS, 2, SPHERE_BINS, SPHERE_BINS))
    for b in range(PARAMETER_BINS):
        mask = which == b
        if mask.any():
            hist[b] = binned_distribution(points[mask], bins=SPHERE_BINS) * mask.sum()
    return hist / len(params)


def skew_invariance_check(
    driver: DriverSystem,
    count: int,
    depth: int,
    seed: int,
    *,
    threads: int = 1,
) -> SkewInvarianceReport:
    """
    TV jointe entre α et τ_*α (deux échantillons indépendants de α), et un
    contrôle négatif où les fibres sont remplacées par ω.
    """
    params_a, points_a = sample_skew_measure(driver, count, depth, seed, threads=threads)
    params_b, points_b = sample_skew_measure(driver, count, depth, seed + 1, threads=threads)
    pushed_params, pushed_points = apply_skew(driver, params_a, points_a)
    reference = joint_histogram(driver, params_b, points_b)
    tv = tv_binned(joint_histogram(driver, pushed_params, pushed_points), reference)
    control = tv_binned(joint_histogram(driver, params_b, sample_fubini_study(count, seed + 2)), reference)
    logger.info("produit semi-direct : TV(α, τ_*α) = %.4f, contrôle %.4f", tv, control)
    return SkewInvarianceReport(count=count, depth=depth, tv_invariance=tv, tv_control=control)
