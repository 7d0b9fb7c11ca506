# app/services/green_measure.py
# -*- coding: utf-8 -*-
"""
Mesure de Green aléatoire μ(f_0) sur P^1, construite de deux façons indépendantes :

1) measure_from_potential : masse aux nœuds = laplacien discret (5 points) du
   potentiel local G = g + ½·log(1 + |ξ|²), divisé par 2π, pondéré par la
   partition de l'unité des deux cartes ; autour du support, g est réévalué sur
   un sous-réseau de pas h/8 et chaque sous-cellule reçoit son propre laplacien ;
2) measure_by_preimages : marche arrière aléatoire dans l'arbre des préimages
   le long de l'orbite (f_n, …, f_0), à partir d'une racine.

Les distances (MeasureDistance) comparent des mesures sur un découpage grossier
fixe (64 x 64 cases par carte) et par distance d'énergie chordale. Une masse
portée par une cellule est répartie sur ses quatre quarts avant découpage : un
nœud posé sur un bord de case y contribue des deux côtés.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from app.services.green_potential import GridSpec, PotentialSeries, chart_weight, green_values
from app.services.projective_maps import (
    PREIMAGE_RESIDUAL_TOL,
    PointP1,
    RationalMapP1,
    RootFindingError,
    binary_form_roots,
    chordal_distance_points,
    evaluate_form,
    evaluate_points,
    normalize_points,
    require_holomorphic,
)

logger = logging.getLogger(__name__)

TAIL_TOL = 1e-4
MASS_DEFECT_TOL = 0.01
NEGATIVE_MASS_TOL = 1e-9
MIN_SAMPLES = 1000
SAMPLER_BATCH = 4096
DEFAULT_CLOUD_SIZE = 100_000
TV_BINS = 64
Z_CHART_HALF_WIDTH = 2.0          # carte z : |z| ≤ 2 ; carte inv : |1/z| < 1/2
INV_CHART_HALF_WIDTH = 0.5
ENERGY_SUBSAMPLE = 1000
REFINE_FACTOR = 8
SUPPORT_COVERAGE = 1.0 - 1e-4     # fraction de masse des nœuds raffinés
REFINE_POINT_BUDGET = 4_000_000   # évaluations de g au plus pour le sous-réseau


class TailTooLargeError(ValueError):
    """Queue de la série au-dessus de la tolérance : approfondir la série."""


class SamplingError(RuntimeError):
    """Échec de l'échantillonneur de préimages (contexte du chemin inclus)."""


# -----------------------------------------------------------------------------
# Types
# -----------------------------------------------------------------------------

def chart_points(chart: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Représentants homogènes (K, 2) : carte 0 -> (ξ, 1), carte 1 -> (1, ξ)."""
    xi = np.asarray(xi, dtype=complex)
    one = np.ones_like(xi)
    return np.where((np.asarray(chart) == 0)[:, None], np.stack([xi, one], axis=-1), np.stack([one, xi], axis=-1))


@dataclass(frozen=True, eq=False)
class CellMasses:
    """Masses portées par des cellules carrées (centre `coords` et côté `width` dans la carte `chart`)."""
    chart: np.ndarray
    coords: np.ndarray
    width: np.ndarray
    mass: np.ndarray

    def __len__(self) -> int:
        return len(self.mass)

    def points(self) -> np.ndarray:
        return chart_points(self.chart, self.coords)

    def quarter_points(self) -> Tuple[np.ndarray, np.ndarray]:
        """Centres des quatre quarts de chaque cellule, masse / 4 chacun."""
        q = self.width / 4.0
        pts = [chart_points(self.chart, self.coords + o * q) for o in (-1 - 1j, -1 + 1j, 1 - 1j, 1 + 1j)]
        return np.concatenate(pts), np.tile(self.mass / 4.0, 4)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Tirage de `count` points : cellule selon sa masse, position uniforme dans la cellule."""
        picks = rng.choice(len(self.mass), size=count, p=self.mass / self.mass.sum())
        w = self.width[picks]
        jitter = (rng.random(count) - 0.5) * w + 1j * (rng.random(count) - 0.5) * w
        return normalize_points(chart_points(self.chart[picks], self.coords[picks] + jitter))


@dataclass(frozen=True, eq=False)
class GreenMeasure:
    """
    μ(f_i) représentée par des masses aux nœuds de grille (méthode laplacian)
    et/ou par un nuage de points équipondérés (représentants homogènes (M, 2)).

    `cells` porte la version localisée des masses (sous-cellules autour du
    support) ; c'est elle qui sert au découpage et au nuage.
    """
    orbit_index: int
    method: str
    depth_used: int
    sample_cloud: np.ndarray
    grid: Optional[GridSpec] = None
    grid_masses: Optional[np.ndarray] = None
    cells: Optional[CellMasses] = None
    refine_factor: int = 1
    mass_before_renormalization: float = 1.0
    renormalization_factor: float = 1.0
    clipped_negative_mass: float = 0.0
    mass_defect: bool = False
    hypothesis_violated: bool = False

    @property
    def size(self) -> int:
        return len(self.sample_cloud)

    def cloud_points(self, limit: Optional[int] = None) -> List[PointP1]:
        cloud = self.sample_cloud if limit is None else self.sample_cloud[:limit]
        return [PointP1.from_array(p) for p in cloud]

    def weighted_points(self) -> Tuple[np.ndarray, np.ndarray]:
        """(points, poids) : centres des cellules chargées si elles existent, sinon le nuage."""
        if self.cells is not None:
            return self.cells.points(), self.cells.mass
        n = len(self.sample_cloud)
        return self.sample_cloud, np.full(n, 1.0 / n)

    def binned(self, bins: int = TV_BINS) -> np.ndarray:
        if self.cells is not None:
            pts, w = self.cells.quarter_points()
        else:
            pts, w = self.weighted_points()
        return binned_distribution(pts, weights=w, bins=bins)

    def mass_in_annulus(self, r_low: float, r_high: float) -> float:
        """Masse de {r_low < |z| < r_high}."""
        pts, w = self.weighted_points()
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.abs(pts[:, 0]) / np.abs(pts[:, 1])
        inside = (r > r_low) & (r < r_high)
        return float(np.sum(w[inside]) / np.sum(w))


@dataclass(frozen=True)
class MeasureDistance:
    tv_binned: float
    energy_dist: float


# -----------------------------------------------------------------------------
# Découpage et distances
# -----------------------------------------------------------------------------

def binned_distribution(
    points: np.ndarray,
    weights: Optional[np.ndarray] = None,
    bins: int = TV_BINS,
) -> np.ndarray:
    """
    Histogramme normalisé (2, bins, bins) : carte z sur [−2, 2]² pour |z| ≤ 2,
    carte inv sur [−½, ½]² pour |z| > 2.
    """
    pts = normalize_points(points).reshape(-1, 2)
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    in_z = np.abs(pts[:, 0]) <= Z_CHART_HALF_WIDTH * np.abs(pts[:, 1])
    hist = np.zeros((2, bins, bins))
    xi_z = pts[in_z, 0] / pts[in_z, 1]
    xi_inv = pts[~in_z, 1] / pts[~in_z, 0]
    for c, (xi, half, ww) in enumerate(
        ((xi_z, Z_CHART_HALF_WIDTH, w[in_z]), (xi_inv, INV_CHART_HALF_WIDTH, w[~in_z]))
    ):
        if len(xi):
            h, _, _ = np.histogram2d(
                np.clip(xi.real, -half, half), np.clip(xi.imag, -half, half),
                bins=bins, range=[[-half, half], [-half, half]], weights=ww,
            )
            hist[c] = h
    total = hist.sum()
    return hist / total if total > 0 else hist


def tv_binned(a: np.ndarray, b: np.ndarray) -> float:
    """Variation totale entre deux histogrammes normalisés."""
    return 0.5 * float(np.sum(np.abs(a - b)))


def energy_distance(x: np.ndarray, y: np.ndarray, limit: int = ENERGY_SUBSAMPLE) -> float:
    """Distance d'énergie (V-statistique, métrique chordale) sur ≤ `limit` points de chaque nuage."""
    x = normalize_points(x)[:limit]
    y = normalize_points(y)[:limit]
    dxy = chordal_distance_points(x[:, None, :], y[None, :, :]).mean()
    dxx = chordal_distance_points(x[:, None, :], x[None, :, :]).mean()
    dyy = chordal_distance_points(y[:, None, :], y[None, :, :]).mean()
    return max(0.0, float(2.0 * dxy - dxx - dyy))


def measure_distance(a: GreenMeasure, b: GreenMeasure) -> MeasureDistance:
    return MeasureDistance(
        tv_binned=tv_binned(a.binned(), b.binned()),
        energy_dist=energy_distance(a.sample_cloud, b.sample_cloud),
    )


def cloud_distance(x: np.ndarray, y: np.ndarray) -> MeasureDistance:
    return MeasureDistance(
        tv_binned=tv_binned(binned_distribution(x), binned_distribution(y)),
        energy_dist=energy_distance(x, y),
    )


def sample_fubini_study(count: int, seed: int) -> np.ndarray:
    """Nuage ω-distribué : |ξ| = sqrt(U/(1−U)), argument uniforme."""
    rng = np.random.default_rng(seed)
    u = rng.random(count)
    theta = 2.0 * np.pi * rng.random(count)
    r = np.sqrt(u / (1.0 - u))
    xi = r * np.exp(1j * theta)
    return normalize_points(np.stack([xi, np.ones_like(xi)], axis=-1))


# -----------------------------------------------------------------------------
# Mesure par laplacien discret
# -----------------------------------------------------------------------------

def five_point(local: np.ndarray) -> np.ndarray:
    """Σ voisins − 4·centre sur les deux derniers axes (intérieur seulement)."""
    return (
        local[..., 2:, 1:-1] + local[..., :-2, 1:-1] + local[..., 1:-1, 2:] + local[..., 1:-1, :-2]
        - 4.0 * local[..., 1:-1, 1:-1]
    )


def support_mask(masses: np.ndarray, coverage: float = SUPPORT_COVERAGE) -> np.ndarray:
    """
    Nœuds intérieurs les plus chargés portant `coverage` de la masse, dilatés d'un nœud.
    """
    flat = masses.reshape(-1)
    order = np.argsort(flat, kind="stable")[::-1]
    cum = np.cumsum(flat[order])
    count = min(int(np.searchsorted(cum, coverage * cum[-1])) + 1, flat.size)
    mask = np.zeros(flat.size, dtype=bool)
    mask[order[:count]] = True
    mask = ndimage.binary_dilation(mask.reshape(masses.shape), structure=np.ones((1, 3, 3), dtype=bool))
    mask[:, [0, -1], :] = False
    mask[:, :, [0, -1]] = False
    return mask


def node_cells(masses: np.ndarray, grid: GridSpec, mask: Optional[np.ndarray] = None) -> CellMasses:
    """Cellules de côté h centrées aux nœuds chargés (restreintes à `mask`)."""
    keep = masses > 0 if mask is None else (masses > 0) & mask
    c, i, j = np.nonzero(keep)
    xi = grid.chart_coordinates()
    return CellMasses(
        chart=c, coords=xi[i, j], width=np.full(len(c), grid.spacing), mass=masses[c, i, j],
    )


def refine_cells(
    masses: np.ndarray,
    grid: GridSpec,
    potential: Callable[[np.ndarray], np.ndarray],
    *,
    factor: int = REFINE_FACTOR,
    coverage: float = SUPPORT_COVERAGE,
) -> Tuple[CellMasses, int]:
    """
    Localise les masses grossières autour du support.

    Chaque nœud du support est découpé en factor x factor sous-cellules de pas
    h/factor ; g y est réévalué par `potential` et la masse d'une sous-cellule
    est le laplacien 5 points de G au pas fin. La masse totale raffinée est
    recalée sur la masse grossière des mêmes nœuds ; les autres nœuds gardent
    leur cellule de côté h.

    Returns:
        (cellules, facteur effectivement utilisé ; 1 si le budget est dépassé)
    """
    active = support_mask(masses, coverage)
    count = int(active.sum())
    while factor > 1 and count * (factor + 2) ** 2 > REFINE_POINT_BUDGET:
        factor //= 2
    if factor < 2 or count == 0:
        logger.warning("raffinement abandonné : %d nœuds de support", count)
        return node_cells(masses, grid), 1

    half = factor // 2
    offsets = np.arange(-half - 1, factor - half + 1) * (grid.spacing / factor)
    c, i, j = np.nonzero(active)
    xi = grid.chart_coordinates()[i, j]
    fine = xi[:, None, None] + offsets[None, :, None] + 1j * offsets[None, None, :]
    charts = np.broadcast_to(c[:, None, None], fine.shape)

    g = np.asarray(potential(chart_points(charts.reshape(-1), fine.reshape(-1)))).reshape(fine.shape)
    local = g + 0.5 * np.log1p(np.abs(fine) ** 2)
    inner = fine[:, 1:-1, 1:-1]
    sub = chart_weight(inner) * five_point(local) / (2.0 * np.pi)
    sub = np.where(sub < 0, 0.0, sub)

    coarse_total = float(masses[active].sum())
    fine_total = float(sub.sum())
    if fine_total > 0:
        sub = sub * (coarse_total / fine_total)
    logger.debug(
        "raffinement x%d : %d nœuds, masse grossière %.4f, fine %.4f", factor, count, coarse_total, fine_total,
    )

    rest = node_cells(masses, grid, ~active)
    loaded = sub > 0
    return CellMasses(
        chart=np.concatenate([rest.chart, np.broadcast_to(c[:, None, None], sub.shape)[loaded]]),
        coords=np.concatenate([rest.coords, inner[loaded]]),
        width=np.concatenate([rest.width, np.full(int(loaded.sum()), grid.spacing / factor)]),
        mass=np.concatenate([rest.mass, sub[loaded]]),
    ), factor


def measure_from_values(
    values: np.ndarray,
    grid: GridSpec,
    *,
    orbit_index: int = 0,
    depth_used: int = 0,
    cloud_size: int = DEFAULT_CLOUD_SIZE,
    seed: int = 0,
    potential: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    refine: int = REFINE_FACTOR,
) -> GreenMeasure:
    """
    ω + dd^c g à partir des valeurs de g sur la grille (2, N+1, N+1).

    Masse au nœud intérieur = χ·(Σ voisins − 4G)/(2π), G = g + ½log(1+|ξ|²) ;
    négatifs tronqués (total rapporté), masse totale renormalisée à 1.
    Si `potential` (g en des points homogènes) est fourni, les masses du
    support sont localisées par refine_cells.
    """
    xi = grid.chart_coordinates()
    local = np.asarray(values, dtype=float) + 0.5 * np.log1p(np.abs(xi) ** 2)[None, :, :]
    lap = np.zeros_like(local)
    lap[:, 1:-1, 1:-1] = five_point(local)
    masses = grid.weights() * lap / (2.0 * np.pi)

    negative = masses < 0
    clipped = float(-masses[negative].sum())
    masses = np.where(negative, 0.0, masses)
    total = float(masses.sum())
    defect = abs(total - 1.0) > MASS_DEFECT_TOL
    if defect:
        logger.warning("défaut de masse : %.4f avant renormalisation", total)
    if clipped > NEGATIVE_MASS_TOL:
        logger.warning("masse négative tronquée : %.3e", clipped)
    masses = masses / total

    if potential is not None and refine > 1:
        cells, factor = refine_cells(masses, grid, potential, factor=refine)
    else:
        cells, factor = node_cells(masses, grid), 1
    cloud = cells.sample(cloud_size, np.random.default_rng(seed))
    return GreenMeasure(
        orbit_index=orbit_index,
        method="laplacian",
        depth_used=depth_used,
        sample_cloud=cloud,
        grid=grid,
        grid_masses=masses,
        cells=cells,
        refine_factor=factor,
        mass_before_renormalization=total,
        renormalization_factor=1.0 / total,
        clipped_negative_mass=clipped,
        mass_defect=defect,
    )


def measure_from_potential(
    series: PotentialSeries,
    *,
    orbit_index: int = 0,
    tail_tol: float = TAIL_TOL,
    cloud_size: int = DEFAULT_CLOUD_SIZE,
    seed: int = 0,
    refine: int = REFINE_FACTOR,
) -> GreenMeasure:
    """
    T(f_0) = ω + dd^c g pour une série suffisamment profonde.

    Le support est raffiné avec g_n réévalué le long de l'orbite de la série.

    Raises:
        TailTooLargeError: queue ≥ tail_tol (« deepen series »)
    """
    if not series.tail_bound < tail_tol:
        raise TailTooLargeError(
            f"deepen series : queue {series.tail_bound:.3e} ≥ {tail_tol:.1e} à la profondeur {series.partial_depth}"
        )
    return measure_from_values(
        series.values, series.grid,
        orbit_index=orbit_index, depth_used=series.partial_depth, cloud_size=cloud_size, seed=seed,
        potential=lambda pts: green_values(series.orbit_ref, series.partial_depth, pts),
        refine=refine,
    )


# -----------------------------------------------------------------------------
# Échantillonneur de préimages
# -----------------------------------------------------------------------------

def pull_back(
    num: np.ndarray,
    den: np.ndarray,
    targets: np.ndarray,
    rng: np.random.Generator,
    *,
    level: int = 0,
) -> np.ndarray:
    """
    Une préimage uniforme parmi les d (avec multiplicité) de chaque cible.

    num/den : (d+1,) partagés ou (N, d+1) par cible (fibres distinctes).
    """
    y = normalize_points(targets)
    forms = y[:, 1:2] * np.asarray(num) - y[:, 0:1] * np.asarray(den)
    try:
        roots = binary_form_roots(forms)
    except RootFindingError as e:
        raise SamplingError(f"niveau {level} : {e}") from e
    images = np.stack([evaluate_form(num, roots), evaluate_form(den, roots)], axis=-1)
    resid = chordal_distance_points(images, y[:, None, :])
    if resid.size and float(resid.max()) > PREIMAGE_RESIDUAL_TOL:
        bad = int(np.argmax(resid.max(axis=1)))
        raise SamplingError(
            f"niveau {level}, échantillon {bad} : résidu {float(resid.max()):.3e}, coefficients {forms[bad]}"
        )
    choice = rng.integers(0, roots.shape[1], size=len(y))
    return roots[np.arange(len(y)), choice]


def _walk_batch(maps: Sequence[RationalMapP1], depth: int, root: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    pts = np.repeat(root[None, :], size, axis=0)
    for level in range(depth, -1, -1):
        f = maps[level]
        pts = pull_back(f.num, f.den, pts, rng, level=level)
    return pts


def spawn_rngs(seed: int, count: int) -> List[np.random.Generator]:
    """Générateurs indépendants par lot, dérivés de (seed, indice de lot)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def batch_sizes(count: int, batch: int = SAMPLER_BATCH) -> List[int]:
    full, rest = divmod(count, batch)
    return [batch] * full + ([rest] if rest else [])


def run_batches(
    fn: Callable[[int, int, np.random.Generator], np.ndarray],
    count: int,
    seed: int,
    threads: int = 1,
) -> np.ndarray:
    """
    Exécute fn(début, taille, rng) sur des lots de taille fixe.

    Les graines sont dérivées par lot : le résultat ne dépend pas du nombre de threads.
    """
    sizes = batch_sizes(count)
    rngs = spawn_rngs(seed, len(sizes))
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    tasks = [(int(lo), n, r) for lo, n, r in zip(starts, sizes, rngs)]
    if threads <= 1:
        parts = [fn(*t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda t: fn(*t), tasks))
    return np.concatenate(parts)


def measure_by_preimages(
    orbit_maps: Sequence[RationalMapP1],
    depth: int,
    root: PointP1,
    count: int,
    seed: int,
    *,
    orbit_index: int = 0,
    threads: int = 1,
) -> GreenMeasure:
    """
    Échantillons de μ(f_0) par marche arrière dans l'arbre des préimages.

    Pour i = n, …, 0 : choix uniforme d'une des d préimages sous f_i (une racine
    de multiplicité m est choisie avec probabilité m/d).

    Args:
        orbit_maps: f_0, …, f_n (au moins depth + 1 applications)
        depth: n
        root: point de départ
        count: nombre d'échantillons m (≥ 1000)
        seed: graine maîtresse ; lots de taille fixe, graines dérivées par lot

    Returns:
        GreenMeasure (méthode "preimage")
    """
    if count < MIN_SAMPLES:
        raise ValueError(f"m = {count} < {MIN_SAMPLES}")
    if len(orbit_maps) < depth + 1:
        raise ValueError(f"orbite de longueur {len(orbit_maps)} < {depth + 1}")
    for f in orbit_maps[: depth + 1]:
        require_holomorphic(f)
    cloud = run_batches(
        lambda _lo, n, r: _walk_batch(orbit_maps, depth, root.array, n, r), count, seed, threads,
    )
    logger.debug("échantillonneur : %d points, profondeur %d", count, depth)
    return GreenMeasure(
        orbit_index=orbit_index,
        method="preimage",
        depth_used=depth,
        sample_cloud=normalize_points(cloud),
    )


# -----------------------------------------------------------------------------
# Lois d'invariance
# -----------------------------------------------------------------------------

def pullback_cloud(f: RationalMapP1, cloud: np.ndarray, seed: int) -> np.ndarray:
    """Échantillonne d^{-1}·f^*ν à partir d'un nuage de ν."""
    require_holomorphic(f)
    return run_batches(lambda lo, n, r: pull_back(f.num, f.den, cloud[lo:lo + n], r), len(cloud), seed)


def invariance_pullback_check(
    mu_next: GreenMeasure,
    f_i: RationalMapP1,
    mu_i: GreenMeasure,
    *,
    seed: int = 0,
) -> MeasureDistance:
    """Distance entre d^{-1}·f_i^*μ(f_{i+1}) (échantillonnée) et μ(f_i)."""
    pulled = pullback_cloud(f_i, mu_next.sample_cloud, seed)
    return cloud_distance(pulled, mu_i.sample_cloud)


def invariance_pushforward_check(
    mu_i: GreenMeasure,
    f_i: RationalMapP1,
    mu_next: GreenMeasure,
) -> MeasureDistance:
    """Distance entre (f_i)_*μ(f_i) et μ(f_{i+1})."""
    pushed = evaluate_points(f_i, mu_i.sample_cloud)
    return cloud_distance(pushed, mu_next.sample_cloud)
