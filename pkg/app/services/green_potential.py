# app/services/green_potential.py
# -*- coding: utf-8 -*-
"""
Potentiel u_f, estimation de sa norme sup, série de Green aléatoire g_n avec
queue certifiée, comparaison lipschitzienne et expérience de continuité.

Convention : u_f(x) = (1/d)·log‖F(x̃)‖ − log‖x̃‖ pour un relevé normalisé F
(sup sur la sphère unité = 1), d'où u_f ≤ 0 et f*ω/d = ω + dd^c u_f.

La grille (GridSpec) est un atlas de deux cartes : "z" (points [ξ:1]) et
"inv" (points [1:ξ]), chacune échantillonnée sur le carré [−E, E]² aux nœuds
x_k = E·(2k − N)/N, k = 0..N. Les nœuds de N sont exactement ceux d'indice
pair en 2N ; avec E = 2 et N multiple de 4, z = ±1 et z = ±i sont des nœuds.
"""

from __future__ import annotations

import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, stats

from app.services.parameter_dynamics import DriverSystem, log_eta_along, orbit, orbit_coordinates
from app.services.projective_maps import (
    DegenerateMapError,
    PointP1,
    RationalMapP1,
    apply_lift,
    evaluate_points,
    normalize_points,
    require_holomorphic,
)

logger = logging.getLogger(__name__)

CHARTS = ("z", "inv")
MIN_RESOLUTION = 64
DEFAULT_RESOLUTION = 128
DEFAULT_EXTENT = 2.0
TAIL_WINDOW = 5                 # derniers termes utilisés pour l'extrapolation
VALUE_TOL = 1e-9


class SeriesDepthError(ValueError):
    """Orbite trop courte pour la profondeur demandée."""


class DegenerateOrbitError(DegenerateMapError):
    """Application dégénérée rencontrée dans l'orbite ; porte l'indice."""

    def __init__(self, message: str, index: int) -> None:
        super().__init__(f"{message} (indice {index})")
        self.index = index


class GridSpecError(ValueError):
    """Spécification de grille invalide."""


# -----------------------------------------------------------------------------
# Grille à deux cartes
# -----------------------------------------------------------------------------

def _smooth_step(x: np.ndarray) -> np.ndarray:
    """h(x) = ψ(x)/(ψ(x)+ψ(1−x)), ψ(x) = e^{−1/x} ; h = 0 sur x ≤ 0, 1 sur x ≥ 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def chart_weight(xi: np.ndarray) -> np.ndarray:
    """
    Poids de partition de l'unité d'une carte en sa coordonnée ξ.

    1 pour |ξ| ≤ 1/2, 0 pour |ξ| ≥ 2, C^∞ entre les deux ; la même fonction
    sert aux deux cartes et χ(ξ) + χ(1/ξ) = 1.
    """
    r = np.abs(np.asarray(xi))
    with np.errstate(divide="ignore"):
        t = np.log2(np.where(r > 0, r, 1e-300))
    return _smooth_step((1.0 - t) / 2.0)


def fs_density(xi: np.ndarray) -> np.ndarray:
    """Densité de ω (masse totale 1) en coordonnée de carte."""
    return (1.0 / np.pi) / (1.0 + np.abs(xi) ** 2) ** 2


@dataclass(frozen=True)
class GridSpec:
    """Grille des deux cartes ; `resolution` = N intervalles par côté."""
    resolution: int = DEFAULT_RESOLUTION
    extent: float = DEFAULT_EXTENT

    def __post_init__(self) -> None:
        if self.resolution < MIN_RESOLUTION:
            raise GridSpecError(f"résolution {self.resolution} < {MIN_RESOLUTION}")
        if self.resolution % 4:
            raise GridSpecError(f"résolution {self.resolution} non multiple de 4")
        if self.extent < 2.0:
            raise GridSpecError(f"demi-largeur {self.extent} < 2 : recouvrement 1/2 < |z| < 2 non assuré")

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / self.resolution

    @property
    def charts(self) -> Tuple[str, str]:
        return CHARTS

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (2, self.resolution + 1, self.resolution + 1)

    def nodes(self) -> np.ndarray:
        k = np.arange(self.resolution + 1)
        return self.extent * (2 * k - self.resolution) / self.resolution

    def chart_coordinates(self) -> np.ndarray:
        """ξ = x + iy, forme (N+1, N+1), indices [i (réel), j (imaginaire)]."""
        x = self.nodes()
        return x[:, None] + 1j * x[None, :]

    def homogeneous_points(self) -> np.ndarray:
        """Représentants (2, N+1, N+1, 2) : carte z -> (ξ, 1), carte inv -> (1, ξ)."""
        xi = self.chart_coordinates()
        one = np.ones_like(xi)
        return np.stack([np.stack([xi, one], axis=-1), np.stack([one, xi], axis=-1)])

    def weights(self) -> np.ndarray:
        """Partition de l'unité (2, N+1, N+1)."""
        w = chart_weight(self.chart_coordinates())
        return np.stack([w, w])

    def node_index(self, chart: str, value: complex) -> Tuple[int, int, int]:
        """Indice du nœud le plus proche de la coordonnée `value` dans `chart`."""
        c = CHARTS.index(chart)
        to_idx = lambda v: int(round((v / self.extent + 1.0) * self.resolution / 2.0))
        i, j = to_idx(value.real), to_idx(value.imag)
        if not (0 <= i <= self.resolution and 0 <= j <= self.resolution):
            raise GridSpecError(f"{value} hors de la carte {chart}")
        return c, i, j

    def chart_point(self, chart: str, xi: complex) -> np.ndarray:
        return np.array([xi, 1.0], dtype=complex) if chart == "z" else np.array([1.0, xi], dtype=complex)


def _map_chunks(fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray, threads: int) -> np.ndarray:
    """Applique fn par blocs de lignes ; résultat indépendant du nombre de threads."""
    if threads <= 1 or len(points) < 2 * threads:
        return fn(points)
    chunks = np.array_split(points, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(fn, chunks))
    return np.concatenate(parts)


# -----------------------------------------------------------------------------
# Potentiel d'une application
# -----------------------------------------------------------------------------

def potential_values(f: RationalMapP1, points: np.ndarray) -> np.ndarray:
    """u_f vectorisé sur des représentants (..., 2), indépendant du représentant."""
    require_holomorphic(f)
    pts = np.asarray(points, dtype=complex)
    lift = apply_lift(f, pts)
    return np.log(np.linalg.norm(lift, axis=-1)) / f.degree - np.log(np.linalg.norm(pts, axis=-1))


def potential_u(f: RationalMapP1, x: PointP1) -> float:
    """u_f(x) ≤ 0 pour f normalisée."""
    return float(potential_values(f, x.array))


@functools.lru_cache(maxsize=2048)
def _sup_norm_cached(degree: int, num: bytes, den: bytes, grid: GridSpec) -> float:
    f = RationalMapP1(
        degree=degree,
        num=np.frombuffer(num, dtype=complex),
        den=np.frombuffer(den, dtype=complex),
        normalized=True,
    )
    values = potential_values(f, grid.homogeneous_points())
    flat = int(np.argmax(np.abs(values)))
    c, i, j = np.unravel_index(flat, values.shape)
    best = float(np.abs(values[c, i, j]))
    chart = CHARTS[c]
    start = grid.chart_coordinates()[i, j]

    def neg_abs_u(v: np.ndarray) -> float:
        xi = complex(v[0], v[1])
        return -abs(float(potential_values(f, grid.chart_point(chart, xi))))

    res = optimize.minimize(
        neg_abs_u, np.array([start.real, start.imag]), method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 400},
    )
    refined = -float(res.fun)
    logger.debug("sup |u| : grille %.10g, raffiné %.10g (carte %s)", best, refined, chart)
    return max(best, refined)


def sup_norm_u(f: RationalMapP1, grid: GridSpec) -> float:
    """
    Estimation de ‖u_f‖_∞ : max sur la grille puis un raffinement local
    (Nelder-Mead) depuis le meilleur nœud. Borne inférieure du vrai sup.
    """
    require_holomorphic(f)
    return _sup_norm_cached(f.degree, f.num.tobytes(), f.den.tobytes(), grid)


def coefficient_distance(f: RationalMapP1, g: RationalMapP1) -> float:
    """
    Distance euclidienne entre vecteurs de coefficients normalisés, la phase de g
    étant alignée sur le premier coefficient non nul de f.
    """
    a = np.concatenate([f.num, f.den])
    b = np.concatenate([g.num, g.den])
    if len(a) != len(b):
        return math.inf
    nz = np.nonzero(np.abs(a) > 1e-14)[0]
    j = int(nz[0])
    phase = 1.0 + 0j
    if abs(b[j]) > 1e-14:
        phase = (a[j] / abs(a[j])) / (b[j] / abs(b[j]))
    return float(np.linalg.norm(a - phase * b))


def lipschitz_check(f: RationalMapP1, g: RationalMapP1, grid: GridSpec) -> Tuple[float, float]:
    """(sup_grille |u_f − u_g|, dist(f, g)) pour deux applications holomorphes."""
    require_holomorphic(f)
    require_holomorphic(g)
    pts = grid.homogeneous_points()
    diff = float(np.max(np.abs(potential_values(f, pts) - potential_values(g, pts))))
    return diff, coefficient_distance(f, g)


# -----------------------------------------------------------------------------
# Série de Green aléatoire
# -----------------------------------------------------------------------------

def extrapolated_tail(terms_sup: Sequence[float], depth: int, degree: int, kappa: float = 0.0) -> float:
    """
    Σ_{i>n} M·e^{κi}/d^i = M·q^{n+1}/(1 − q), q = e^κ/d, M = max des 5 derniers termes.
    """
    q = math.exp(kappa) / degree
    if q >= 1.0:
        return math.inf
    m = float(np.max(np.asarray(terms_sup)[-TAIL_WINDOW:]))
    return m * q ** (depth + 1) / (1.0 - q)


@dataclass(frozen=True, eq=False)
class PotentialSeries:
    """
    Somme partielle g_n = Σ_{i ≤ n} u_i∘f_{i−1}∘⋯∘f_0 / d^i sur la grille.

    Seul le dernier front (images F_n(x) des nœuds) est conservé : l'approfondissement
    coûte une application par nœud et par pas.
    """
    orbit_ref: Tuple[RationalMapP1, ...]
    partial_depth: int
    grid: GridSpec
    values: np.ndarray
    terms_sup: np.ndarray
    tail_bound: float
    kappa: float = 0.0
    frontier: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    @property
    def degree(self) -> int:
        return self.orbit_ref[0].degree

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def term_ledger(self) -> List[Dict[str, float]]:
        """Registre (i, ‖u_i‖_∞, d^{-i}) des termes calculés."""
        d = self.degree
        return [
            {"i": i, "terms_sup": float(s), "weight": float(d ** (-i))}
            for i, s in enumerate(self.terms_sup)
        ]

    def value_near(self, z: complex) -> float:
        """g_n au nœud le plus proche de z (carte z si |z| ≤ 1, sinon carte inv)."""
        if abs(z) <= 1.0:
            return float(self.values[self.grid.node_index("z", z)])
        return float(self.values[self.grid.node_index("inv", 1.0 / z)])


def _check_orbit(maps: Sequence[RationalMapP1], upto: int) -> int:
    degree = maps[0].degree
    for i, f in enumerate(maps[: upto + 1]):
        if f.is_degenerate:
            raise DegenerateOrbitError("application dans M", index=i)
        if f.degree != degree:
            raise ValueError(f"degré {f.degree} ≠ {degree} à l'indice {i}")
    return degree


def _accumulate(
    maps: Sequence[RationalMapP1],
    start: int,
    stop: int,
    frontier: np.ndarray,
    values: np.ndarray,
    grid: GridSpec,
    threads: int,
) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    d = maps[0].degree
    sups: List[float] = []
    for i in range(start, stop):
        f = maps[i]
        u = _map_chunks(lambda pts: potential_values(f, pts), frontier, threads)
        values = values + u / d ** i
        sups.append(sup_norm_u(f, grid))
        frontier = _map_chunks(lambda pts: evaluate_points(f, pts), frontier, threads)
    return frontier, values, sups


def green_series(
    orbit_maps: Sequence[RationalMapP1],
    depth: int,
    grid: GridSpec,
    *,
    kappa: float = 0.0,
    threads: int = 1,
) -> PotentialSeries:
    """
    Calcule g_n sur la grille par transport des nœuds le long de l'orbite.

    Args:
        orbit_maps: f_0, f_1, … (longueur ≥ depth + 1)
        depth: n
        grid: grille à deux cartes
        kappa: ε̂·p̂ pour l'extrapolation de la queue (0 pour une famille compacte)
        threads: nombre de threads pour le transport

    Returns:
        PotentialSeries immuable
    """
    if depth < 0:
        raise SeriesDepthError(f"profondeur {depth} < 0")
    if len(orbit_maps) < depth + 1:
        raise SeriesDepthError(f"orbite de longueur {len(orbit_maps)} < profondeur + 1 = {depth + 1}")
    d = _check_orbit(orbit_maps, depth)
    pts = grid.homogeneous_points().reshape(-1, 2)
    frontier, values, sups = _accumulate(orbit_maps, 0, depth + 1, pts, np.zeros(len(pts)), grid, threads)
    terms = np.array(sups)
    tail = extrapolated_tail(terms, depth, d, kappa)
    if np.max(values) > VALUE_TOL:
        logger.warning("g_%d > 0 sur la grille (max %.3e) : relevé non normalisé ?", depth, np.max(values))
    logger.debug("série de Green : profondeur %d, queue %.3e", depth, tail)
    return PotentialSeries(
        orbit_ref=tuple(orbit_maps),
        partial_depth=depth,
        grid=grid,
        values=values.reshape(grid.shape),
        terms_sup=terms,
        tail_bound=tail,
        kappa=kappa,
        frontier=frontier,
    )


def deepen(series: PotentialSeries, steps: int, *, threads: int = 1) -> PotentialSeries:
    """Nouvelle série de profondeur n + steps, à partir du front conservé."""
    if steps < 0:
        raise SeriesDepthError(f"pas {steps} < 0")
    n = series.partial_depth
    maps = series.orbit_ref
    if len(maps) < n + steps + 1:
        raise SeriesDepthError(f"orbite de longueur {len(maps)} < {n + steps + 1}")
    d = _check_orbit(maps, n + steps)
    frontier, values, sups = _accumulate(
        maps, n + 1, n + steps + 1, series.frontier, series.values.reshape(-1), series.grid, threads,
    )
    terms = np.concatenate([series.terms_sup, sups])
    # queue non croissante : reste d'une somme déjà majorée
    tail = min(extrapolated_tail(terms, n + steps, d, series.kappa), series.tail_bound)
    return PotentialSeries(
        orbit_ref=maps,
        partial_depth=n + steps,
        grid=series.grid,
        values=values.reshape(series.grid.shape),
        terms_sup=terms,
        tail_bound=tail,
        kappa=series.kappa,
        frontier=frontier,
    )


def green_values(orbit_maps: Sequence[RationalMapP1], depth: int, points: np.ndarray) -> np.ndarray:
    """g_n en des points arbitraires (..., 2)."""
    if len(orbit_maps) < depth + 1:
        raise SeriesDepthError(f"orbite de longueur {len(orbit_maps)} < {depth + 1}")
    d = _check_orbit(orbit_maps, depth)
    pts = normalize_points(points)
    values = np.zeros(pts.shape[:-1])
    for i in range(depth + 1):
        values = values + potential_values(orbit_maps[i], pts) / d ** i
        pts = evaluate_points(orbit_maps[i], pts)
    return values


def shifted_potential_sups(
    driver: DriverSystem,
    f0_param: Any,
    shifts: Sequence[int],
    depth: int,
    grid: GridSpec,
    *,
    threads: int = 1,
) -> np.ndarray:
    """‖ĝ_n‖_∞ : sup de la série de profondeur `depth` de l'orbite décalée (f_n, f_{n+1}, …)."""
    longest = max(shifts) + depth + 1
    maps = orbit(driver, f0_param, longest)
    return np.array([
        green_series(maps[n:n + depth + 1], depth, grid, threads=threads).sup_norm
        for n in shifts
    ])


def growth_diagnostic(shifted_sups: Sequence[float], epsilons: Sequence[float]) -> Dict[float, Optional[int]]:
    """Pour chaque ε, premier n à partir duquel ‖ĝ_m‖_∞ ≤ e^{εm} pour tout m ≥ n (None sinon)."""
    sups = np.asarray(shifted_sups, dtype=float)
    out: Dict[float, Optional[int]] = {}
    for eps in epsilons:
        ok = sups <= np.exp(eps * np.arange(len(sups)))
        bad = np.nonzero(~ok)[0]
        n0 = 0 if len(bad) == 0 else int(bad[-1]) + 1
        out[float(eps)] = n0 if n0 < len(sups) else None
    return out


# -----------------------------------------------------------------------------
# Continuité et calibration
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuityReport:
    starts: List[Any]
    sup_differences: np.ndarray
    h_terms: np.ndarray           # sup_n η(F^i(f_{n,0}))^{−p̂}/d^i
    h_diagnostic: float
    p_hat: float
    hypothesis_violated: bool

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.sup_differences) < 0))


def continuity_experiment(
    driver: DriverSystem,
    f00_param: Any,
    perturbations: Sequence[Any],
    depth: int,
    grid: GridSpec,
    *,
    p_hat: float = 1.0,
    threads: int = 1,
) -> ContinuityReport:
    """
    sup|g^{(n)} − g^{(0)}| pour chaque départ perturbé, plus le diagnostic (H).

    Le drapeau « hypothesis violated » est levé si un terme de (H) est infini ou
    si les termes ne décroissent pas (dernier ≥ premier).
    """
    ref = green_series(orbit(driver, f00_param, depth + 1), depth, grid, threads=threads)
    diffs = []
    for start in perturbations:
        s = green_series(orbit(driver, start, depth + 1), depth, grid, threads=threads)
        diffs.append(float(np.max(np.abs(s.values - ref.values))))

    d = driver.degree
    log_etas = []
    for start in [f00_param, *perturbations]:
        coeffs = driver.family.raw_coefficients(orbit_coordinates(driver, start, depth + 1))
        log_etas.append(log_eta_along(coeffs))
    worst = np.min(np.array(log_etas), axis=0)
    with np.errstate(over="ignore"):
        terms = np.exp(-p_hat * worst) / d ** np.arange(depth + 1)
    total = float(np.sum(terms))
    violated = (not np.all(np.isfinite(terms))) or terms[-1] >= terms[0]
    if violated:
        logger.warning("diagnostic (H) divergent : hypothesis violated")
    return ContinuityReport(
        starts=list(perturbations),
        sup_differences=np.array(diffs),
        h_terms=terms,
        h_diagnostic=total,
        p_hat=p_hat,
        hypothesis_violated=bool(violated),
    )


@dataclass(frozen=True)
class CalibrationReport:
    log_inv_eta: np.ndarray
    log_sup_u: np.ndarray
    p_hat: float
    log_c: float
    r_value: float
    lipschitz_c: float

    @property
    def c_hat(self) -> float:
        return math.exp(self.log_c)


def calibrate_distance(maps: Sequence[RationalMapP1], grid: GridSpec) -> CalibrationReport:
    """
    Ajuste log‖u_f‖_∞ ≤ log C + p̂·log(1/η) sur un échantillon d'applications
    (pente par régression linéaire, constante relevée pour majorer tous les points)
    et la constante de Lipschitz entre échantillons consécutifs.
    """
    usable = [f for f in maps if not f.is_degenerate]
    if len(usable) < 3:
        raise ValueError(f"{len(usable)} applications non dégénérées (≥ 3 requises)")
    x = np.array([-f.proxy.log_eta for f in usable])
    sups = np.array([sup_norm_u(f, grid) for f in usable])
    keep = sups > 0
    if not keep.any():
        raise ValueError("‖u_f‖_∞ = 0 pour tout l'échantillon : rien à ajuster")
    x, y = x[keep], np.log(sups[keep])
    if len(x) > 1 and np.ptp(x) > 0:
        fit = stats.linregress(x, y)
        p_hat, r_value = float(fit.slope), float(fit.rvalue)
    else:
        p_hat, r_value = 0.0, 0.0
    log_c = float(np.max(y - p_hat * x))

    ratios = []
    for f, g in zip(usable[:-1], usable[1:]):
        diff, dist = lipschitz_check(f, g, grid)
        if dist > 1e-12:
            ratios.append(diff / dist)
    lip = float(max(ratios)) if ratios else 0.0
    logger.info("calibration : p̂=%.4g, log C=%.4g, Lipschitz C=%.4g", p_hat, log_c, lip)
    return CalibrationReport(
        log_inv_eta=x, log_sup_u=y, p_hat=p_hat, log_c=log_c, r_value=r_value, lipschitz_c=lip,
    )
