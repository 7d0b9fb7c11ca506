# app/services/parameter_dynamics.py
# -*- coding: utf-8 -*-
"""
Dynamique sur l'espace des paramètres : pilotes F (drivers), mesure ergodique Λ,
familles d'applications t -> f_t et diagnostics de Birkhoff sur log η(f_n).

Un point de paramètre est :
- un float pour constant / circle_rotation / logistic / contraction,
- une fractions.Fraction pour doubling (arithmétique exacte, sinon 2t mod 1
  s'effondre sur 0 en ~53 itérations flottantes),
- un couple (seed, offset) pour iid_shift (décalage sur un espace de suites,
  suite tirée paresseusement depuis un flux seedé).
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from app.services.projective_maps import (
    RationalMapP1,
    proxy_from_coefficients,
)

logger = logging.getLogger(__name__)

DRIVER_KINDS = ("constant", "circle_rotation", "doubling", "logistic", "iid_shift", "contraction")
FAMILY_KINDS = ("quadratic", "unicritical", "generic", "degenerate_approach", "literal")

DOUBLING_DENOMINATOR = 1_000_000_007   # premier : orbites de k/q de grande période
IID_BLOCK = 1024
IID_METRIC_TERMS = 32
MIN_DIAGNOSTIC_LENGTH = 16
DRIFT_THRESHOLD = 1.0                  # pente des moyennes partielles x longueur
GOLDEN_ALPHA = (math.sqrt(5.0) - 1.0) / 2.0


class ParameterDomainError(ValueError):
    """Le paramètre sort du domaine de la famille ; porte l'indice d'orbite."""

    def __init__(self, message: str, index: int | None = None) -> None:
        super().__init__(message if index is None else f"{message} (indice {index})")
        self.index = index


class UnknownDriverError(ValueError):
    """Type de pilote ou de famille inconnu."""


# -----------------------------------------------------------------------------
# Familles d'applications
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class MapFamily:
    """
    Famille continue t -> f_t.

    - quadratic : z² + c(t)
    - unicritical : z^d + c(t)
    - generic : (z^d + c(t) w^d, κ z^{d−1} w + w^d), rationnelle non polynomiale
    - degenerate_approach : (z², zw + v(t − t*) w²), Res = (v(t − t*))², dans M en t*
    - literal : application fixe (littéral de configuration)

    c(t) = c0 + r·e^{2iπt} (mode "circle") ou c0 + r·t (mode "line").
    """
    kind: str = "quadratic"
    degree: int = 2
    c0: complex = 0j
    radius: float = 0.0
    mode: str = "circle"
    kappa: complex = 0.3 + 0j
    t_star: float = 0.5
    velocity: complex = 1.0 + 0j
    domain: Optional[Tuple[float, float]] = None
    literal: Optional[RationalMapP1] = None

    def __post_init__(self) -> None:
        if self.kind not in FAMILY_KINDS:
            raise UnknownDriverError(f"famille inconnue : {self.kind!r} (attendu {FAMILY_KINDS})")
        if self.mode not in ("circle", "line"):
            raise UnknownDriverError(f"mode de famille inconnu : {self.mode!r}")
        if self.kind == "quadratic" and self.degree != 2:
            object.__setattr__(self, "degree", 2)
        if self.kind == "degenerate_approach" and self.degree != 2:
            raise ValueError("degenerate_approach est défini en degré 2")
        if self.kind == "literal":
            if self.literal is None:
                raise ValueError("famille literal sans application")
            object.__setattr__(self, "degree", self.literal.degree)
        if self.degree < 2:
            raise ValueError(f"degré {self.degree} < 2")

    def c_values(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.mode == "circle":
            return self.c0 + self.radius * np.exp(2j * np.pi * t)
        return self.c0 + self.radius * t

    def check_domain(self, t: float, index: int | None = None) -> None:
        if not math.isfinite(t):
            raise ParameterDomainError(f"paramètre non fini : {t}", index)
        if self.domain is not None and not (self.domain[0] <= t <= self.domain[1]):
            raise ParameterDomainError(f"paramètre {t} hors du domaine {self.domain}", index)

    def raw_coefficients(self, t: Sequence[float] | np.ndarray) -> np.ndarray:
        """
        Coefficients bruts (non normalisés) vectorisés.

        Args:
            t: paramètres réels, forme (N,)

        Returns:
            np.ndarray (N, 2, d+1) : lignes P puis Q, de z^d à w^d
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        d = self.degree
        out = np.zeros((len(t), 2, d + 1), dtype=complex)
        if self.kind == "literal":
            out[:, 0, :] = self.literal.num
            out[:, 1, :] = self.literal.den
            return out
        if self.kind == "degenerate_approach":
            out[:, 0, 0] = 1.0
            out[:, 1, 1] = 1.0
            out[:, 1, 2] = self.velocity * (t - self.t_star)
            return out
        c = self.c_values(t)
        out[:, 0, 0] = 1.0
        out[:, 0, d] = c
        out[:, 1, d] = 1.0
        if self.kind == "generic":
            out[:, 1, 1] = self.kappa
        return out

    def map_at(self, t: float) -> RationalMapP1:
        """Application normalisée f_t."""
        return _family_map(self, float(t))


@functools.lru_cache(maxsize=4096)
def _family_map(family: MapFamily, t: float) -> RationalMapP1:
    coeffs = family.raw_coefficients([t])[0]
    return RationalMapP1.from_coefficients(coeffs[0], coeffs[1], normalize=True)


# -----------------------------------------------------------------------------
# Flux iid
# -----------------------------------------------------------------------------

@functools.lru_cache(maxsize=256)
def _iid_block(seed: int, block: int) -> np.ndarray:
    values = np.random.default_rng([seed, block]).random(IID_BLOCK)
    values.setflags(write=False)
    return values


def iid_value(seed: int, offset: int) -> float:
    """k-ième coordonnée de la suite iid indexée par seed."""
    block, pos = divmod(int(offset), IID_BLOCK)
    return float(_iid_block(int(seed), block)[pos])


# -----------------------------------------------------------------------------
# Pilotes
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class DriverSystem:
    """
    Pilote F sur l'espace des paramètres, avec sa mesure invariante Λ.

    - constant : F = id, Λ = δ_anchor
    - circle_rotation : t -> t + α mod 1, Λ = Lebesgue
    - doubling : t -> 2t mod 1 (Fraction exacte), Λ = Lebesgue
    - logistic : t -> 4t(1 − t), Λ de densité (1/π)(t(1−t))^{-1/2}
    - iid_shift : (seed, k) -> (seed, k+1), Λ = produit de Lebesgue
    - contraction : t -> λt, Λ = δ_0 (point fixe attractif)
    """
    kind: str
    family: MapFamily
    alpha: float = GOLDEN_ALPHA
    rate: float = 0.5
    anchor: float = 0.0
    parameter_dim: int = 1

    def __post_init__(self) -> None:
        if self.kind not in DRIVER_KINDS:
            raise UnknownDriverError(f"pilote inconnu : {self.kind!r} (attendu {DRIVER_KINDS})")
        if self.kind == "contraction" and not (0.0 <= abs(self.rate) < 1.0):
            raise ValueError(f"contraction : |λ| = {abs(self.rate)} doit être < 1")

    @property
    def degree(self) -> int:
        return self.family.degree

    # -- paramètres -----------------------------------------------------------

    def coerce(self, point: Any) -> Any:
        """Convertit un paramètre de configuration vers la représentation interne."""
        if self.kind == "doubling":
            if isinstance(point, Fraction):
                return point % 1
            if isinstance(point, str):
                return Fraction(point) % 1
            return Fraction(point).limit_denominator(DOUBLING_DENOMINATOR) % 1
        if self.kind == "iid_shift":
            if isinstance(point, (tuple, list)) and len(point) == 2:
                return (int(point[0]), int(point[1]))
            return (int(point), 0)
        if isinstance(point, str):
            return float(Fraction(point))
        return float(point)

    def step(self, point: Any) -> Any:
        """Une application de F."""
        if self.kind == "constant":
            return point
        if self.kind == "circle_rotation":
            return (point + self.alpha) % 1.0
        if self.kind == "doubling":
            return (2 * point) % 1
        if self.kind == "logistic":
            return 4.0 * point * (1.0 - point)
        if self.kind == "contraction":
            return self.rate * point
        seed, offset = point
        return (seed, offset + 1)

    def coordinate(self, point: Any) -> float:
        """Coordonnée réelle t transmise à la famille."""
        if self.kind == "iid_shift":
            return iid_value(*point)
        return float(point)

    def distance(self, p: Any, q: Any) -> float:
        """Distance sur l'espace des paramètres (circulaire pour rotation/doubling)."""
        if self.kind in ("circle_rotation", "doubling"):
            delta = abs(float(p) - float(q)) % 1.0
            return min(delta, 1.0 - delta)
        if self.kind == "iid_shift":
            return sum(
                2.0 ** (-k) * abs(iid_value(p[0], p[1] + k) - iid_value(q[0], q[1] + k))
                for k in range(IID_METRIC_TERMS)
            )
        return abs(float(p) - float(q))

    def sample(self, count: int, rng: np.random.Generator) -> List[Any]:
        if self.kind == "constant":
            return [self.anchor] * count
        if self.kind == "contraction":
            return [0.0] * count
        if self.kind == "circle_rotation":
            return [float(u) for u in rng.random(count)]
        if self.kind == "doubling":
            ks = rng.integers(0, DOUBLING_DENOMINATOR, size=count)
            return [Fraction(int(k), DOUBLING_DENOMINATOR) for k in ks]
        if self.kind == "logistic":
            return [float(v) for v in np.sin(np.pi * rng.random(count) / 2.0) ** 2]
        seeds = rng.integers(0, 2**31 - 1, size=count)
        return [(int(s), 0) for s in seeds]


# -----------------------------------------------------------------------------
# Orbites
# -----------------------------------------------------------------------------

def parameter_orbit(driver: DriverSystem, t0: Any, length: int) -> List[Any]:
    """[t0, F(t0), …, F^{length−1}(t0)] par itération (loi de semi-groupe exacte)."""
    if length < 1:
        raise ValueError(f"longueur d'orbite {length} < 1")
    point = driver.coerce(t0)
    points = [point]
    for _ in range(length - 1):
        point = driver.step(point)
        points.append(point)
    return points


def parameter_distance(driver: DriverSystem, p: Any, q: Any) -> float:
    return driver.distance(driver.coerce(p), driver.coerce(q))


def orbit_coordinates(driver: DriverSystem, t0: Any, length: int) -> np.ndarray:
    """Coordonnées réelles t_i, avec contrôle de domaine indexé."""
    coords = np.array([driver.coordinate(p) for p in parameter_orbit(driver, t0, length)])
    for i, t in enumerate(coords):
        driver.family.check_domain(float(t), index=i)
    return coords


def orbit(driver: DriverSystem, f0_param: Any, length: int) -> List[RationalMapP1]:
    """
    Suite f_i = F^i(f_0) des applications normalisées.

    Args:
        driver: pilote
        f0_param: paramètre initial
        length: nombre d'applications (≥ 1)

    Returns:
        [f_0, …, f_{length−1}]
    """
    coords = orbit_coordinates(driver, f0_param, length)
    return [driver.family.map_at(t) for t in coords]


def orbit_raw_coefficients(driver: DriverSystem, f0_param: Any, length: int) -> np.ndarray:
    """Coefficients bruts (length, 2, d+1) le long de l'orbite."""
    return driver.family.raw_coefficients(orbit_coordinates(driver, f0_param, length))


def sample_lambda(driver: DriverSystem, count: int, seed: int) -> List[Any]:
    """Tirages iid de Λ, reproductibles pour un seed donné."""
    if count < 1:
        raise ValueError(f"count {count} < 1")
    return driver.sample(count, np.random.default_rng(seed))


def recurrence_times(driver: DriverSystem, f0_param: Any, horizon: int, radius: float) -> List[int]:
    """Tous les n ≤ horizon tels que dist(F^n(t0), t0) < radius."""
    if radius <= 0:
        raise ValueError(f"rayon {radius} ≤ 0")
    points = parameter_orbit(driver, f0_param, horizon + 1)
    t0 = points[0]
    return [n for n in range(1, horizon + 1) if driver.distance(points[n], t0) < radius]


# -----------------------------------------------------------------------------
# Diagnostics de Birkhoff
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class OrbitDiagnostics:
    per_step_log_eta: np.ndarray
    birkhoff_partial_means: np.ndarray      # moyenne sur i < n, n = 1..L
    cauchy_differences: np.ndarray          # |mean_{2n} − mean_n|, n = 1..L/2
    epsilon_certificate: float
    n0: int
    drift_slope: float
    non_integrable: bool

    @property
    def limit_estimate(self) -> float:
        return float(self.birkhoff_partial_means[-1])


def log_eta_along(coefficients: np.ndarray) -> np.ndarray:
    """log η pour chaque application (N, 2, d+1)."""
    return np.array([proxy_from_coefficients(c[0], c[1]).log_eta for c in coefficients])


def diagnostics_from_log_eta(log_eta: Sequence[float], drift_threshold: float = DRIFT_THRESHOLD) -> OrbitDiagnostics:
    """
    Diagnostics à partir d'une suite log η(f_n) donnée.

    - ε-certificat : plus petit ε ≥ 0 tel que log η_n ≥ −εn pour n0 ≤ n < L,
      n0 = ⌈L/2⌉.
    - non-intégrabilité : valeur −∞ rencontrée, ou pente (régression linéaire)
      des moyennes partielles sur la seconde moitié telle que pente·L < −drift_threshold.
    """
    x = np.asarray(log_eta, dtype=float)
    length = len(x)
    if length < MIN_DIAGNOSTIC_LENGTH:
        raise ValueError(f"longueur {length} < {MIN_DIAGNOSTIC_LENGTH} pour les diagnostics")
    has_inf = bool(np.any(np.isneginf(x)))
    counts = np.arange(1, length + 1)
    half = length // 2
    with np.errstate(invalid="ignore"):
        means = np.cumsum(x) / counts
        cauchy = np.abs(means[2 * np.arange(1, half + 1) - 1] - means[np.arange(1, half + 1) - 1])

    n0 = math.ceil(length / 2)
    idx = np.arange(n0, length)
    with np.errstate(invalid="ignore"):
        eps = float(np.max(np.maximum(-x[idx], 0.0) / idx)) if len(idx) else 0.0

    if has_inf:
        slope = -math.inf
        flagged = True
    else:
        window = np.arange(half, length)
        slope = float(stats.linregress(window + 1, means[window]).slope)
        flagged = slope * length < -drift_threshold
    if flagged:
        logger.warning("orbite suspecte de non-intégrabilité (pente %.3g, L=%d)", slope, length)
    return OrbitDiagnostics(
        per_step_log_eta=x,
        birkhoff_partial_means=means,
        cauchy_differences=cauchy,
        epsilon_certificate=eps,
        n0=n0,
        drift_slope=slope,
        non_integrable=flagged,
    )


def birkhoff_diagnostics(driver: DriverSystem, f0_param: Any, length: int) -> OrbitDiagnostics:
    """Moyennes de Birkhoff de log η le long de l'orbite de f0_param."""
    if length < MIN_DIAGNOSTIC_LENGTH:
        raise ValueError(f"longueur {length} < {MIN_DIAGNOSTIC_LENGTH} pour les diagnostics")
    coeffs = orbit_raw_coefficients(driver, f0_param, length)
    diag = diagnostics_from_log_eta(log_eta_along(coeffs))
    logger.info(
        "diagnostics %s : moyenne %.4g, ε=%.4g, non_intégrable=%s",
        driver.kind, diag.limit_estimate, diag.epsilon_certificate, diag.non_integrable,
    )
    return diag
