# app/services/mixing_lab.py
# -*- coding: utf-8 -*-
"""
Laboratoire de mélange : observables, estimation de la norme DSH, bornes
d'appariement ⟨μ, ψ⟩, opérateur de transfert Λ_f = f_*/d, expérience de
décroissance des corrélations et expérience de récurrence.

Corrélation à la profondeur n :
    |⟨μ(f_0), (f_{n−1}∘⋯∘f_0)^*φ · ψ⟩ − ⟨μ(f_n), φ⟩⟨μ(f_0), ψ⟩|
μ(f_0) est échantillonnée à la profondeur max(depths) + base_depth, μ(f_n) en
relançant l'échantillonneur sur l'orbite décalée.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from app.services.green_measure import (
    GreenMeasure,
    binned_distribution,
    measure_by_preimages,
    tv_binned,
)
from app.services.green_potential import GridSpec, fs_density, green_series
from app.services.parameter_dynamics import (
    DriverSystem,
    birkhoff_diagnostics,
    orbit,
    recurrence_times,
)
from app.services.projective_maps import (
    PointP1,
    RationalMapP1,
    chordal_distance_points,
    evaluate_points,
    normalize_points,
    preimage_points,
)

logger = logging.getLogger(__name__)

LOG_CHORDAL_DELTA = 1e-3
DEFAULT_BASE_DEPTH = 20
DEFAULT_BOOTSTRAP = 200
NOISE_FACTOR = 2.0               # profondeur « au-dessus du bruit » : |corr| > 2·SE
MIN_FIT_DEPTHS = 4
DIAGNOSTIC_LENGTH = 64
DEFAULT_ROOT = PointP1(0.31 + 0.47j, 1.0)
BUILTIN_PATTERN = re.compile(r"^(one|re|im|fs|log_chordal|harmonic(?:_sin)?(\d+))$")


class ObservableError(ValueError):
    """Observable inconnue ou à valeurs non finies."""


class HypothesisViolation(RuntimeError):
    """Pilote non conforme (diagnostics d'intégrabilité) sans --force."""


class NoRecurrenceError(ValueError):
    """Aucun temps de récurrence dans l'horizon demandé."""


# -----------------------------------------------------------------------------
# Observables
# -----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Observable:
    """Fonction réelle sur P^1, évaluée sur des représentants homogènes (..., 2)."""
    name: str
    kind: str
    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    sup_bound: float
    dsh_bound: Optional[float] = None

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.evaluator(np.asarray(points, dtype=complex))

    def scaled(self, factor: float) -> "Observable":
        ev = self.evaluator
        return Observable(
            name=f"{factor:g}*{self.name}",
            kind=self.kind,
            evaluator=lambda p: factor * ev(p),
            sup_bound=abs(factor) * self.sup_bound,
            dsh_bound=None if self.dsh_bound is None else abs(factor) * self.dsh_bound,
        )

    def with_dsh_bound(self, grid: GridSpec) -> "Observable":
        """Copie portant l'estimation de ‖ψ‖_DSH sur `grid`."""
        return Observable(self.name, self.kind, self.evaluator, self.sup_bound, estimate_dsh_norm(self, grid))

    def centered(self, mean: float) -> "Observable":
        ev = self.evaluator
        return Observable(
            name=f"{self.name}-{mean:.6g}",
            kind=self.kind,
            evaluator=lambda p: ev(p) - mean,
            sup_bound=self.sup_bound + abs(mean),
        )


def _sq(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    z, w = points[..., 0], points[..., 1]
    return z, w, np.abs(z) ** 2 + np.abs(w) ** 2


def _harmonic(k: int, use_sin: bool) -> Callable[[np.ndarray], np.ndarray]:
    def ev(points: np.ndarray) -> np.ndarray:
        z, w, _ = _sq(points)
        num = 2.0 * (z * np.conj(w)) ** k
        den = np.abs(z) ** (2 * k) + np.abs(w) ** (2 * k)
        return (num.imag if use_sin else num.real) / den
    return ev


def _log_chordal(points: np.ndarray) -> np.ndarray:
    target = np.array([1.0, 1.0], dtype=complex)
    chord = chordal_distance_points(points, target)
    return 0.5 * np.log(chord ** 2 + LOG_CHORDAL_DELTA ** 2)


def builtin_observable(name: str) -> Observable:
    """
    Observables lisses intégrées : one, re, im, fs, harmonic<k>, harmonic_sin<k>,
    log_chordal.

    - re, im : Re z/(1+|z|²), Im z/(1+|z|²)
    - fs : 1/(1+|z|²)
    - harmonic<k> : 2·Re((z w̄)^k)/(|z|^{2k}+|w|^{2k}) (= cos kθ sur le cercle unité)
    - log_chordal : ½·log(chord(x, [1:1])² + δ²), δ = 1e−3
    """
    m = BUILTIN_PATTERN.match(name)
    if not m:
        raise ObservableError(f"observable inconnue : {name!r}")
    if name == "one":
        return constant_observable(1.0, name="one")
    if name in ("re", "im"):
        part = np.real if name == "re" else np.imag

        def ev(points: np.ndarray) -> np.ndarray:
            z, w, n2 = _sq(points)
            return part(z * np.conj(w)) / n2
        return Observable(name, "smooth_builtin", ev, sup_bound=0.5)
    if name == "fs":
        def ev_fs(points: np.ndarray) -> np.ndarray:
            _, w, n2 = _sq(points)
            return np.abs(w) ** 2 / n2
        return Observable(name, "smooth_builtin", ev_fs, sup_bound=1.0)
    if name == "log_chordal":
        return Observable(name, "smooth_builtin", _log_chordal, sup_bound=-math.log(LOG_CHORDAL_DELTA))
    k = int(m.group(2))
    if k < 1:
        raise ObservableError(f"harmonique d'ordre {k} < 1")
    return Observable(name, "smooth_builtin", _harmonic(k, name.startswith("harmonic_sin")), sup_bound=1.0)


def constant_observable(c: float, name: Optional[str] = None) -> Observable:
    return Observable(
        name or f"const({c:g})", "smooth_builtin",
        lambda p: np.full(np.shape(p)[:-1], float(c)),
        sup_bound=abs(c),
    )


def grid_function_observable(values: np.ndarray, grid: GridSpec, name: str = "grid_function") -> Observable:
    """Observable tabulée sur la grille (2, N+1, N+1), interpolée dans la carte où |coord| ≤ 1."""
    vals = np.asarray(values, dtype=float)
    if vals.shape != grid.shape:
        raise ObservableError(f"forme {vals.shape} ≠ {grid.shape}")
    if not np.all(np.isfinite(vals)):
        raise ObservableError(f"{name} : valeurs non finies sur la grille")
    nodes = grid.nodes()
    interps = [RegularGridInterpolator((nodes, nodes), vals[c]) for c in range(2)]

    def ev(points: np.ndarray) -> np.ndarray:
        pts = normalize_points(points)
        flat = pts.reshape(-1, 2)
        use_z = np.abs(flat[:, 0]) <= np.abs(flat[:, 1])
        out = np.empty(len(flat))
        xi = flat[use_z, 0] / flat[use_z, 1]
        out[use_z] = interps[0](np.stack([xi.real, xi.imag], axis=-1))
        xi = flat[~use_z, 1] / flat[~use_z, 0]
        out[~use_z] = interps[1](np.stack([xi.real, xi.imag], axis=-1))
        return out.reshape(pts.shape[:-1])

    return Observable(name, "grid_function", ev, sup_bound=float(np.max(np.abs(vals))))


def observable_on_grid(psi: Observable, grid: GridSpec) -> np.ndarray:
    values = psi(grid.homogeneous_points())
    if not np.all(np.isfinite(values)):
        raise ObservableError(f"{psi.name} : valeurs non finies sur la grille")
    return values


# -----------------------------------------------------------------------------
# Norme DSH
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class DshEstimate:
    l1: float
    positive_mass: float
    negative_mass: float

    @property
    def norm(self) -> float:
        return self.l1 + self.positive_mass + self.negative_mass


def dsh_decomposition(psi: Observable, grid: GridSpec) -> DshEstimate:
    """
    ‖ψ‖_{L¹} (volume FS discret normalisé à 1) et masses des parties positive et
    négative de dd^c ψ discret (décomposition de Jordan, majorant de inf ‖T^±‖).
    """
    values = observable_on_grid(psi, grid)
    xi = grid.chart_coordinates()
    chi = grid.weights()
    vol = chi * fs_density(xi)[None, :, :]
    l1 = float(np.sum(vol * np.abs(values)) / np.sum(vol))
    lap = np.zeros_like(values)
    lap[:, 1:-1, 1:-1] = (
        values[:, 2:, 1:-1] + values[:, :-2, 1:-1] + values[:, 1:-1, 2:] + values[:, 1:-1, :-2]
        - 4.0 * values[:, 1:-1, 1:-1]
    )
    ddc = chi * lap / (2.0 * np.pi)
    return DshEstimate(
        l1=l1,
        positive_mass=float(ddc[ddc > 0].sum()),
        negative_mass=float(-ddc[ddc < 0].sum()),
    )


def estimate_dsh_norm(psi: Observable, grid: GridSpec) -> float:
    """Estimation (majorante) de ‖ψ‖_DSH, déterministe pour une grille donnée."""
    return dsh_decomposition(psi, grid).norm


# -----------------------------------------------------------------------------
# Bornes d'appariement
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class PairingReport:
    observable: str
    pairing: float
    std_error: float
    dsh_norm: float
    ratio: float
    reverse_ratio: float


def check_pairing_bounds(mu: GreenMeasure, g_sup: float, psi: Observable, grid: GridSpec) -> PairingReport:
    """
    |⟨μ, ψ⟩| / ((1 + ‖g‖_∞)·‖ψ‖_DSH) et le rapport inverse
    ‖ψ‖_DSH / ((1 + ‖g‖_∞)·‖ψ‖^μ_DSH), ‖ψ‖^μ_DSH = |⟨μ, ψ⟩| + masses de dd^c ψ.
    """
    vals = psi(mu.sample_cloud)
    pairing = float(np.mean(vals))
    se = float(np.std(vals) / math.sqrt(len(vals)))
    dec = dsh_decomposition(psi, grid)
    denom = (1.0 + g_sup) * dec.norm
    ratio = abs(pairing) / denom if denom > 0 else (0.0 if pairing == 0 else math.inf)
    mu_norm = abs(pairing) + dec.positive_mass + dec.negative_mass
    reverse = dec.norm / ((1.0 + g_sup) * mu_norm) if mu_norm > 0 else (0.0 if dec.norm == 0 else math.inf)
    return PairingReport(psi.name, pairing, se, dec.norm, ratio, reverse)


def pairing_constant(
    mu: GreenMeasure, g_sup: float, observables: Sequence[Observable], grid: GridSpec,
) -> Tuple[float, List[PairingReport]]:
    """Constante unique majorant le rapport sur la famille d'observables (ajustée, rapportée)."""
    reports = [check_pairing_bounds(mu, g_sup, psi, grid) for psi in observables]
    finite = [r.ratio for r in reports if math.isfinite(r.ratio)]
    return (max(finite) if finite else 0.0), reports


# -----------------------------------------------------------------------------
# Opérateur de transfert
# -----------------------------------------------------------------------------

def transfer_operator(f: RationalMapP1, psi: Observable, points: np.ndarray) -> np.ndarray:
    """(Λ_f ψ)(y) = (1/d)·Σ_{f(x)=y} ψ(x), multiplicités comprises."""
    roots = preimage_points(f, np.asarray(points).reshape(-1, 2))
    return psi(roots).mean(axis=1)


def _derived_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float

    @property
    def z_score(self) -> float:
        se = math.hypot(self.lhs_se, self.rhs_se)
        return abs(self.lhs - self.rhs) / se if se > 0 else (0.0 if self.lhs == self.rhs else math.inf)


def operator_identity_check(
    driver: DriverSystem, f0_param: Any, phi: Observable, psi: Observable, m: int, seed: int,
    *, base_depth: int = DEFAULT_BASE_DEPTH, root: PointP1 = DEFAULT_ROOT,
) -> IdentityCheck:
    """⟨μ(f_0), f_0^*φ·ψ⟩ contre ⟨μ(f_1), φ·Λ_0ψ⟩, deux routes Monte-Carlo indépendantes."""
    maps = orbit(driver, f0_param, base_depth + 2)
    x = measure_by_preimages(maps, base_depth, root, m, _derived_seed(seed, 0)).sample_cloud
    y = measure_by_preimages(maps[1:], base_depth, root, m, _derived_seed(seed, 1)).sample_cloud
    lhs_vals = phi(evaluate_points(maps[0], x)) * psi(x)
    rhs_vals = phi(y) * transfer_operator(maps[0], psi, y)
    sq = math.sqrt(m)
    return IdentityCheck(
        float(lhs_vals.mean()), float(lhs_vals.std() / sq),
        float(rhs_vals.mean()), float(rhs_vals.std() / sq),
    )


def mean_zero_check(
    driver: DriverSystem, f0_param: Any, psi: Observable, m: int, seed: int,
    *, base_depth: int = DEFAULT_BASE_DEPTH, root: PointP1 = DEFAULT_ROOT,
) -> Tuple[float, float]:
    """Estimation (valeur, erreur type) de ⟨μ(f_1), Λ_0 ψ₀⟩, ψ₀ = ψ − ⟨μ(f_0), ψ⟩."""
    maps = orbit(driver, f0_param, base_depth + 2)
    x = measure_by_preimages(maps, base_depth, root, m, _derived_seed(seed, 0)).sample_cloud
    y = measure_by_preimages(maps[1:], base_depth, root, m, _derived_seed(seed, 1)).sample_cloud
    psi_x = psi(x)
    centered = psi.centered(float(psi_x.mean()))
    vals = transfer_operator(maps[0], centered, y)
    se = math.sqrt(vals.var() / m + psi_x.var() / m)
    return float(vals.mean()), se


# -----------------------------------------------------------------------------
# Expérience de mélange
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class MixingReport:
    depths: np.ndarray
    estimates: np.ndarray          # valeurs signées
    correlations: np.ndarray       # valeurs absolues
    std_errors: np.ndarray
    err_low: np.ndarray            # intervalle bootstrap 95 % (signé)
    err_high: np.ndarray
    g_n_sup: np.ndarray
    bound_shape: np.ndarray        # d^{-n}(1+‖g_n‖)²·‖φ‖_∞·‖ψ‖_DSH
    fitted_rate: Optional[float]
    fitted_constant: float
    dominance_ok: bool
    degree: int
    hypothesis_violated: bool = False

    def rows(self) -> List[Dict[str, float]]:
        return [
            {
                "n": int(n), "correlation": float(c), "err_low": float(lo), "err_high": float(hi),
                "g_n_sup": float(g), "bound_shape": float(b),
            }
            for n, c, lo, hi, g, b in zip(
                self.depths, self.correlations, self.err_low, self.err_high, self.g_n_sup, self.bound_shape,
            )
        ]


def bootstrap_correlation(
    a: np.ndarray, psi_x: np.ndarray, b: np.ndarray, rng: np.random.Generator, resamples: int,
) -> np.ndarray:
    """Rééchantillonnage de mean(a·ψ) − mean(b)·mean(ψ) (a, ψ appariés ; b indépendant)."""
    m, k = len(a), len(b)
    out = np.empty(resamples)
    for r in range(resamples):
        i = rng.integers(0, m, m)
        j = rng.integers(0, k, k)
        out[r] = np.mean(a[i] * psi_x[i]) - np.mean(b[j]) * np.mean(psi_x[i])
    return out


def fit_decay(depths: np.ndarray, corr: np.ndarray, se: np.ndarray) -> Tuple[Optional[float], np.ndarray]:
    """Pente pondérée de log|corr| en n sur les profondeurs au-dessus du bruit (≥ 4 requises)."""
    above = (corr > NOISE_FACTOR * se) & (corr > 0)
    if above.sum() < MIN_FIT_DEPTHS:
        return None, above
    weights = corr[above] / np.where(se[above] > 0, se[above], 1.0)
    slope, _ = np.polyfit(depths[above].astype(float), np.log(corr[above]), 1, w=weights)
    return float(slope), above


def require_compliance(driver: DriverSystem, f0_param: Any, force: bool, length: int = DIAGNOSTIC_LENGTH) -> bool:
    """Vérifie les diagnostics de Birkhoff ; lève HypothesisViolation sauf si force."""
    diag = birkhoff_diagnostics(driver, f0_param, length)
    if diag.non_integrable:
        if not force:
            raise HypothesisViolation(f"pilote {driver.kind} non conforme (dérive des moyennes de Birkhoff)")
        logger.warning("pilote non conforme exécuté avec --force : hypothesis violated")
    return diag.non_integrable


def mixing_experiment(
    driver: DriverSystem,
    f0_param: Any,
    phi: Observable,
    psi: Observable,
    depths: Sequence[int],
    m: int,
    seed: int,
    *,
    grid: GridSpec = GridSpec(64),
    base_depth: int = DEFAULT_BASE_DEPTH,
    root: PointP1 = DEFAULT_ROOT,
    bootstrap: int = DEFAULT_BOOTSTRAP,
    force: bool = False,
    threads: int = 1,
) -> MixingReport:
    """
    Corrélations par profondeur avec barres d'erreur bootstrap, courbe de borne
    et pente ajustée.

    Args:
        driver, f0_param: pilote et paramètre initial
        phi: observable bornée (facteur L^∞)
        psi: observable DSH
        depths: profondeurs n ≥ 0
        m: taille des nuages
        seed: graine maîtresse
        force: exécuter un pilote non conforme (rapport marqué)

    Returns:
        MixingReport
    """
    violated = require_compliance(driver, f0_param, force)
    depths_arr = np.array(sorted(set(int(n) for n in depths)))
    if len(depths_arr) == 0 or depths_arr[0] < 0:
        raise ValueError(f"profondeurs invalides : {list(depths)}")
    n_max = int(depths_arr[-1])
    maps = orbit(driver, f0_param, n_max + base_depth + 1)
    d = maps[0].degree

    x = measure_by_preimages(maps, n_max + base_depth, root, m, _derived_seed(seed, 0), threads=threads).sample_cloud
    psi_x = psi(x)
    psi_mean = float(psi_x.mean())
    pulled: Dict[int, np.ndarray] = {}
    pts = x
    for n in range(n_max + 1):
        if n in depths_arr:
            pulled[n] = phi(pts)
        if n < n_max:
            pts = evaluate_points(maps[n], pts)

    rng = np.random.default_rng(_derived_seed(seed, 1))
    psi_dsh = psi.dsh_bound if psi.dsh_bound is not None else estimate_dsh_norm(psi, grid)
    est, se, lo, hi, gsup = [], [], [], [], []
    for n in depths_arr:
        mu_n = measure_by_preimages(
            maps[n:], base_depth, root, m, _derived_seed(seed, 2, int(n)), orbit_index=int(n), threads=threads,
        )
        phi_n = phi(mu_n.sample_cloud)
        value = float(np.mean(pulled[n] * psi_x) - np.mean(phi_n) * psi_mean)
        boot = bootstrap_correlation(pulled[n], psi_x, phi_n, rng, bootstrap)
        est.append(value)
        se.append(float(np.std(boot)))
        lo.append(float(np.percentile(boot, 2.5)))
        hi.append(float(np.percentile(boot, 97.5)))
        gsup.append(green_series(maps[n:n + base_depth + 1], base_depth, grid, threads=threads).sup_norm)
        logger.debug("profondeur %d : corrélation %.4e ± %.2e", n, value, se[-1])

    est_arr, se_arr, g_arr = np.array(est), np.array(se), np.array(gsup)
    corr = np.abs(est_arr)
    shape = d ** (-depths_arr.astype(float)) * (1.0 + g_arr) ** 2 * phi.sup_bound * psi_dsh
    rate, above = fit_decay(depths_arr, corr, se_arr)
    basis = above if above.any() else np.ones_like(above, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(shape[basis] > 0, corr[basis] / shape[basis], 0.0)
    constant = float(np.max(ratios)) if len(ratios) else 0.0
    dominance = bool(np.all(corr <= constant * shape + NOISE_FACTOR * se_arr + 1e-15))
    logger.info("mélange : pente %s, constante %.4g, domination %s", rate, constant, dominance)
    return MixingReport(
        depths=depths_arr,
        estimates=est_arr,
        correlations=corr,
        std_errors=se_arr,
        err_low=np.array(lo),
        err_high=np.array(hi),
        g_n_sup=g_arr,
        bound_shape=shape,
        fitted_rate=rate,
        fitted_constant=constant,
        dominance_ok=dominance,
        degree=d,
        hypothesis_violated=violated,
    )


# -----------------------------------------------------------------------------
# Récurrence
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class RecurrenceRow:
    alpha_n: int
    correlation: float
    std_error: float
    tv_binned: float


@dataclass(frozen=True)
class RecurrenceTable:
    rows: List[RecurrenceRow]
    phi_mean: float
    psi_mean: float
    hypothesis_violated: bool = False


def recurrence_experiment(
    driver: DriverSystem,
    f0_param: Any,
    phi: Observable,
    psi: Observable,
    horizon: int,
    radius: float,
    m: int,
    seed: int,
    *,
    max_times: int = 12,
    base_depth: int = DEFAULT_BASE_DEPTH,
    root: PointP1 = DEFAULT_ROOT,
    force: bool = False,
    threads: int = 1,
) -> RecurrenceTable:
    """
    Le long des temps de récurrence α(n) : corrélation contre le produit
    ⟨μ(f_0),φ⟩⟨μ(f_0),ψ⟩ et tv_binned(μ(f_α), μ(f_0)).
    """
    times = recurrence_times(driver, f0_param, horizon, radius)[:max_times]
    if not times:
        raise NoRecurrenceError(
            f"aucun retour à distance < {radius} avant l'horizon {horizon} pour {driver.kind}"
        )
    violated = require_compliance(driver, f0_param, force)
    a_max = times[-1]
    maps = orbit(driver, f0_param, a_max + base_depth + 1)
    x = measure_by_preimages(maps, a_max + base_depth, root, m, _derived_seed(seed, 0), threads=threads).sample_cloud
    psi_x, phi_x = psi(x), phi(x)
    product = float(phi_x.mean() * psi_x.mean())
    hist_0 = binned_distribution(x)

    rows: List[RecurrenceRow] = []
    pts = x
    current = 0
    for a in times:
        while current < a:
            pts = evaluate_points(maps[current], pts)
            current += 1
        vals = phi(pts) * psi_x
        corr = float(vals.mean()) - product
        se = float(vals.std() / math.sqrt(m))
        mu_a = measure_by_preimages(maps[a:], base_depth, root, m, _derived_seed(seed, 3, a), orbit_index=a, threads=threads)
        rows.append(RecurrenceRow(a, corr, se, tv_binned(binned_distribution(mu_a.sample_cloud), hist_0)))
    return RecurrenceTable(rows=rows, phi_mean=float(phi_x.mean()), psi_mean=float(psi_x.mean()), hypothesis_violated=violated)
