# app/services/projective_maps.py
# -*- coding: utf-8 -*-
"""
Arithmétique de P^1 et endomorphismes de degré d via leurs relevés homogènes.

Contenu :
- PointP1 : point de P^1 en coordonnées homogènes (z, w), renormalisé.
- RationalMapP1 : couple de formes binaires (P, Q) de degré d, relevé normalisé
  (sup de ‖(P, Q)‖ sur la sphère unité = 1).
- resultant / degeneracy_proxy : résultant de Sylvester et proxy log η de la
  distance au lieu dégénéré M.
- preimages : racines de w_y·P − z_y·Q (valeurs propres de la matrice compagnon,
  puis polissage de Newton dans la carte adaptée).
- spherical_distance : distance chordale.

Les fonctions « batch » (préfixe evaluate_points, preimage_points, ...) travaillent
sur des tableaux numpy de forme (..., 2) et sont utilisées par les modules de
potentiel, de mesure et de mélange.

Usage:
    from app.services.projective_maps import PointP1, polynomial_map, preimages

    f = polynomial_map(2, 0.0)          # z -> z^2
    print(preimages(f, PointP1(4, 1)))  # [2:1], [-2:1]
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence

import numpy as np
from scipy import linalg, optimize

logger = logging.getLogger(__name__)

# Tolérances
NORMALIZATION_TOL = 1e-9        # sup du relevé normalisé = 1 à 1e-9 près
DEGENERACY_TOL = 1e-13          # η en dessous => application considérée dans M
PREIMAGE_RESIDUAL_TOL = 1e-8    # distance chordale max entre f(x) et y
SPHERE_SAMPLES_SIDE = 64        # 64 x 64 = 4096 points d'échantillonnage de la sphère
MAX_EXACT_DEGREE = 8            # au-delà, résultants non garantis (hors périmètre)
NEWTON_STEPS = 4


class DegenerateMapError(ValueError):
    """Application dans M : le résultant de (P, Q) est nul."""


class RootFindingError(RuntimeError):
    """Échec de la recherche des préimages ; porte les coefficients fautifs."""

    def __init__(self, message: str, coefficients: np.ndarray | None = None) -> None:
        super().__init__(message)
        self.coefficients = coefficients


class InternalConsistencyError(RuntimeError):
    """Situation impossible pour une application holomorphe (relevé nul en un point)."""


# -----------------------------------------------------------------------------
# Points de P^1
# -----------------------------------------------------------------------------

def normalize_points(points: np.ndarray) -> np.ndarray:
    """Renormalise des représentants homogènes (..., 2) : max(|z|, |w|) = 1."""
    pts = np.asarray(points, dtype=complex)
    scale = np.max(np.abs(pts), axis=-1, keepdims=True)
    if np.any(scale == 0):
        raise InternalConsistencyError("représentant homogène nul (0, 0)")
    return pts / scale


@dataclass(frozen=True, eq=False)
class PointP1:
    """Point de P^1, représentant homogène renormalisé à la construction."""
    z: complex
    w: complex

    def __post_init__(self) -> None:
        z, w = complex(self.z), complex(self.w)
        scale = max(abs(z), abs(w))
        if scale == 0:
            raise ValueError("(0, 0) ne représente aucun point de P^1")
        object.__setattr__(self, "z", z / scale)
        object.__setattr__(self, "w", w / scale)

    @classmethod
    def from_array(cls, arr: Sequence[complex]) -> "PointP1":
        return cls(arr[0], arr[1])

    @classmethod
    def affine(cls, z: complex) -> "PointP1":
        """Point [z:1] de la carte affine."""
        return cls(z, 1.0)

    @property
    def array(self) -> np.ndarray:
        return np.array([self.z, self.w], dtype=complex)

    def is_close(self, other: "PointP1", tol: float = 1e-9) -> bool:
        return spherical_distance(self, other) <= tol

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointP1):
            return NotImplemented
        # égalité projective : (z, w) ~ (λz, λw)
        return self.is_close(other, tol=1e-12)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        if abs(self.w) >= abs(self.z):
            return f"[{self.z / self.w:.6g}:1]"
        return f"[1:{self.w / self.z:.6g}]"


def chordal_distance_points(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Distance chordale |z_x w_y − z_y w_x| / (‖x‖‖y‖), vectorisée (broadcast)."""
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    num = np.abs(x[..., 0] * y[..., 1] - y[..., 0] * x[..., 1])
    den = np.linalg.norm(x, axis=-1) * np.linalg.norm(y, axis=-1)
    return np.clip(num / den, 0.0, 1.0)


def spherical_distance(x: PointP1, y: PointP1) -> float:
    """Distance chordale entre deux points de P^1, dans [0, 1]."""
    return float(chordal_distance_points(x.array, y.array))


# -----------------------------------------------------------------------------
# Formes binaires
# -----------------------------------------------------------------------------

def evaluate_form(coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
    """
    Évalue Σ_j c_j z^{d−j} w^j (Horner homogène).

    coeffs: (d+1,) ou (N, d+1) ; points: (..., 2). Pour des coefficients par ligne,
    points doit avoir la forme (N, ..., 2).
    """
    c = np.asarray(coeffs, dtype=complex)
    z = points[..., 0]
    w = points[..., 1]
    if c.ndim == 1:
        acc = np.full(z.shape, c[0], dtype=complex)
        w_pow = np.ones_like(w)
        for cj in c[1:]:
            w_pow = w_pow * w
            acc = acc * z + cj * w_pow
        return acc
    # coefficients par ligne : on aligne l'axe 0
    extra = z.ndim - 1
    acc = c[:, 0].reshape((-1,) + (1,) * extra) * np.ones_like(z)
    w_pow = np.ones_like(w)
    for j in range(1, c.shape[1]):
        w_pow = w_pow * w
        acc = acc * z + c[:, j].reshape((-1,) + (1,) * extra) * w_pow
    return acc


def sylvester_matrix(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Matrice de Sylvester 2d x 2d de deux formes binaires de degré d."""
    d = len(p) - 1
    mat = np.zeros((2 * d, 2 * d), dtype=complex)
    for i in range(d):
        mat[i, i:i + d + 1] = p
        mat[d + i, i:i + d + 1] = q
    return mat


def log_eta_max(degree: int) -> float:
    """Borne de Hadamard : |Res| ≤ (d+1)^d · ‖coeffs‖_max^{2d}."""
    return degree * math.log(degree + 1)


@dataclass(frozen=True)
class DegeneracyProxy:
    """Proxy calculable de dist(f, M) : log η = log|Res| − 2d·log‖coeffs‖_max."""
    log_resultant: float
    log_coeff_norm: float
    log_eta: float

    @property
    def is_degenerate(self) -> bool:
        return self.log_eta == -math.inf


def proxy_from_coefficients(num: np.ndarray, den: np.ndarray) -> DegeneracyProxy:
    """Proxy calculé sur des coefficients bruts (η est invariant par échelle)."""
    num = np.asarray(num, dtype=complex)
    den = np.asarray(den, dtype=complex)
    d = len(num) - 1
    coeff_max = float(max(np.max(np.abs(num)), np.max(np.abs(den))))
    if coeff_max == 0.0:
        return DegeneracyProxy(-math.inf, -math.inf, -math.inf)
    res = complex(linalg.det(sylvester_matrix(num, den)))
    log_norm = math.log(coeff_max)
    if res == 0:
        return DegeneracyProxy(-math.inf, log_norm, -math.inf)
    log_res = math.log(abs(res))
    log_eta = log_res - 2 * d * log_norm
    if log_eta < math.log(DEGENERACY_TOL):
        # bruit d'arrondi autour d'un résultant nul
        log_eta = -math.inf
    return DegeneracyProxy(log_res, log_norm, min(log_eta, log_eta_max(d)))


# -----------------------------------------------------------------------------
# Applications rationnelles
# -----------------------------------------------------------------------------

def _unit_representatives(a: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Représentants unitaires (cos a, sin a·e^{iφ}) de P^1."""
    return np.stack([np.cos(a) + 0j, np.sin(a) * np.exp(1j * phi)], axis=-1)


def lift_sup_on_sphere(num: np.ndarray, den: np.ndarray) -> float:
    """
    sup_{‖(z,w)‖=1} ‖(P, Q)(z, w)‖.

    Échantillonnage dense (64 x 64 = 4096 points de P^1, ‖F‖ est invariant par
    phase) puis raffinement local Nelder-Mead depuis les 3 meilleurs points.
    """
    a = np.linspace(0.0, math.pi / 2, SPHERE_SAMPLES_SIDE)
    phi = np.linspace(0.0, 2 * math.pi, SPHERE_SAMPLES_SIDE, endpoint=False)
    aa, pp = np.meshgrid(a, phi, indexing="ij")
    reps = _unit_representatives(aa.ravel(), pp.ravel())
    norms2 = np.abs(evaluate_form(num, reps)) ** 2 + np.abs(evaluate_form(den, reps)) ** 2
    best = float(np.sqrt(norms2.max()))

    def neg_norm2(x: np.ndarray) -> float:
        rep = _unit_representatives(np.array([x[0]]), np.array([x[1]]))
        return -float(np.abs(evaluate_form(num, rep)[0]) ** 2 + np.abs(evaluate_form(den, rep)[0]) ** 2)

    for idx in np.argsort(norms2)[-3:]:
        start = np.array([aa.ravel()[idx], pp.ravel()[idx]])
        res = optimize.minimize(
            neg_norm2, start, method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": NORMALIZATION_TOL * 1e-6, "maxiter": 2000},
        )
        best = max(best, math.sqrt(max(-res.fun, 0.0)))
    return best


@dataclass(frozen=True, eq=False)
class RationalMapP1:
    """
    Endomorphisme de P^1 de degré d, donné par son relevé homogène (P, Q).

    Coefficients de z^d à w^d. `scale` est le facteur par lequel les coefficients
    d'origine ont été divisés (normalisation du sup sur la sphère unité).
    Les applications dégénérées sont représentables, mais toute opération
    dynamique les rejette (require_holomorphic).
    """
    degree: int
    num: np.ndarray
    den: np.ndarray
    scale: float = 1.0
    normalized: bool = False
    proxy: DegeneracyProxy = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.proxy is None:
            object.__setattr__(self, "proxy", proxy_from_coefficients(self.num, self.den))

    @classmethod
    def from_coefficients(
        cls,
        num: Iterable[complex],
        den: Iterable[complex],
        *,
        normalize: bool = True,
    ) -> "RationalMapP1":
        """
        Construit l'application à partir des coefficients (z^d ... w^d).

        Args:
            num, den: deux suites de longueur d+1
            normalize: si True, divise par le sup du relevé sur la sphère unité

        Returns:
            RationalMapP1 immuable, avec son DegeneracyProxy pré-calculé
        """
        p = np.array(list(num), dtype=complex)
        q = np.array(list(den), dtype=complex)
        if p.ndim != 1 or p.shape != q.shape or len(p) < 3:
            raise ValueError(f"coefficients invalides : longueurs {p.shape} / {q.shape} (attendu d+1 ≥ 3)")
        d = len(p) - 1
        if d > MAX_EXACT_DEGREE:
            logger.warning("degré %d > %d : résultant et racines non garantis", d, MAX_EXACT_DEGREE)
        scale = 1.0
        if normalize:
            pre = float(max(np.max(np.abs(p)), np.max(np.abs(q))))
            if pre == 0.0:
                raise DegenerateMapError("relevé identiquement nul")
            p, q = p / pre, q / pre
            sup = lift_sup_on_sphere(p, q)
            p, q = p / sup, q / sup
            scale = pre * sup
            logger.debug("normalisation degré %d : facteur %.12g", d, scale)
        p.setflags(write=False)
        q.setflags(write=False)
        return cls(
            degree=d, num=p, den=q, scale=scale, normalized=normalize,
            proxy=proxy_from_coefficients(p, q),
        )

    @classmethod
    def from_literal(cls, literal: dict, *, normalize: bool = True) -> "RationalMapP1":
        """Format `{"degree": d, "num": [[re,im],...], "den": [[re,im],...]}`."""
        d = int(literal["degree"])
        num = [complex(re, im) for re, im in literal["num"]]
        den = [complex(re, im) for re, im in literal["den"]]
        if len(num) != d + 1 or len(den) != d + 1:
            raise ValueError(f"littéral de degré {d} : {len(num)} / {len(den)} coefficients")
        return cls.from_coefficients(num, den, normalize=normalize)

    def to_literal(self) -> dict:
        return {
            "degree": self.degree,
            "num": [[float(c.real), float(c.imag)] for c in self.num],
            "den": [[float(c.real), float(c.imag)] for c in self.den],
        }

    @property
    def coefficients(self) -> np.ndarray:
        """Tableau (2, d+1) : lignes P puis Q."""
        return np.stack([self.num, self.den])

    @property
    def cache_key(self) -> tuple:
        return (self.degree, self.num.tobytes(), self.den.tobytes())

    @property
    def is_degenerate(self) -> bool:
        return self.proxy.is_degenerate

    def scaled(self, factor: complex) -> "RationalMapP1":
        """Même application projective, coefficients multipliés (sans renormaliser)."""
        return RationalMapP1.from_coefficients(self.num * factor, self.den * factor, normalize=False)

    def __repr__(self) -> str:
        return f"RationalMapP1(d={self.degree}, log_eta={self.proxy.log_eta:.4g})"


def polynomial_map(degree: int, c: complex, *, normalize: bool = True) -> RationalMapP1:
    """z -> z^d + c, relevé (z^d + c w^d, w^d)."""
    num = np.zeros(degree + 1, dtype=complex)
    den = np.zeros(degree + 1, dtype=complex)
    num[0], num[-1], den[-1] = 1.0, c, 1.0
    return RationalMapP1.from_coefficients(num, den, normalize=normalize)


def require_holomorphic(f: RationalMapP1) -> None:
    if f.is_degenerate:
        raise DegenerateMapError(f"application dans M (résultant nul) : {f!r}")


# -----------------------------------------------------------------------------
# Évaluation
# -----------------------------------------------------------------------------

def apply_lift(f: RationalMapP1, points: np.ndarray) -> np.ndarray:
    """Relevé F(z, w) = (P, Q)(z, w) sans renormalisation (forme (..., 2))."""
    pts = np.asarray(points, dtype=complex)
    return np.stack([evaluate_form(f.num, pts), evaluate_form(f.den, pts)], axis=-1)


def evaluate_points(f: RationalMapP1, points: np.ndarray) -> np.ndarray:
    """Images projectives renormalisées d'un tableau de points (..., 2)."""
    require_holomorphic(f)
    image = apply_lift(f, points)
    if np.any(np.max(np.abs(image), axis=-1) == 0):
        raise InternalConsistencyError("les deux composantes du relevé s'annulent")
    return normalize_points(image)


def evaluate(f: RationalMapP1, x: PointP1) -> PointP1:
    """Image f(x), représentant renormalisé."""
    return PointP1.from_array(evaluate_points(f, x.array[None, :])[0])


# -----------------------------------------------------------------------------
# Résultant et proxy de dégénérescence
# -----------------------------------------------------------------------------

def resultant(f: RationalMapP1) -> complex:
    """Déterminant de la matrice de Sylvester de (P, Q) ; nul ssi f ∈ M."""
    return complex(linalg.det(sylvester_matrix(f.num, f.den)))


def degeneracy_proxy(f: RationalMapP1) -> DegeneracyProxy:
    """log η, η = |Res(P, Q)| / ‖coeffs‖_max^{2d} ; −∞ signalé pour f ∈ M."""
    return f.proxy


# -----------------------------------------------------------------------------
# Préimages
# -----------------------------------------------------------------------------

def _horner(coeffs: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Valeur et dérivée de Σ c_j x^{n−j} ; coeffs (N, n+1), x (N, k)."""
    val = np.repeat(coeffs[:, :1], x.shape[1], axis=1).astype(complex)
    der = np.zeros_like(val)
    for j in range(1, coeffs.shape[1]):
        der = der * x + val
        val = val * x + coeffs[:, j:j + 1]
    return val, der


def _companion_roots(poly: np.ndarray) -> np.ndarray:
    """Racines (N, n) de polynômes (N, n+1) à coefficient dominant non nul."""
    n = poly.shape[1] - 1
    monic = poly[:, 1:] / poly[:, :1]
    comp = np.zeros((poly.shape[0], n, n), dtype=complex)
    comp[:, 0, :] = -monic
    if n > 1:
        idx = np.arange(n - 1)
        comp[:, idx + 1, idx] = 1.0
    return np.linalg.eigvals(comp)


def _roots_one_form(c: np.ndarray) -> np.ndarray:
    """Cas général (lent) : zéros aux deux extrémités, une seule forme (d+1,)."""
    d = len(c) - 1
    tiny = 1e-14 * np.max(np.abs(c))
    nz = np.nonzero(np.abs(c) > tiny)[0]
    if len(nz) == 0:
        raise RootFindingError("forme binaire identiquement nulle", coefficients=c)
    first, last = nz[0], nz[-1]
    roots: List[np.ndarray] = [np.array([1.0, 0.0], dtype=complex)] * int(first)
    roots += [np.array([0.0, 1.0], dtype=complex)] * int(d - last)
    middle = c[first:last + 1]
    if len(middle) > 1:
        for r in linalg.eigvals(linalg.companion(middle)):
            roots.append(np.array([r, 1.0], dtype=complex))
    return normalize_points(np.array(roots))


def _polish(c: np.ndarray, roots: np.ndarray) -> np.ndarray:
    """Polissage de Newton, chaque racine dans la carte où sa coordonnée est ≤ 1."""
    rev = c[:, ::-1]
    for _ in range(NEWTON_STEPS):
        use_z = np.abs(roots[..., 0]) <= np.abs(roots[..., 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            zc = np.where(use_z, roots[..., 0] / roots[..., 1], 0.0)
            uc = np.where(use_z, 0.0, roots[..., 1] / roots[..., 0])
            pz, dpz = _horner(c, zc)
            pu, dpu = _horner(rev, uc)
            z_new = zc - pz / dpz
            u_new = uc - pu / dpu
        pz_new, _ = _horner(c, np.where(np.isfinite(z_new), z_new, zc))
        pu_new, _ = _horner(rev, np.where(np.isfinite(u_new), u_new, uc))
        # on n'accepte un pas que s'il fait baisser le résidu (racines multiples)
        ok_z = use_z & np.isfinite(z_new) & (np.abs(pz_new) < np.abs(pz))
        ok_u = ~use_z & np.isfinite(u_new) & (np.abs(pu_new) < np.abs(pu))
        new = roots.copy()
        new[ok_z] = np.stack([z_new[ok_z], np.ones(ok_z.sum())], axis=-1)
        new[ok_u] = np.stack([np.ones(ok_u.sum()), u_new[ok_u]], axis=-1)
        roots = normalize_points(new)
    return roots


def binary_form_roots(coeffs: np.ndarray) -> np.ndarray:
    """
    Racines projectives (avec multiplicité) de formes binaires.

    Args:
        coeffs: (N, d+1), coefficients de z^d à w^d, une forme par ligne

    Returns:
        np.ndarray (N, d, 2) de représentants renormalisés
    """
    c = np.atleast_2d(np.asarray(coeffs, dtype=complex))
    c = c / np.max(np.abs(c), axis=1, keepdims=True)
    n_rows, d = c.shape[0], c.shape[1] - 1
    lead, trail = np.abs(c[:, 0]), np.abs(c[:, -1])
    use_z = lead >= trail
    generic = np.maximum(lead, trail) > 1e-14
    roots = np.empty((n_rows, d, 2), dtype=complex)

    rows_z = np.nonzero(use_z & generic)[0]
    if len(rows_z):
        r = _companion_roots(c[rows_z])
        roots[rows_z, :, 0] = r
        roots[rows_z, :, 1] = 1.0
    rows_u = np.nonzero(~use_z & generic)[0]
    if len(rows_u):
        r = _companion_roots(c[rows_u, ::-1])
        roots[rows_u, :, 0] = 1.0
        roots[rows_u, :, 1] = r
    for i in np.nonzero(~generic)[0]:
        roots[i] = _roots_one_form(c[i])

    roots = normalize_points(roots)
    return _polish(c, roots)


def preimage_points(
    f: RationalMapP1,
    targets: np.ndarray,
    *,
    residual_tol: float = PREIMAGE_RESIDUAL_TOL,
) -> np.ndarray:
    """
    Les d préimages de chaque point cible (vectorisé).

    Args:
        f: application holomorphe
        targets: (N, 2) points y
        residual_tol: distance chordale max tolérée entre f(x) et y

    Returns:
        (N, d, 2) préimages (avec multiplicité)
    """
    require_holomorphic(f)
    y = normalize_points(np.atleast_2d(targets))
    # w_y·P − z_y·Q
    forms = y[:, 1:2] * f.num[None, :] - y[:, 0:1] * f.den[None, :]
    roots = binary_form_roots(forms)
    images = evaluate_points(f, roots)
    resid = chordal_distance_points(images, y[:, None, :])
    worst = float(np.max(resid)) if resid.size else 0.0
    if worst > residual_tol:
        bad = int(np.argmax(np.max(resid, axis=1)))
        raise RootFindingError(
            f"résidu {worst:.3e} > {residual_tol:.1e} pour la cible {y[bad]}",
            coefficients=forms[bad],
        )
    return roots


def preimages(f: RationalMapP1, y: PointP1) -> List[PointP1]:
    """Les d solutions de f(x) = y (multiset, multiplicité comprise)."""
    roots = preimage_points(f, y.array[None, :])[0]
    return [PointP1.from_array(r) for r in roots]

