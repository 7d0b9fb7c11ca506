# app/services/experiment_config.py
# -*- coding: utf-8 -*-
"""
Configuration d'expérience : fichier TOML validé par des modèles pydantic
(clés inconnues refusées), aller-retour sans perte via to_toml().

Blocs : [run], [driver], [driver.family], [grid], [sampling], [observables],
[continuity], [recurrence], [calibration], [tolerances].

Les nombres complexes s'écrivent [re, im] ; un paramètre de pilote peut être un
réel, une fraction "1/3" (pilote doubling) ou un couple [seed, offset] (iid_shift).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, Any, List, Literal, Optional, Tuple, Union

import toml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.services.green_potential import GridSpec
from app.services.mixing_lab import Observable, ObservableError, builtin_observable
from app.services.parameter_dynamics import (
    DRIVER_KINDS,
    GOLDEN_ALPHA,
    DriverSystem,
    MapFamily,
)
from app.services.projective_maps import PointP1, RationalMapP1

ParamValue = Union[float, str, Tuple[int, int]]
Complex2 = Tuple[float, float]
Depth = Annotated[int, Field(ge=0)]


class ConfigError(ValueError):
    """Configuration invalide ; le message porte le chemin de clé ou la ligne TOML."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MapLiteral(_Strict):
    degree: int = Field(ge=2, le=8)
    num: List[Complex2]
    den: List[Complex2]

    @model_validator(mode="after")
    def _lengths(self) -> "MapLiteral":
        if len(self.num) != self.degree + 1 or len(self.den) != self.degree + 1:
            raise ValueError(f"littéral de degré {self.degree} : {len(self.num)} / {len(self.den)} coefficients")
        return self


class FamilyConfig(_Strict):
    kind: Literal["quadratic", "unicritical", "generic", "degenerate_approach", "literal"] = "quadratic"
    degree: int = Field(2, ge=2, le=8)
    c0: Complex2 = (0.0, 0.0)
    radius: float = 0.0
    mode: Literal["circle", "line"] = "circle"
    kappa: Complex2 = (0.3, 0.0)
    t_star: float = 0.5
    velocity: Complex2 = (1.0, 0.0)
    domain: Optional[Tuple[float, float]] = None
    literal: Optional[MapLiteral] = None

    @model_validator(mode="after")
    def _literal_present(self) -> "FamilyConfig":
        if self.kind == "literal" and self.literal is None:
            raise ValueError("famille literal : bloc [driver.family.literal] requis")
        return self


class DriverConfig(_Strict):
    kind: Literal["constant", "circle_rotation", "doubling", "logistic", "iid_shift", "contraction"] = "constant"
    alpha: float = GOLDEN_ALPHA
    rate: float = 0.5
    f0: ParamValue = 0.0
    family: FamilyConfig = FamilyConfig()


class RunConfig(_Strict):
    seed: int = 0
    out: str = "runs/out"
    threads: int = Field(1, ge=1)
    strict: bool = False
    force: bool = False


class GridConfig(_Strict):
    resolution: int = 128
    extent: float = 2.0

    @model_validator(mode="after")
    def _valid(self) -> "GridConfig":
        GridSpec(self.resolution, self.extent)
        return self


class SamplingConfig(_Strict):
    depth: int = Field(20, ge=0)
    count: int = Field(10_000, ge=1000)
    root: Complex2 = (0.31, 0.47)
    base_depth: int = Field(20, ge=1)
    depths: List[Depth] = Field(default_factory=lambda: list(range(2, 13)), min_length=1)
    bootstrap: int = Field(200, ge=10)
    orbit_length: int = Field(64, ge=16)
    invariance_indices: List[Depth] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    p_hat: float = Field(1.0, gt=0)
    kappa: Optional[float] = Field(None, ge=0)   # surcharge de ε̂·p̂ pour la queue


class ObservablesConfig(_Strict):
    phi: str = "harmonic1"
    psi: str = "log_chordal"
    family: List[str] = ["one", "re", "im", "fs", "harmonic1", "harmonic2", "log_chordal"]

    @field_validator("phi", "psi")
    @classmethod
    def _known(cls, v: str) -> str:
        builtin_observable(v)
        return v

    @field_validator("family")
    @classmethod
    def _known_all(cls, v: List[str]) -> List[str]:
        for name in v:
            builtin_observable(name)
        return v


class ContinuityConfig(_Strict):
    base: ParamValue = 0.0
    perturbations: List[ParamValue] = ["1/4", "1/8", "1/16", "1/32"]
    depth: int = Field(12, ge=1)
    p_hat: float = 1.0


class RecurrenceConfig(_Strict):
    horizon: int = Field(100, ge=1)
    radius: float = Field(0.02, gt=0)
    max_times: int = Field(12, ge=1)


class CalibrationConfig(_Strict):
    samples: int = Field(16, ge=3)
    approach_offsets: List[float] = Field(default_factory=lambda: [0.3, 0.1, 0.03, 0.01, 0.003], min_length=3)


class TolerancesConfig(_Strict):
    tail: float = 1e-4
    pullback_tv: float = 0.05
    pushforward_tv: float = 0.08
    skew_tv: float = 0.1


class ExperimentConfig(_Strict):
    run: RunConfig = RunConfig()
    driver: DriverConfig = DriverConfig()
    grid: GridConfig = GridConfig()
    sampling: SamplingConfig = SamplingConfig()
    observables: ObservablesConfig = ObservablesConfig()
    continuity: ContinuityConfig = ContinuityConfig()
    recurrence: RecurrenceConfig = RecurrenceConfig()
    calibration: CalibrationConfig = CalibrationConfig()
    tolerances: TolerancesConfig = TolerancesConfig()

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", exclude_none=True)

    def to_toml(self) -> str:
        return toml.dumps(self.to_dict())

    def digest(self) -> str:
        """
        Empreinte sha256 de la configuration résolue (JSON canonique), hors
        dossier de sortie et nombre de threads (sans effet sur les résultats).
        """
        resolved = self.to_dict()
        resolved["run"] = {k: v for k, v in resolved["run"].items() if k not in ("out", "threads")}
        blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def with_overrides(self, **run_fields: Any) -> "ExperimentConfig":
        """Surcharges CLI (--seed, --out, --threads, --strict, --force) ; None ignoré."""
        updates = {k: v for k, v in run_fields.items() if v is not None}
        if not updates:
            return self
        try:
            run = RunConfig.model_validate({**self.run.model_dump(), **updates})
        except ValidationError as e:
            raise ConfigError(f"run : {_format_validation(e)}") from e
        return self.model_copy(update={"run": run})


# -----------------------------------------------------------------------------
# Chargement
# -----------------------------------------------------------------------------

def _format_validation(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"])
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def load_config_text(text: str) -> ExperimentConfig:
    """Analyse et valide un texte TOML. Lève ConfigError (ligne ou chemin de clé)."""
    try:
        raw = toml.loads(text)
    except toml.TomlDecodeError as e:
        raise ConfigError(f"TOML invalide (ligne {e.lineno}) : {e.msg}") from e
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format_validation(e)) from e


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"fichier de configuration introuvable : {p}")
    return load_config_text(p.read_text(encoding="utf-8"))


# -----------------------------------------------------------------------------
# Construction des objets du domaine
# -----------------------------------------------------------------------------

def _c(pair: Complex2) -> complex:
    return complex(pair[0], pair[1])


def build_family(cfg: FamilyConfig) -> MapFamily:
    literal = None
    if cfg.literal is not None:
        literal = RationalMapP1.from_literal(cfg.literal.model_dump())
    return MapFamily(
        kind=cfg.kind,
        degree=cfg.degree,
        c0=_c(cfg.c0),
        radius=cfg.radius,
        mode=cfg.mode,
        kappa=_c(cfg.kappa),
        t_star=cfg.t_star,
        velocity=_c(cfg.velocity),
        domain=cfg.domain,
        literal=literal,
    )


def build_driver(cfg: ExperimentConfig) -> DriverSystem:
    d = cfg.driver
    family = build_family(d.family)
    anchor = 0.0
    if d.kind == "constant":
        anchor = float(DriverSystem(kind="circle_rotation", family=family).coerce(d.f0))
    return DriverSystem(kind=d.kind, family=family, alpha=d.alpha, rate=d.rate, anchor=anchor)


def build_grid(cfg: ExperimentConfig) -> GridSpec:
    return GridSpec(cfg.grid.resolution, cfg.grid.extent)


def build_root(cfg: ExperimentConfig) -> PointP1:
    return PointP1(_c(cfg.sampling.root), 1.0)


def build_observable(name: str) -> Observable:
    try:
        return builtin_observable(name)
    except ObservableError as e:
        raise ConfigError(f"observables : {e}") from e


def supported_drivers() -> Tuple[str, ...]:
    return DRIVER_KINDS
