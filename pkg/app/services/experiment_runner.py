# app/services/experiment_runner.py
# -*- coding: utf-8 -*-
"""
Exécution reproductible d'une sous-commande : construction des objets à partir
de la configuration, pipeline du module concerné, artefacts et manifeste.

Codes de sortie : 0 succès, 2 configuration invalide, 3 échec numérique,
4 hypothèse violée (HypothesisViolation, ou drapeau levé avec --strict).
"""

from __future__ import annotations

import datetime as dt
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from app.services.artifacts import ArtifactWriter, RunManifest, cloud_frame, grid_frame
from app.services.experiment_config import (
    ConfigError,
    ExperimentConfig,
    build_driver,
    build_grid,
    build_observable,
    build_root,
)
from app.services.green_measure import (
    SamplingError,
    TailTooLargeError,
    invariance_pullback_check,
    invariance_pushforward_check,
    measure_by_preimages,
    measure_distance,
    measure_from_potential,
)
from app.services.green_potential import (
    GridSpec,
    SeriesDepthError,
    calibrate_distance,
    continuity_experiment,
    green_series,
    growth_diagnostic,
    shifted_potential_sups,
)
from app.services.mixing_lab import (
    HypothesisViolation,
    NoRecurrenceError,
    ObservableError,
    mean_zero_check,
    mixing_experiment,
    operator_identity_check,
    pairing_constant,
    recurrence_experiment,
    require_compliance,
)
from app.services.parameter_dynamics import (
    DriverSystem,
    ParameterDomainError,
    birkhoff_diagnostics,
    orbit,
)
from app.services.projective_maps import (
    DegenerateMapError,
    InternalConsistencyError,
    RootFindingError,
)
from app.services.skew_product import skew_invariance_check

logger = logging.getLogger(__name__)

TOOL_VERSION = "0.1.0"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_HYPOTHESIS = 4

NUMERIC_ERRORS = (
    DegenerateMapError,
    RootFindingError,
    InternalConsistencyError,
    ParameterDomainError,
    SeriesDepthError,
    TailTooLargeError,
    SamplingError,
    ObservableError,
    NoRecurrenceError,
    FloatingPointError,
    np.linalg.LinAlgError,
    ValueError,                 # autres erreurs de domaine levées dans un pipeline
)

GROWTH_SHIFTS = 8
GROWTH_EPSILONS = (0.01, 0.05, 0.1)


@dataclass
class RunContext:
    config: ExperimentConfig
    driver: DriverSystem
    grid: GridSpec
    writer: ArtifactWriter

    @property
    def seed(self) -> int:
        return self.config.run.seed

    @property
    def threads(self) -> int:
        return self.config.run.threads

    @property
    def f0(self) -> Any:
        return self.config.driver.f0

    def check_driver(self) -> None:
        """Diagnostics de conformité ; marque les artefacts si --force."""
        violated = require_compliance(
            self.driver, self.f0, self.config.run.force, self.config.sampling.orbit_length,
        )
        self.writer.mark_violated(violated)

    def tail_kappa(self) -> float:
        """κ = ε̂·p̂ (ε-certificat de l'orbite), sauf surcharge [sampling].kappa."""
        sampling = self.config.sampling
        if sampling.kappa is not None:
            return sampling.kappa
        diag = birkhoff_diagnostics(self.driver, self.f0, sampling.orbit_length)
        return diag.epsilon_certificate * sampling.p_hat


@dataclass
class RunResult:
    exit_code: int
    manifest: RunManifest
    out_dir: Path
    message: str = ""


# -----------------------------------------------------------------------------
# Sous-commandes
# -----------------------------------------------------------------------------

def _orbit_diagnostics(ctx: RunContext) -> Dict[str, Any]:
    length = ctx.config.sampling.orbit_length
    diag = birkhoff_diagnostics(ctx.driver, ctx.f0, length)
    ctx.writer.mark_violated(diag.non_integrable)
    half = len(diag.cauchy_differences)
    ctx.writer.write_csv("orbit_diagnostics.csv", pd.DataFrame({
        "n": np.arange(length),
        "log_eta": diag.per_step_log_eta,
        "partial_mean": diag.birkhoff_partial_means,
        "cauchy_difference": np.concatenate([diag.cauchy_differences, np.full(length - half, np.nan)]),
    }))
    growth: Dict[float, Optional[int]] = {}
    if not diag.non_integrable:
        sups = shifted_potential_sups(
            ctx.driver, ctx.f0, list(range(GROWTH_SHIFTS)), ctx.config.sampling.depth, ctx.grid,
            threads=ctx.threads,
        )
        growth = growth_diagnostic(sups, GROWTH_EPSILONS)
    ctx.writer.write_json("orbit_diagnostics.json", {
        "limit_estimate": diag.limit_estimate,
        "epsilon_certificate": diag.epsilon_certificate,
        "n0": diag.n0,
        "drift_slope": diag.drift_slope,
        "non_integrable": diag.non_integrable,
        "growth_n0": {f"{eps:g}": n for eps, n in growth.items()},
    })
    return {"limite": diag.limit_estimate, "ε": diag.epsilon_certificate}


def _potential(ctx: RunContext) -> Dict[str, Any]:
    ctx.check_driver()
    depth = ctx.config.sampling.depth
    maps = orbit(ctx.driver, ctx.f0, depth + 1)
    series = green_series(maps, depth, ctx.grid, kappa=ctx.tail_kappa(), threads=ctx.threads)
    ctx.writer.write_csv("g_grid.csv", grid_frame(series.values, ctx.grid))
    ctx.writer.write_json("potential.json", {
        "partial_depth": series.partial_depth,
        "tail_bound": series.tail_bound,
        "kappa": series.kappa,
        "sup_norm": series.sup_norm,
        "value_at_one": series.value_near(1.0),
        "term_ledger": series.term_ledger(),
    })
    return {"profondeur": depth, "queue": series.tail_bound}


def _measure(ctx: RunContext) -> Dict[str, Any]:
    ctx.check_driver()
    cfg = ctx.config
    depth = cfg.sampling.depth
    maps = orbit(ctx.driver, ctx.f0, depth + 1)
    series = green_series(maps, depth, ctx.grid, kappa=ctx.tail_kappa(), threads=ctx.threads)
    laplacian = measure_from_potential(
        series, tail_tol=cfg.tolerances.tail, cloud_size=cfg.sampling.count, seed=ctx.seed,
    )
    sampled = measure_by_preimages(
        maps, depth, build_root(cfg), cfg.sampling.count, ctx.seed + 1, threads=ctx.threads,
    )
    dist = measure_distance(laplacian, sampled)
    observables = [build_observable(name) for name in cfg.observables.family]
    constant, reports = pairing_constant(laplacian, series.sup_norm, observables, ctx.grid)

    ctx.writer.write_csv("cloud_laplacian.csv", cloud_frame(laplacian.sample_cloud))
    ctx.writer.write_csv("cloud_preimage.csv", cloud_frame(sampled.sample_cloud))
    ctx.writer.write_grid("grid_masses", laplacian.grid_masses, ctx.grid)
    ctx.writer.write_csv("pairing.csv", pd.DataFrame([asdict(r) for r in reports]))
    ctx.writer.write_json("measure.json", {
        "depth": depth,
        "tail_bound": series.tail_bound,
        "kappa": series.kappa,
        "refine_factor": laplacian.refine_factor,
        "mass_before_renormalization": laplacian.mass_before_renormalization,
        "renormalization_factor": laplacian.renormalization_factor,
        "clipped_negative_mass": laplacian.clipped_negative_mass,
        "mass_defect": laplacian.mass_defect,
        "tv_binned": dist.tv_binned,
        "energy_dist": dist.energy_dist,
        "pairing_constant": constant,
    })
    return {"tv(laplacien, préimages)": dist.tv_binned}


def _invariance(ctx: RunContext) -> Dict[str, Any]:
    ctx.check_driver()
    cfg = ctx.config
    depth = cfg.sampling.depth
    indices = sorted(set(cfg.sampling.invariance_indices))
    maps = orbit(ctx.driver, ctx.f0, max(indices) + depth + 2)
    root = build_root(cfg)
    measures: Dict[int, Any] = {}

    def mu(i: int):
        if i not in measures:
            measures[i] = measure_by_preimages(
                maps[i:], depth, root, cfg.sampling.count, ctx.seed + 10 * i, orbit_index=i, threads=ctx.threads,
            )
        return measures[i]

    rows: List[Dict[str, Any]] = []
    for i in indices:
        pull = invariance_pullback_check(mu(i + 1), maps[i], mu(i), seed=ctx.seed + 10 * i + 5)
        push = invariance_pushforward_check(mu(i), maps[i], mu(i + 1))
        rows.append({
            "i": i,
            "pullback_tv": pull.tv_binned,
            "pullback_energy": pull.energy_dist,
            "pushforward_tv": push.tv_binned,
            "pushforward_energy": push.energy_dist,
            "pullback_ok": pull.tv_binned < cfg.tolerances.pullback_tv,
            "pushforward_ok": push.tv_binned < cfg.tolerances.pushforward_tv,
        })
    ctx.writer.write_csv("invariance.csv", pd.DataFrame(rows))

    phi = build_observable(cfg.observables.phi)
    psi = build_observable(cfg.observables.psi)
    identity = operator_identity_check(
        ctx.driver, ctx.f0, phi, psi, cfg.sampling.count, ctx.seed, base_depth=depth, root=root,
    )
    mean_zero, mean_zero_se = mean_zero_check(
        ctx.driver, ctx.f0, psi, cfg.sampling.count, ctx.seed, base_depth=depth, root=root,
    )
    ctx.writer.write_json("transfer_operator.json", {
        "identity_lhs": identity.lhs,
        "identity_rhs": identity.rhs,
        "identity_z_score": identity.z_score,
        "mean_zero_value": mean_zero,
        "mean_zero_std_error": mean_zero_se,
    })
    return {"pullback max": max(r["pullback_tv"] for r in rows), "pushforward max": max(r["pushforward_tv"] for r in rows)}


def _continuity(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config.continuity
    report = continuity_experiment(
        ctx.driver, cfg.base, cfg.perturbations, cfg.depth, ctx.grid, p_hat=cfg.p_hat, threads=ctx.threads,
    )
    ctx.writer.mark_violated(report.hypothesis_violated)
    ctx.writer.write_csv("continuity.csv", pd.DataFrame({
        "start": [str(s) for s in report.starts],
        "sup_difference": report.sup_differences,
    }))
    ctx.writer.write_json("continuity.json", {
        "h_terms": report.h_terms,
        "h_diagnostic": report.h_diagnostic,
        "p_hat": report.p_hat,
        "decreasing": report.decreasing,
    })
    return {"décroissant": report.decreasing}


def _mixing(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    report = mixing_experiment(
        ctx.driver, ctx.f0,
        build_observable(cfg.observables.phi), build_observable(cfg.observables.psi),
        cfg.sampling.depths, cfg.sampling.count, ctx.seed,
        grid=ctx.grid, base_depth=cfg.sampling.base_depth, root=build_root(cfg),
        bootstrap=cfg.sampling.bootstrap, force=cfg.run.force, threads=ctx.threads,
    )
    ctx.writer.mark_violated(report.hypothesis_violated)
    ctx.writer.write_csv("mixing.csv", pd.DataFrame(report.rows()))
    ctx.writer.write_json("mixing.json", {
        "degree": report.degree,
        "fitted_rate": report.fitted_rate,
        "fitted_constant": report.fitted_constant,
        "dominance_ok": report.dominance_ok,
        "estimates": report.estimates,
        "std_errors": report.std_errors,
    })
    return {"pente": report.fitted_rate, "domination": report.dominance_ok}


def _recurrence(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.config
    table = recurrence_experiment(
        ctx.driver, ctx.f0,
        build_observable(cfg.observables.phi), build_observable(cfg.observables.psi),
        cfg.recurrence.horizon, cfg.recurrence.radius, cfg.sampling.count, ctx.seed,
        max_times=cfg.recurrence.max_times, base_depth=cfg.sampling.base_depth, root=build_root(cfg),
        force=cfg.run.force, threads=ctx.threads,
    )
    ctx.writer.mark_violated(table.hypothesis_violated)
    ctx.writer.write_csv("recurrence.csv", pd.DataFrame({
        "alpha_n": [r.alpha_n for r in table.rows],
        "correlation": [r.correlation for r in table.rows],
        "tv_binned": [r.tv_binned for r in table.rows],
    }))
    ctx.writer.write_json("recurrence.json", {
        "phi_mean": table.phi_mean,
        "psi_mean": table.psi_mean,
        "std_errors": [r.std_error for r in table.rows],
    })
    return {"temps de retour": len(table.rows)}


def calibration_parameters(ctx: RunContext) -> np.ndarray:
    """Paramètres de famille : approche de t* ou tirage uniforme dans le domaine."""
    family = ctx.driver.family
    cfg = ctx.config.calibration
    if family.kind == "degenerate_approach":
        return family.t_star + np.asarray(cfg.approach_offsets, dtype=float)
    lo, hi = family.domain if family.domain is not None else (0.0, 1.0)
    return np.sort(lo + (hi - lo) * np.random.default_rng(ctx.seed).random(cfg.samples))


def _calibrate_distance(ctx: RunContext) -> Dict[str, Any]:
    params = calibration_parameters(ctx)
    maps = [ctx.driver.family.map_at(float(t)) for t in params]
    report = calibrate_distance(maps, ctx.grid)
    ctx.writer.write_csv("calibration.csv", pd.DataFrame({
        "log_inv_eta": report.log_inv_eta,
        "log_sup_u": report.log_sup_u,
    }))
    ctx.writer.write_json("calibration.json", {
        "parameters": params,
        "p_hat": report.p_hat,
        "log_c": report.log_c,
        "c_hat": report.c_hat,
        "r_value": report.r_value,
        "lipschitz_c": report.lipschitz_c,
    })
    return {"p̂": report.p_hat, "C": report.c_hat}


def _skew_product(ctx: RunContext) -> Dict[str, Any]:
    ctx.check_driver()
    cfg = ctx.config
    report = skew_invariance_check(
        ctx.driver, cfg.sampling.count, cfg.sampling.depth, ctx.seed, threads=ctx.threads,
    )
    ctx.writer.write_json("skew_product.json", {
        "count": report.count,
        "depth": report.depth,
        "tv_invariance": report.tv_invariance,
        "tv_control": report.tv_control,
        "invariant": report.tv_invariance < cfg.tolerances.skew_tv,
    })
    return {"tv(α, τ_*α)": report.tv_invariance}


SUBCOMMANDS: Dict[str, Callable[[RunContext], Dict[str, Any]]] = {
    "orbit-diagnostics": _orbit_diagnostics,
    "potential": _potential,
    "measure": _measure,
    "invariance": _invariance,
    "continuity": _continuity,
    "mixing": _mixing,
    "recurrence": _recurrence,
    "calibrate-distance": _calibrate_distance,
    "skew-product": _skew_product,
}


# -----------------------------------------------------------------------------
# Point d'entrée
# -----------------------------------------------------------------------------

def run(subcommand: str, config: ExperimentConfig) -> RunResult:
    """
    Exécute `subcommand` et écrit les artefacts dans config.run.out.

    Le manifeste est écrit pour toute exécution, y compris en échec.
    """
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"sous-commande inconnue : {subcommand!r} (attendu {sorted(SUBCOMMANDS)})")
    out_dir = Path(config.run.out)
    writer = ArtifactWriter(out_dir, config.digest(), config.run.seed)
    manifest = RunManifest(
        subcommand=subcommand,
        config=config.to_dict(),
        config_digest=config.digest(),
        tool_version=TOOL_VERSION,
        seed=config.run.seed,
        started_at=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    )
    writer.write_config(config.to_toml())
    t0 = time.perf_counter()
    summary: Dict[str, Any] = {}
    code = EXIT_NUMERIC
    try:
        try:
            driver = build_driver(config)
            grid = build_grid(config)
        except ValueError as e:
            raise ConfigError(f"driver : {e}") from e
        ctx = RunContext(config=config, driver=driver, grid=grid, writer=writer)
        summary = SUBCOMMANDS[subcommand](ctx)
        code = EXIT_HYPOTHESIS if (config.run.strict and writer.hypothesis_violated) else EXIT_OK
    except ConfigError as e:
        logger.error("configuration invalide : %s", e)
        code, manifest.error = EXIT_CONFIG, str(e)
    except HypothesisViolation as e:
        logger.error("hypothèse violée : %s", e)
        code, manifest.error = EXIT_HYPOTHESIS, str(e)
    except NUMERIC_ERRORS as e:
        logger.error("échec numérique (%s) : %s", type(e).__module__, e)
        code, manifest.error = EXIT_NUMERIC, f"{type(e).__name__}: {e}"
    except Exception as e:
        logger.exception("échec inattendu de %s", subcommand)
        manifest.error = f"{type(e).__name__}: {e}"
        raise
    finally:
        manifest.exit_code = code
        manifest.wall_clock_s = round(time.perf_counter() - t0, 3)
        writer.write_manifest(manifest)
    message = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items())
    return RunResult(exit_code=code, manifest=manifest, out_dir=out_dir, message=message)
