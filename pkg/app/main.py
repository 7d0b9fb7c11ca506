# app/main.py
# -*- coding: utf-8 -*-
"""
GreenAlea : laboratoire des courants et mesures de Green aléatoires.

Exemples :
    # potentiel de Green pour z² constant
    python -m app.main potential --config configs/constant_z2.toml

    # mélange sur le pilote rotation, 4 threads, sortie dédiée
    python -m app.main mixing --config configs/rotation_mixing.toml --threads 4 --out runs/mix

    # pilote non conforme : exécution forcée, artefacts marqués
    python -m app.main mixing --config configs/contraction_drift.toml --force

Variables d'environnement :
    DB_URL               registre des exécutions (défaut sqlite:///greenalea_runs.db)
    GREENALEA_LOG_LEVEL  niveau de log par défaut (WARNING)
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

from app.services.experiment_config import ConfigError, load_config
from app.services.experiment_runner import EXIT_CONFIG, SUBCOMMANDS, RunResult, run

logger = logging.getLogger("greenalea")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    p = argparse.ArgumentParser(prog="greenalea", description="Courants et mesures de Green aléatoires")
    p.add_argument("subcommand", choices=sorted(SUBCOMMANDS), help="Pipeline à exécuter")
    p.add_argument("--config", required=True, help="Fichier de configuration TOML")
    p.add_argument("--seed", type=int, default=None, help="Graine maîtresse (surcharge [run].seed)")
    p.add_argument("--out", type=str, default=None, help="Dossier de sortie (surcharge [run].out)")
    p.add_argument("--threads", type=int, default=None, help="Nombre de threads (surcharge [run].threads)")
    p.add_argument("--strict", action="store_true", default=None, help="Code 4 si « hypothesis violated »")
    p.add_argument("--force", action="store_true", default=None, help="Exécuter un pilote non conforme")
    p.add_argument("--log-level", type=str, default=os.getenv("GREENALEA_LOG_LEVEL", "WARNING"),
                   help="Niveau de log (défaut: GREENALEA_LOG_LEVEL ou WARNING)")
    p.add_argument("--no-registry", action="store_true", help="Ne pas enregistrer l'exécution dans DB_URL")
    return p.parse_args(argv)


def record_run(result: RunResult) -> None:
    """Ligne de registre ; un échec est journalisé, jamais fatal."""
    try:
        from app.persistence.db import init_db
        from app.persistence.models import Base
        from app.persistence.repositories.runs_repo import RunRepository

        init_db(Base)
        RunRepository().add(result.manifest, str(result.out_dir))
    except Exception as e:  # noqa: BLE001
        logger.warning("registre indisponible : %s", e)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config).with_overrides(
            seed=args.seed, out=args.out, threads=args.threads, strict=args.strict, force=args.force,
        )
    except ConfigError as e:
        print(f"❌ Configuration invalide : {e}", file=sys.stderr)
        return EXIT_CONFIG

    print(f"➡️  {args.subcommand} | pilote {config.driver.kind} | seed {config.run.seed} | sortie {config.run.out}")
    result = run(args.subcommand, config)
    if not args.no_registry:
        record_run(result)

    if result.exit_code == 0:
        stamp = " ⚠️  hypothesis violated" if result.manifest.hypothesis_violated else ""
        print(f"✅ Terminé en {result.manifest.wall_clock_s:.1f}s : {result.message}{stamp}")
    else:
        print(f"❌ Code {result.exit_code} : {result.manifest.error or 'hypothesis violated'}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
