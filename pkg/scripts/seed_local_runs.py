# scripts/seed_local_runs.py
# -*- coding: utf-8 -*-
"""
Seed local pour GreenAlea : exécute les configurations livrées et remplit le registre.

Caractéristiques :
- Idempotent : une paire (sous-commande, empreinte de config) déjà enregistrée est sautée
- Paramétrable via CLI : graine, dossier racine des sorties, sous-ensemble de sous-commandes
- Option (--wipe) pour drop+recreate le schéma (utile en dev)

Utilise :
- app/persistence/db.py                    -> init_db()
- app/persistence/models.py                -> Base
- app/persistence/repositories/runs_repo.py -> RunRepository
- app/services/experiment_config.py        -> load_config
- app/services/experiment_runner.py        -> run

Exemples :
    # toutes les exécutions de démonstration, sorties sous runs/seed
    python scripts/seed_local_runs.py

    # seulement le potentiel et les diagnostics, autre graine
    python scripts/seed_local_runs.py --only potential orbit-diagnostics --seed 11

    # recommencer à zéro
    python scripts/seed_local_runs.py --wipe
"""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from app.persistence.db import init_db
from app.persistence.models import Base
from app.persistence.repositories.runs_repo import RunRepository

from app.services.experiment_config import ConfigError, load_config
from app.services.experiment_runner import SUBCOMMANDS, run

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

# (sous-commande, fichier de configuration)
DEMO_RUNS: Tuple[Tuple[str, str], ...] = (
    ("orbit-diagnostics", "rotation_mixing.toml"),
    ("orbit-diagnostics", "contraction_drift.toml"),
    ("potential", "constant_z2.toml"),
    ("measure", "constant_z2.toml"),
    ("invariance", "rotation_invariance.toml"),
    ("continuity", "continuity_z2.toml"),
    ("mixing", "rotation_mixing.toml"),
    ("recurrence", "period2_recurrence.toml"),
    ("calibrate-distance", "calibrate_degenerate.toml"),
    ("skew-product", "skew_rotation.toml"),
)


# -------------------------------------------------------------------
# Seeding
# -------------------------------------------------------------------

def already_recorded(repo: RunRepository, subcommand: str, digest: str) -> bool:
    return any(r.subcommand == subcommand for r in repo.by_digest(digest))


def seed(*, runs: Sequence[Tuple[str, str]], out_root: Path, seed_value: Optional[int]) -> None:
    """Exécute chaque paire absente du registre et enregistre son manifeste."""
    repo = RunRepository()
    print(f"➡️  Seeding {len(runs)} exécution(s) | sorties sous {out_root} | seed={seed_value}")

    done = skipped = failed = 0
    for subcommand, name in runs:
        try:
            config = load_config(CONFIG_DIR / name).with_overrides(
                seed=seed_value, out=str(out_root / f"{subcommand}-{Path(name).stem}"),
            )
        except ConfigError as e:
            print(f"   ❌ {subcommand:<20} {name:<28} config invalide : {e}")
            failed += 1
            continue

        if already_recorded(repo, subcommand, config.digest()):
            print(f"   • {subcommand:<20} {name:<28} déjà enregistré")
            skipped += 1
            continue

        result = run(subcommand, config)
        repo.add(result.manifest, str(result.out_dir))
        flag = "  ⚠️ hypothesis violated" if result.manifest.hypothesis_violated else ""
        print(f"   • {subcommand:<20} {name:<28} code={result.exit_code}  "
              f"{result.manifest.wall_clock_s:.1f}s{flag}")
        if result.exit_code == 0:
            done += 1
        else:
            failed += 1

    print(f"✅ Terminé : {done} exécutée(s), {skipped} sautée(s), {failed} en échec. "
          f"Registre : {repo.count()} ligne(s).")


# -------------------------------------------------------------------
# CLI
# -------------------------------------------------------------------

def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    p = argparse.ArgumentParser(description="Seed local runs for GreenAlea")
    p.add_argument("--out-root", type=str, default="runs/seed", help="Dossier racine des sorties (défaut: runs/seed)")
    p.add_argument("--seed", type=int, default=None, help="Graine maîtresse (défaut: celle de chaque config)")
    p.add_argument("--only", nargs="+", choices=sorted(SUBCOMMANDS), default=None,
                   help="Sous-ensemble de sous-commandes à exécuter")
    p.add_argument("--wipe", action="store_true", help="Drop + recreate la base avant seeding")
    return p.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> None:
    args = parse_args(argv)

    if args.wipe:
        print("⚠️  Wipe : drop & recreate le schéma…")
    init_db(Base, drop_and_recreate=bool(args.wipe))

    runs = [r for r in DEMO_RUNS if args.only is None or r[0] in args.only]
    seed(runs=runs, out_root=Path(args.out_root), seed_value=args.seed)


if __name__ == "__main__":
    main()
