# app/persistence/repositories/runs_repo.py
# -*- coding: utf-8 -*-
from sqlalchemy import select, func
from app.persistence.db import get_session
from app.persistence.models import RunRecord, ArtifactRecord
from app.services.artifacts import RunManifest

class RunRepository:
    def add(self, manifest: RunManifest, out_dir: str) -> RunRecord:
        """Enregistre un manifeste et les empreintes de ses artefacts."""
        with get_session() as s:
            r = RunRecord(
                subcommand=manifest.subcommand,
                config_digest=manifest.config_digest,
                seed=manifest.seed,
                tool_version=manifest.tool_version,
                started_at=manifest.started_at,
                wall_clock_s=float(manifest.wall_clock_s),
                exit_code=manifest.exit_code,
                hypothesis_violated=bool(manifest.hypothesis_violated),
                out_dir=str(out_dir),
                error=manifest.error,
            )
            r.artifacts = [ArtifactRecord(name=n, sha256=h) for n, h in sorted(manifest.artifacts.items())]
            s.add(r); s.flush(); s.refresh(r); s.expunge(r)
            return r

    def get(self, run_id: int) -> RunRecord | None:
        with get_session() as s:
            r = s.get(RunRecord, run_id)
            if r is not None:
                s.expunge(r)
            return r

    def last_n(self, n: int = 10):
        """Dernières exécutions, en ordre chronologique croissant."""
        with get_session() as s:
            stmt = select(RunRecord).order_by(RunRecord.id.desc()).limit(n)
            rows = list(s.scalars(stmt))
            for r in rows:
                s.expunge(r)
            return list(reversed(rows))

    def by_digest(self, config_digest: str):
        with get_session() as s:
            stmt = select(RunRecord).where(RunRecord.config_digest == config_digest).order_by(RunRecord.id.asc())
            rows = list(s.scalars(stmt))
            for r in rows:
                s.expunge(r)
            return rows

    def count(self) -> int:
        with get_session() as s:
            return s.scalar(select(func.count(RunRecord.id))) or 0

    def delete(self, run_id: int) -> bool:
        with get_session() as s:
            r = s.get(RunRecord, run_id)
            if not r:
                return False
            s.delete(r)
            return True
