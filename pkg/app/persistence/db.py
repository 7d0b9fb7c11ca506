# app/persistence/db.py
# -*- coding: utf-8 -*-
"""
Registre local des exécutions (SQLite par défaut, DB_URL pour en changer).

Le registre n'influence jamais les artefacts : il ne reçoit que les manifestes
déjà écrits.
"""
from contextlib import contextmanager
from pathlib import Path
import logging
import os

from sqlalchemy import create_engine, event
from sqlalchemy.engine import Engine, make_url
from sqlalchemy.orm import sessionmaker

DB_URL = os.getenv("DB_URL", "sqlite:///greenalea_runs.db")

logger = logging.getLogger(__name__)


def make_engine(url: str) -> Engine:
    """Moteur SQLAlchemy ; pour SQLite, crée le dossier parent et active les clés étrangères."""
    parsed = make_url(url)
    is_sqlite = parsed.get_backend_name() == "sqlite"
    if is_sqlite and parsed.database and parsed.database != ":memory:":
        Path(parsed.database).parent.mkdir(parents=True, exist_ok=True)
    eng = create_engine(url, echo=False, future=True)
    if is_sqlite:
        @event.listens_for(eng, "connect")
        def _fk_on(dbapi_conn, _record):
            cur = dbapi_conn.cursor()
            cur.execute("PRAGMA foreign_keys=ON")
            cur.close()
    return eng


engine = make_engine(DB_URL)

SessionLocal = sessionmaker(
    bind=engine,
    autoflush=False,
    autocommit=False,
    expire_on_commit=False,  # les RunRecord détachés restent lisibles
    future=True,
)

@contextmanager
def get_session():
    """Session du registre : commit en sortie, rollback journalisé sur erreur."""
    session = SessionLocal()
    try:
        yield session
        session.commit()
    except Exception as exc:
        logger.warning("registre : rollback (%s)", type(exc).__name__)
        session.rollback()
        raise
    finally:
        session.close()


def init_db(Base, drop_and_recreate: bool = False) -> None:
    """Crée les tables du registre (runs, artifacts) ; drop préalable si demandé."""
    if drop_and_recreate:
        logger.info("registre : drop du schéma sur %s", engine.url.render_as_string(hide_password=True))
        Base.metadata.drop_all(engine)
    Base.metadata.create_all(engine)
    logger.debug("registre : tables %s", sorted(Base.metadata.tables))
