# app/persistence/models.py
# -*- coding: utf-8 -*-
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship
from sqlalchemy import Integer, String, Float, Boolean, ForeignKey, UniqueConstraint

class Base(DeclarativeBase):
    pass

class RunRecord(Base):
    __tablename__ = "runs"

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    subcommand: Mapped[str] = mapped_column(String(64), index=True, nullable=False)
    config_digest: Mapped[str] = mapped_column(String(64), index=True, nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    tool_version: Mapped[str] = mapped_column(String(32), nullable=False)
    started_at: Mapped[str] = mapped_column(String(40), nullable=False)   # ISO 8601, UTC
    wall_clock_s: Mapped[float] = mapped_column(Float, nullable=False)
    exit_code: Mapped[int] = mapped_column(Integer, nullable=False)
    hypothesis_violated: Mapped[bool] = mapped_column(Boolean, default=False, nullable=False)
    out_dir: Mapped[str] = mapped_column(String(1024), nullable=False)
    error: Mapped[str | None] = mapped_column(String(2048), nullable=True)

    artifacts = relationship("ArtifactRecord", back_populates="run", cascade="all, delete-orphan", lazy="selectin")

class ArtifactRecord(Base):
    __tablename__ = "artifacts"
    __table_args__ = (UniqueConstraint("run_id", "name", name="uq_run_artifact"),)

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("runs.id"), index=True, nullable=False)
    name: Mapped[str] = mapped_column(String(255), nullable=False)
    sha256: Mapped[str] = mapped_column(String(64), nullable=False)

    run = relationship("RunRecord", back_populates="artifacts")
