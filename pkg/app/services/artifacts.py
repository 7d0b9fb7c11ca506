# app/services/artifacts.py
# -*- coding: utf-8 -*-
"""
Écriture des artefacts d'une exécution : CSV déterministes (pandas), JSON triés,
grilles binaires avec en-tête JSON, écho de la configuration et manifeste.

Chaque fichier écrit est référencé dans le manifeste avec son sha256. À
configuration et graine identiques, les octets des artefacts sont identiques
(le manifeste, lui, porte la durée d'exécution).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import numpy as np
import pandas as pd

from app.services.green_potential import GridSpec

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"
MANIFEST_NAME = "manifest.json"
CONFIG_ECHO_NAME = "config.toml"
VIOLATION_STAMP = "hypothesis violated"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def to_jsonable(obj: Any) -> Any:
    """Conversion récursive numpy -> types JSON ; ±inf et NaN deviennent des chaînes."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else str(value)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj if obj is None or isinstance(obj, str) else str(obj)


def cloud_frame(points: np.ndarray) -> pd.DataFrame:
    """Nuage homogène (M, 2) -> colonnes (re, im, chart), carte z si |z| ≤ |w|."""
    pts = np.asarray(points, dtype=complex)
    use_z = np.abs(pts[:, 0]) <= np.abs(pts[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        coord = np.where(use_z, pts[:, 0] / pts[:, 1], pts[:, 1] / pts[:, 0])
    return pd.DataFrame({
        "re": coord.real,
        "im": coord.imag,
        "chart": np.where(use_z, "z", "inv"),
    })


def grid_frame(values: np.ndarray, grid: GridSpec) -> pd.DataFrame:
    """Valeurs (2, N+1, N+1) -> colonnes (chart, re, im, g_value)."""
    xi = grid.chart_coordinates()
    frames = []
    for c, chart in enumerate(grid.charts):
        frames.append(pd.DataFrame({
            "chart": chart,
            "re": xi.real.reshape(-1),
            "im": xi.imag.reshape(-1),
            "g_value": np.asarray(values[c]).reshape(-1),
        }))
    return pd.concat(frames, ignore_index=True)


@dataclass
class RunManifest:
    subcommand: str
    config: Dict[str, Any]
    config_digest: str
    tool_version: str
    seed: int
    started_at: str
    wall_clock_s: float = 0.0
    artifacts: Dict[str, str] = field(default_factory=dict)
    exit_code: int = 0
    hypothesis_violated: bool = False
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(asdict(self))


class ArtifactWriter:
    """
    Écrivain sérialisé des artefacts d'un répertoire de sortie.

    Les en-têtes CSV portent l'empreinte de configuration, la graine et, si
    levé, le tampon « hypothesis violated ».
    """

    def __init__(self, out_dir: str | Path, config_digest: str, seed: int) -> None:
        self.out_dir = Path(out_dir)
        self.config_digest = config_digest
        self.seed = seed
        self.hypothesis_violated = False
        self.checksums: Dict[str, str] = {}
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def mark_violated(self, flag: bool = True) -> None:
        self.hypothesis_violated = self.hypothesis_violated or bool(flag)

    def _write(self, name: str, data: bytes) -> Path:
        path = self.out_dir / name
        path.write_bytes(data)
        self.checksums[name] = sha256_bytes(data)
        logger.debug("artefact %s (%d octets)", name, len(data))
        return path

    def _header_lines(self) -> Iterable[str]:
        yield f"# config_digest={self.config_digest}"
        yield f"# seed={self.seed}"
        if self.hypothesis_violated:
            yield f"# {VIOLATION_STAMP}"

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        text = "\n".join(self._header_lines()) + "\n" + body
        return self._write(name, text.encode("utf-8"))

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        doc = {
            "config_digest": self.config_digest,
            "seed": self.seed,
            "hypothesis_violated": self.hypothesis_violated,
            **payload,
        }
        text = json.dumps(to_jsonable(doc), sort_keys=True, indent=2) + "\n"
        return self._write(name, text.encode("utf-8"))

    def write_grid(self, name: str, values: np.ndarray, grid: GridSpec) -> Path:
        """Grille dense float64 petit-boutiste `name.bin` + en-tête `name.json`."""
        data = np.ascontiguousarray(values, dtype="<f8")
        self.write_json(f"{name}.json", {
            "resolution": grid.resolution,
            "extent": grid.extent,
            "chart": list(grid.charts),
            "shape": list(data.shape),
            "dtype": "float64-le",
        })
        return self._write(f"{name}.bin", data.tobytes())

    def write_config(self, toml_text: str) -> Path:
        return self._write(CONFIG_ECHO_NAME, toml_text.encode("utf-8"))

    def write_manifest(self, manifest: RunManifest) -> Path:
        manifest.artifacts = dict(sorted(self.checksums.items()))
        manifest.hypothesis_violated = manifest.hypothesis_violated or self.hypothesis_violated
        text = json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n"
        path = self.out_dir / MANIFEST_NAME
        path.write_text(text, encoding="utf-8")
        return path
