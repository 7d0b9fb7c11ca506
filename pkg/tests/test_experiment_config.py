# tests/test_experiment_config.py
# -*- coding: utf-8 -*-
"""
Tests unitaires pour app/services/experiment_config.py

Ce fichier couvre :
- le chargement TOML (valeurs par défaut, fichiers livrés dans configs/),
- l'aller-retour to_toml() -> load_config_text() sans perte,
- les erreurs (clé inconnue, TOML mal formé, grille, observable, littéral),
- l'empreinte de configuration et les surcharges de la ligne de commande,
- la construction des objets du domaine (pilote, grille, racine, observables).
"""

from pathlib import Path

import pytest

from app.services.experiment_config import (
    ConfigError,
    ExperimentConfig,
    build_driver,
    build_grid,
    build_observable,
    build_root,
    load_config,
    load_config_text,
    supported_drivers,
)
from app.services.parameter_dynamics import GOLDEN_ALPHA
from app.services.projective_maps import PointP1

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

ROTATION_TOML = """
[run]
seed = 3
out = "runs/rot"

[driver]
kind = "circle_rotation"
f0 = 0.0

[driver.family]
kind = "quadratic"
c0 = [0.0, 0.1]
radius = 0.05

[grid]
resolution = 64

[sampling]
depth = 12
count = 5000
depths = [2, 3, 4]
"""

# -----------------------------------------------------------------------------
# Chargement
# -----------------------------------------------------------------------------

def test_empty_text_gives_defaults():
    cfg = load_config_text("")
    assert cfg == ExperimentConfig()
    assert cfg.grid.resolution == 128
    assert cfg.sampling.count == 10_000
    assert cfg.driver.alpha == GOLDEN_ALPHA


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.name)
def test_shipped_configs_are_valid(path):
    cfg = load_config(path)
    assert cfg.driver.kind in supported_drivers()


def test_missing_file():
    with pytest.raises(ConfigError) as exc:
        load_config("/nonexistent/greenalea.toml")
    assert "introuvable" in str(exc.value)


def test_round_trip_is_lossless():
    cfg = load_config_text(ROTATION_TOML)
    again = load_config_text(cfg.to_toml())
    assert again == cfg
    assert again.digest() == cfg.digest()
    assert again.driver.family.c0 == (0.0, 0.1)


def test_tail_kappa_is_an_optional_override():
    cfg = load_config_text("")
    assert cfg.sampling.kappa is None
    assert "kappa" not in cfg.to_dict()["sampling"]
    pinned = load_config_text("[sampling]\nkappa = 0.25\np_hat = 2.0\n")
    assert load_config_text(pinned.to_toml()) == pinned
    assert pinned.digest() != cfg.digest()


def test_fraction_and_iid_parameters():
    cfg = load_config_text('[driver]\nkind = "doubling"\nf0 = "1/3"\n')
    assert cfg.driver.f0 == "1/3"
    cfg = load_config_text('[driver]\nkind = "iid_shift"\nf0 = [9, 0]\n')
    assert tuple(cfg.driver.f0) == (9, 0)


# -----------------------------------------------------------------------------
# Erreurs
# -----------------------------------------------------------------------------

def test_unknown_key_names_its_path():
    with pytest.raises(ConfigError) as exc:
        load_config_text('[driver]\nkidn = "constant"\n')
    assert "driver.kidn" in str(exc.value)


def test_malformed_toml_reports_line():
    with pytest.raises(ConfigError) as exc:
        load_config_text('[run]\nseed = 1\nout = "unterminated\n')
    assert "ligne" in str(exc.value)


@pytest.mark.parametrize(
    "text",
    [
        "[grid]\nresolution = 100\n",                     # non multiple de 4
        "[grid]\nextent = 1.5\n",                         # recouvrement non assuré
        '[observables]\nphi = "cos"\n',                   # observable inconnue
        '[driver]\nkind = "baker"\n',                     # pilote inconnu
        '[driver.family]\nkind = "literal"\n',            # littéral manquant
        "[sampling]\ncount = 10\n",                       # m < 1000
        "[run]\nthreads = 0\n",
        "[sampling]\ndepths = []\n",                      # aucune profondeur
        "[sampling]\ndepths = [2, -1]\n",
        "[sampling]\ninvariance_indices = []\n",
        "[sampling]\nkappa = -0.1\n",
        "[calibration]\napproach_offsets = [0.3, 0.1]\n",   # < 3 applications à ajuster
        '[driver.family]\nkind = "literal"\n[driver.family.literal]\ndegree = 2\nnum = [[1, 0]]\nden = [[0, 0]]\n',
    ],
)
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        load_config_text(text)


# -----------------------------------------------------------------------------
# Empreinte et surcharges
# -----------------------------------------------------------------------------

def test_digest_ignores_output_and_threads():
    cfg = load_config_text(ROTATION_TOML)
    assert cfg.with_overrides(out="elsewhere", threads=4).digest() == cfg.digest()
    assert cfg.with_overrides(seed=4).digest() != cfg.digest()
    assert len(cfg.digest()) == 64


def test_overrides():
    cfg = load_config_text(ROTATION_TOML)
    assert cfg.with_overrides(seed=None, out=None) is cfg
    new = cfg.with_overrides(seed=11, strict=True)
    assert new.run.seed == 11
    assert new.run.strict is True
    assert new.run.out == "runs/rot"
    assert cfg.run.seed == 3
    with pytest.raises(ConfigError):
        cfg.with_overrides(threads=0)


# -----------------------------------------------------------------------------
# Construction des objets du domaine
# -----------------------------------------------------------------------------

def test_build_rotation_driver():
    cfg = load_config_text(ROTATION_TOML)
    drv = build_driver(cfg)
    assert drv.kind == "circle_rotation"
    assert drv.alpha == GOLDEN_ALPHA
    assert drv.family.radius == 0.05
    assert drv.family.c0 == 0.1j
    grid = build_grid(cfg)
    assert grid.resolution == 64
    assert build_root(cfg) == PointP1(0.31 + 0.47j, 1.0)


def test_constant_driver_anchored_at_f0():
    cfg = load_config_text('[driver]\nkind = "constant"\nf0 = 0.25\n')
    drv = build_driver(cfg)
    assert drv.anchor == 0.25


def test_literal_family_is_built():
    text = (
        '[driver.family]\nkind = "literal"\n'
        "[driver.family.literal]\ndegree = 2\n"
        "num = [[1, 0], [0, 0], [0.25, 0]]\nden = [[0, 0], [0, 0], [1, 0]]\n"
    )
    drv = build_driver(load_config_text(text))
    assert drv.degree == 2


def test_build_observable_wraps_errors():
    assert build_observable("harmonic2").name == "harmonic2"
    with pytest.raises(ConfigError):
        build_observable("cos")
