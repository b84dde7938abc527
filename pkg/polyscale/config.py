"""
Configurazione: default, file utente (TOML o JSON) e override da riga di comando.

Il file utente e' organizzato per sezioni (model, sampler, scan, thresholds);
ogni sezione presente aggiorna quella di default con dict.update.
"""

import copy
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional

from polyscale.errors import ValidationError
from polyscale.model import ALIGNMENT_FAVORING
from polyscale.sampler import CLUSTER, DEFAULT_SEED, SamplerConfig
from polyscale.scan import ClassifierThresholds, ScanConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG: Dict[str, Dict[str, Any]] = {
    "model": {
        "alpha": 1.5,
        "sign_convention": ALIGNMENT_FAVORING,
    },
    "sampler": {
        "seed": DEFAULT_SEED,
        "burn_in_sweeps": None,
        "thinning_sweeps": None,
        "n_samples": 1,
        "algorithm": CLUSTER,
        "replicas": 200,
        "start": "hot",
        "workers": 1,
    },
    "scan": {
        "beta_grid": [0.0, 0.2, 0.4, 0.8, 1.6],
        "n_grid": [1024, 4096, 16384],
        "t_grid": [0.5, 1.0],
        "p": 2.0,
        "normalization": "unit_covariance",
        "anchor": "bulk",
        "delta": 0.2,
        "mode": "2d",
        "norm": "euclidean",
        "ref_samples": None,
        "jackknife_groups": 20,
        "atom_cap": 4096,
        "output_dir": None,
    },
    "thresholds": {
        "gamma_diffusive": 0.6,
        "gamma_ballistic": 0.9,
        "spearman": 0.8,
        "min_speed_sq": 0.01,
        "speed_se_factor": 10.0,
        "floor_se_factor": 3.0,
        "gamma_sanity_low": 0.4,
        "gamma_sanity_high": 1.1,
    },
}

# flag della CLI -> (sezione, chiave)
OVERRIDES = {
    "alpha": ("model", "alpha"),
    "sign": ("model", "sign_convention"),
    "beta": ("scan", "beta_grid"),
    "n": ("scan", "n_grid"),
    "p": ("scan", "p"),
    "seed": ("sampler", "seed"),
    "out": ("scan", "output_dir"),
    "replicas": ("sampler", "replicas"),
    "workers": ("sampler", "workers"),
    "algorithm": ("sampler", "algorithm"),
}


def load_config(config_file: Optional[str] = None) -> Dict[str, Dict[str, Any]]:
    """
    Carica la configurazione da file TOML/JSON sopra i default

    Args:
        config_file: percorso del file (None: solo default)

    Returns:
        dizionario di configurazione per sezioni
    """
    config = copy.deepcopy(DEFAULT_CONFIG)
    if not config_file:
        return config
    path = Path(config_file)
    if not path.exists():
        raise ValidationError(f"File di configurazione non trovato: {path}")
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as f:
                user_config = tomllib.load(f)
        else:
            with open(path, "r", encoding="utf-8") as f:
                user_config = json.load(f)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ValidationError(f"Configurazione non leggibile ({path}): {e}") from e

    for section, values in user_config.items():
        if section not in config:
            raise ValidationError(f"Sezione di configurazione sconosciuta: {section}")
        if not isinstance(values, dict):
            raise ValidationError(f"La sezione {section} deve essere una tabella")
        unknown = set(values) - set(config[section])
        if unknown:
            raise ValidationError(f"Chiavi sconosciute in [{section}]: {sorted(unknown)}")
        config[section].update(values)
    logger.info(f"📋 Configurazione caricata da {path}")
    return config


def apply_overrides(config: Dict[str, Dict[str, Any]], **overrides) -> Dict[str, Dict[str, Any]]:
    """Applica gli override della CLI (i valori None vengono ignorati)"""
    config = copy.deepcopy(config)
    for name, value in overrides.items():
        if value is None:
            continue
        if name not in OVERRIDES:
            raise ValidationError(f"Override sconosciuto: {name}")
        section, key = OVERRIDES[name]
        config[section][key] = value
    return config


def _build(cls, values: Dict[str, Any], section: str):
    try:
        return cls(**values)
    except TypeError as e:
        raise ValidationError(f"Sezione [{section}] non valida: {e}") from e


def sampler_config(config: Dict[str, Dict[str, Any]]) -> SamplerConfig:
    cfg = _build(SamplerConfig, config["sampler"], "sampler")
    cfg.validate()
    return cfg


def scan_config(config: Dict[str, Dict[str, Any]]) -> ScanConfig:
    sampler = sampler_config(config)
    thresholds = _build(ClassifierThresholds, config["thresholds"], "thresholds")
    scan = dict(config["scan"])
    for key in ("beta_grid", "t_grid"):
        scan[key] = tuple(float(v) for v in scan[key])
    scan["n_grid"] = tuple(int(v) for v in scan["n_grid"])
    cfg = _build(ScanConfig, dict(scan, alpha=float(config["model"]["alpha"]),
                                  sign_convention=config["model"]["sign_convention"], replicas=sampler.replicas,
                                  seed=sampler.seed, sampler=sampler, thresholds=thresholds), "scan")
    cfg.validate()
    return cfg
