"""Scrittura e lettura dei file di output (report JSON, CSV, metadati di esecuzione)."""

import json
import logging
import math
import platform
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import numba
import numpy as np
import ot
import pandas as pd
import scipy

from polyscale.errors import ValidationError
from polyscale.wasserstein import EmpiricalMeasure

logger = logging.getLogger(__name__)


def to_jsonable(obj: Any) -> Any:
    """Converte ricorsivamente numpy e NaN/inf (-> None) in tipi JSON"""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False)


def write_json(obj: Any, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(obj))
        f.write("\n")
    return path


def write_table(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(path, index=False)
    return path


def run_metadata(command: str, config: Dict[str, Any], started: datetime,
                 outputs: Dict[str, str], errors: Optional[list] = None) -> Dict[str, Any]:
    """Metadati dell'esecuzione: tempi, versioni, file prodotti"""
    finished = datetime.now()
    return {
        "command": command,
        "timestamp": started.isoformat(),
        "completion_timestamp": finished.isoformat(),
        "duration_seconds": (finished - started).total_seconds(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "numba": numba.__version__,
            "pot": ot.__version__,
        },
        "configuration": config,
        "output_files": outputs,
        "errors": errors or [],
    }


def read_points_csv(path) -> EmpiricalMeasure:
    """
    Legge una lista di punti da CSV: 1 o 2 colonne numeriche e una colonna 'weight' opzionale.

    Args:
        path: file CSV con intestazione

    Returns:
        EmpiricalMeasure
    """
    frame = pd.read_csv(path)
    weights = None
    if "weight" in frame.columns:
        weights = frame.pop("weight").to_numpy(dtype=float)
    numeric = frame.select_dtypes(include="number")
    if numeric.shape[1] not in (1, 2) or numeric.shape[1] != frame.shape[1]:
        raise ValidationError(f"{path}: servono 1 o 2 colonne numeriche (trovate {list(frame.columns)})")
    if len(numeric) == 0:
        raise ValidationError(f"{path}: nessun punto")
    return EmpiricalMeasure(numeric.to_numpy(dtype=float), weights)
