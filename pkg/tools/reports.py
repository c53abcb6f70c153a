"""
Structured report and CSV writers shared by the experiment commands.
"""

import json
import math
from dataclasses import asdict, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, List, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from utils.logging import get_service_logger

logger = get_service_logger("reports", "tools")


def jsonable(value: Any) -> Any:
    """Convert reports (dataclasses, pydantic models, numpy values, complex, enums) to JSON types."""
    if isinstance(value, BaseModel):
        return jsonable(value.model_dump(by_alias=True))
    if is_dataclass(value) and not isinstance(value, type):
        return jsonable(asdict(value))
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {'re': jsonable(float(value.real)), 'im': jsonable(float(value.imag))}
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value) or math.isinf(value):
            return str(value)
        return value
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    return value


def dumps_report(data: Any) -> str:
    return json.dumps(jsonable(data), indent=2, sort_keys=True) + "\n"


def write_report(data: Any, path: Union[str, Path]) -> Path:
    """Write a structured JSON report; parent directories are created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(data))
    logger.info("Wrote report", path=str(path))
    return path


def write_rows_csv(rows: Iterable[dict], path: Union[str, Path], columns: List[str]) -> Path:
    """Write rows (dicts) with a fixed column order and full float precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([{c: jsonable(r.get(c)) for c in columns} for r in rows], columns=columns)
    frame.to_csv(path, index=False, float_format='%.17g')
    logger.info("Wrote CSV", path=str(path), rows=len(frame))
    return path
