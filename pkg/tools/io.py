"""
File IO helpers: CSV tables via pandas and stable JSON documents
"""
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence, Union

import numpy as np
import pandas as pd

from tools.errors import InputError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def read_table(path: PathLike, required: Sequence[str], date_column: str = "date") -> pd.DataFrame:
    """Read a CSV with a header row and check the columns it must carry.

    Missing or non-numeric values are rejected with the offending file line
    (header is line 1). Dates, when present, must parse as ISO-8601 and be
    strictly increasing.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise InputError(f"{path}: file is empty", line=1)
    except pd.errors.ParserError as e:
        raise InputError(f"{path}: {e}")

    frame.columns = [str(c).strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise InputError(f"{path}: missing column(s) {', '.join(missing)}; found {list(frame.columns)}", line=1)

    out = pd.DataFrame(index=frame.index)
    for column in required:
        if column == date_column:
            continue
        raw = frame[column].str.strip()
        values = pd.to_numeric(raw, errors="coerce")
        bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=float, na_value=np.nan))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise InputError(f"{path}: column {column!r} has missing or non-numeric value {raw.iloc[row]!r}", line=row + 2)
        out[column] = values.astype(float)

    if date_column in required:
        dates = pd.to_datetime(frame[date_column].str.strip(), errors="coerce", format="ISO8601")
        if dates.isna().any():
            row = int(np.flatnonzero(dates.isna().to_numpy())[0])
            raise InputError(f"{path}: unparseable date {frame[date_column].iloc[row]!r}", line=row + 2)
        steps = dates.diff().iloc[1:]
        if (steps <= pd.Timedelta(0)).any():
            row = int(np.flatnonzero((steps <= pd.Timedelta(0)).to_numpy())[0]) + 1
            raise InputError(f"{path}: dates must be strictly increasing", line=row + 2)
        out[date_column] = dates

    logger.debug(f"read {len(out)} rows from {path}")
    return out


def write_table(path: PathLike, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write rows under a header; an empty row set still writes the header"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(rows), columns=list(columns))
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n", encoding="utf-8")
    logger.info(f"wrote {len(frame)} rows to {path}")
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "model_dump"):
        return _jsonable(value.model_dump(mode="json"))
    return value


def dump_json(payload: Dict[str, Any]) -> str:
    """Serialise with sorted keys; non-finite floats become null"""
    return json.dumps(_jsonable(payload), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)


def write_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(payload) + "\n", encoding="utf-8")
    logger.info(f"wrote {path}")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON: {e.msg}", line=e.lineno)
    if not isinstance(document, dict):
        raise InputError(f"{path}: expected a JSON object at top level")
    return document
