import json
import logging
import math
import os
import tempfile
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.15g"


class OutputError(Exception):
    """Raised when a result file cannot be written"""
    pass


def _atomic_write(path: Union[str, Path], text: str) -> Path:
    """Writes to a temporary sibling, then renames over ``path``."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, target)
    except OSError as e:
        logger.error(f"Failed to write {target}: {str(e)}", exc_info=True)
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OutputError(f"cannot write {target}: {e.strerror}")
    return target


def frame_to_csv(frame: pd.DataFrame, columns: Optional[List[str]] = None) -> str:
    """CSV text with 15 significant digits and exactly ``columns`` as header."""
    if columns is not None:
        frame = frame.reindex(columns=columns)
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_csv(path: Union[str, Path], frame: pd.DataFrame, columns: Optional[List[str]] = None) -> Path:
    target = _atomic_write(path, frame_to_csv(frame, columns))
    logger.info(f"Wrote {len(frame)} rows to {target}")
    return target


def to_plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Enum):
        return value.value
    return value


def records_to_jsonl(records: Iterable[Dict[str, Any]]) -> str:
    return "".join(json.dumps(to_plain(record)) + "\n" for record in records)


def write_jsonl(path: Union[str, Path], records: Iterable[Dict[str, Any]]) -> Path:
    records = list(records)
    target = _atomic_write(path, records_to_jsonl(records))
    logger.info(f"Wrote {len(records)} records to {target}")
    return target
