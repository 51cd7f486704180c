"""
Deterministic CSV output
"""
import csv
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import numpy as np
import structlog

logger = structlog.get_logger()


def fmt(value: Any) -> str:
    """Format a cell so that equal inputs give byte-identical text"""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    Write rows under a header, creating parent directories.

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(cell) for cell in row])
            count += 1
    logger.debug("CSV written", path=str(path), rows=count)
    return path
