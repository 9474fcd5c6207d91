"""
Artifact writers.

Every run artifact goes through these helpers so that reruns are
byte-identical: floats are written with repr(), JSON keys are sorted, and
nothing time-dependent is ever recorded.
"""

import csv
import json
import logging
from pathlib import Path

import numpy as np

from utils.errors import DataIOError

logger = logging.getLogger(__name__)


def format_value(value):
    """Render a scalar for CSV output deterministically."""
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def to_jsonable(value):
    """Convert numpy containers/scalars into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Path):
        return value.as_posix()
    return value


def write_csv(path, header, rows):
    """
    Write a CSV file with a header row.

    Args:
        path: output file
        header (list[str]): column names
        rows (iterable): sequences of scalars, one per row

    Returns:
        Path: the written path
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='') as fh:
            writer = csv.writer(fh, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_value(v) for v in row])
    except OSError as e:
        raise DataIOError(f"Could not write {path}: {e}") from e
    logger.debug("Wrote %s", path)
    return path


def write_json(path, payload):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as fh:
            json.dump(to_jsonable(payload), fh, indent=2, sort_keys=True)
            fh.write('\n')
    except OSError as e:
        raise DataIOError(f"Could not write {path}: {e}") from e
    logger.debug("Wrote %s", path)
    return path


def csv_text(header, rows, delimiter=','):
    """Same formatting as write_csv, returned as a string (for stdout tables)."""
    lines = [delimiter.join(header)]
    for row in rows:
        lines.append(delimiter.join(format_value(v) for v in row))
    return '\n'.join(lines) + '\n'
