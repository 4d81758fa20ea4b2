'''
Reading scenario CSVs and writing run outputs.

Outputs are plain CSV (RFC 4180, "." decimal separator, 17 significant digits so
every double round-trips) and indented JSON.
'''
import csv
import json
import logging
import math
import os

import numpy as np
import pandas as pd

from errors import ParseError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
WEIGHT_COLUMN = "weight"


def ensure_dir(folder):
    '''
    Create the output folder if needed. Raises OSError if it cannot be created or written.
    '''
    if not os.path.exists(folder):
        os.makedirs(folder)
    if not os.access(folder, os.W_OK):
        raise PermissionError(f"output directory {folder} is not writable")
    return folder


def write_csv(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("wrote %s (%d rows)", path, len(frame))


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _clean(value):
    # JSON has no NaN/inf
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def write_json(obj, path):
    with open(path, mode="w", encoding="utf-8") as f:
        json.dump(_clean(obj), f, indent=2, default=_json_default)
        f.write("\n")
    logger.info("wrote %s", path)


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_scenarios_csv(path):
    '''
    Load an N x d scenario matrix from a CSV file, one scenario per row.
    A first row that is not numeric is a header; a header column named "weight"
    is split off as the L1 scaling weights.
    Returns (scenarios, weights or None, column names).
    '''
    rows, header, width = [], None, None
    with open(path, mode="r", newline="", encoding="utf-8") as f:
        for line_number, record in enumerate(csv.reader(f), start=1):
            if not record or all(not cell.strip() for cell in record):
                continue
            cells = [cell.strip() for cell in record]
            if header is None and not rows and not all(_is_number(c) for c in cells):
                header = cells
                width = len(cells)
                continue
            if width is None:
                width = len(cells)
            if len(cells) != width:
                raise ParseError(line_number, f"expected {width} fields, found {len(cells)}")
            try:
                values = [float(c) for c in cells]
            except ValueError as e:
                raise ParseError(line_number, f"non-numeric field ({e})") from e
            if not all(math.isfinite(v) for v in values):
                raise ParseError(line_number, "non-finite value")
            rows.append(values)
    if not rows:
        raise ParseError(1, "no scenario rows found")

    data = pd.DataFrame(rows, columns=header if header is not None else [f"x{j}" for j in range(width)])
    weights = None
    if WEIGHT_COLUMN in data.columns:
        weights = data.pop(WEIGHT_COLUMN).to_numpy(dtype=float)
    if data.shape[1] == 0:
        raise ParseError(1, "no scenario columns besides the weight column")
    logger.info("loaded %d scenarios of dimension %d from %s", data.shape[0], data.shape[1], path)
    return data.to_numpy(dtype=float), weights, list(data.columns)
