"""CSV and JSON writers shared by the CLI and the pipeline.

CSV tables are RFC 4180 (CRLF line ends) with a leading ``# generated-by``
comment and six significant digits; JSON keeps full float precision.
"""
from __future__ import annotations

import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .raster import AreaTable, TransitionMatrix

GENERATED_BY = f"# generated-by esvkit {__version__}"


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return f"{v:.6g}"
    return str(value)


def _write_rows(f, header, rows):
    f.write(GENERATED_BY + "\r\n")
    w = csv.writer(f)
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])


def write_csv(path, header, rows):
    """Write a CSV table; ``path`` may be ``"-"`` for standard output."""
    if str(path) == "-":
        _write_rows(sys.stdout, header, rows)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        _write_rows(f, header, rows)


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(line for line in f if not line.startswith("#")))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(_clean(obj), f, indent=2, allow_nan=False)
        f.write("\n")


def write_area_table(path, areas: AreaTable):
    write_csv(path, ["biome", "area_ha"], zip(areas.biomes, areas.area_ha))


def read_area_table(path, epoch_label: str = "") -> AreaTable:
    rows = read_csv(path)
    return AreaTable(tuple(r["biome"] for r in rows), [float(r["area_ha"]) for r in rows], epoch_label)


def write_transition_matrix(path, tm: TransitionMatrix):
    header = [f"{tm.epoch_pair[0]}\\{tm.epoch_pair[1]}", *tm.biomes]
    write_csv(path, header, ([b, *row] for b, row in zip(tm.biomes, tm.area_ha)))
