"""Categorical land-use rasters: reclassification, class areas, change
rates and epoch-to-epoch transition matrices.

Grids hold integer class codes in a 2-D array. After :func:`reclassify` the
codes are biome indices ``0..K-1`` and the grid carries the biome names, which
is what :func:`class_areas` and :func:`transition_matrix` consume.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    RasterFormatError,
    SchemeMismatch,
    ShapeMismatch,
    UndefinedChange,
    UnmappedCode,
)

# Eight aggregated biomes used for valuation.
DEFAULT_BIOMES = (
    "forest land",
    "cropland",
    "urban built-up",
    "grassland",
    "fallow land",
    "water bodies",
    "mangrove",
    "wetland",
)

BINARY_MAGIC = b"LULC"
_BINARY_HEADER = struct.Struct("<4sIIi")


@dataclass(frozen=True)
class LulcGrid:
    """Immutable categorical raster.

    ``cells`` is a ``(rows, cols)`` integer array. ``biomes`` is set once the
    grid has been reclassified, and names the class held by each index.
    """

    cells: np.ndarray
    cell_area_ha: float
    nodata_code: int = -9999
    epoch_label: str = ""
    biomes: tuple[str, ...] | None = None

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.int64)
        if cells.ndim != 2:
            raise ShapeMismatch(f"cells must be 2-D, got shape {cells.shape}")
        if not self.cell_area_ha > 0:
            raise ValueError(f"cell_area_ha must be positive, got {self.cell_area_ha}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "cell_area_ha", float(self.cell_area_ha))
        object.__setattr__(self, "nodata_code", int(self.nodata_code))
        if self.biomes is not None:
            biomes = tuple(self.biomes)
            object.__setattr__(self, "biomes", biomes)
            valid = self.valid_mask
            bad = valid & ((cells < 0) | (cells >= len(biomes)))
            if bad.any():
                r, c = np.argwhere(bad)[0]
                raise UnmappedCode(int(cells[r, c]), int(r), int(c))

    @property
    def rows(self) -> int:
        return self.cells.shape[0]

    @property
    def cols(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def valid_mask(self) -> np.ndarray:
        return self.cells != self.nodata_code

    def with_label(self, epoch_label: str) -> "LulcGrid":
        return LulcGrid(self.cells, self.cell_area_ha, self.nodata_code, epoch_label, self.biomes)


@dataclass(frozen=True)
class ClassScheme:
    """Mapping from source land-cover codes onto an ordered biome list."""

    source_classes: tuple[tuple[int, str], ...]
    biomes: tuple[str, ...]
    mapping: Mapping[int, int]

    def __post_init__(self):
        object.__setattr__(self, "source_classes", tuple((int(c), str(n)) for c, n in self.source_classes))
        object.__setattr__(self, "biomes", tuple(self.biomes))
        object.__setattr__(self, "mapping", {int(k): int(v) for k, v in self.mapping.items()})
        for code, _ in self.source_classes:
            if code not in self.mapping:
                raise ValueError(f"source class {code} has no biome mapping")
        for code, idx in self.mapping.items():
            if not 0 <= idx < len(self.biomes):
                raise ValueError(f"code {code} maps to biome index {idx} outside 0..{len(self.biomes) - 1}")

    @classmethod
    def from_pairs(cls, rows: Sequence[tuple[int, str, str]], biomes: Sequence[str] | None = None) -> "ClassScheme":
        """Build a scheme from ``(source_code, source_name, biome_name)`` rows.

        Biome order follows ``biomes`` when given, otherwise first appearance.
        """
        if biomes is None:
            order: list[str] = []
            for _, _, b in rows:
                if b not in order:
                    order.append(b)
            biomes = order
        biomes = tuple(biomes)
        index = {b: i for i, b in enumerate(biomes)}
        mapping = {}
        for code, _, b in rows:
            if b not in index:
                raise ValueError(f"biome {b!r} for code {code} is not in the biome list")
            mapping[int(code)] = index[b]
        return cls(tuple((c, n) for c, n, _ in rows), biomes, mapping)

    @classmethod
    def identity(cls, biomes: Sequence[str]) -> "ClassScheme":
        biomes = tuple(biomes)
        return cls(tuple(enumerate(biomes)), biomes, {i: i for i in range(len(biomes))})


@dataclass(frozen=True)
class AreaTable:
    biomes: tuple[str, ...]
    area_ha: np.ndarray
    epoch_label: str = ""
    # exact integer cell counts when the table came from a grid
    cell_counts: np.ndarray | None = field(default=None, compare=False)
    cell_area_ha: float | None = field(default=None, compare=False)

    def __post_init__(self):
        area = np.array(self.area_ha, dtype=float)
        if area.shape != (len(self.biomes),):
            raise ShapeMismatch(f"{len(self.biomes)} biomes but {area.shape} areas")
        if (area < 0).any():
            raise ValueError("areas must be nonnegative")
        area.setflags(write=False)
        object.__setattr__(self, "biomes", tuple(self.biomes))
        object.__setattr__(self, "area_ha", area)

    @property
    def total(self) -> float:
        if self.cell_counts is not None and self.cell_area_ha is not None:
            return float(int(self.cell_counts.sum()) * self.cell_area_ha)
        return float(self.area_ha.sum())

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.biomes, self.area_ha.tolist()))

    def scaled(self, factor: float) -> "AreaTable":
        return AreaTable(self.biomes, self.area_ha * factor, self.epoch_label)


@dataclass(frozen=True)
class TransitionMatrix:
    """K x K conversion areas; row = start biome, column = end biome."""

    biomes: tuple[str, ...]
    counts: np.ndarray
    cell_area_ha: float
    epoch_pair: tuple[str, str] = ("", "")

    @property
    def area_ha(self) -> np.ndarray:
        return self.counts * self.cell_area_ha

    def start_areas(self) -> np.ndarray:
        return self.counts.sum(axis=1) * self.cell_area_ha

    def end_areas(self) -> np.ndarray:
        return self.counts.sum(axis=0) * self.cell_area_ha


def reclassify(grid: LulcGrid, scheme: ClassScheme) -> LulcGrid:
    """Replace every source code with its biome index.

    The nodata code is kept unless it collides with a biome index, in which
    case the output uses -9999. Placement of nodata cells never changes.
    """
    k = len(scheme.biomes)
    nodata = grid.nodata_code
    if 0 <= nodata < k:
        nodata = -9999
    valid = grid.valid_mask
    codes = np.unique(grid.cells[valid])
    missing = [int(c) for c in codes if int(c) not in scheme.mapping]
    if missing:
        first = np.argwhere(valid & np.isin(grid.cells, missing))[0]
        r, c = int(first[0]), int(first[1])
        raise UnmappedCode(int(grid.cells[r, c]), r, c)
    out = np.full(grid.shape, nodata, dtype=np.int64)
    for code in codes:
        out[valid & (grid.cells == code)] = scheme.mapping[int(code)]
    return LulcGrid(out, grid.cell_area_ha, nodata, grid.epoch_label, scheme.biomes)


def _require_biomes(grid: LulcGrid) -> tuple[str, ...]:
    if grid.biomes is None:
        raise SchemeMismatch("grid has not been reclassified onto a biome list")
    return grid.biomes


def class_counts(grid: LulcGrid) -> np.ndarray:
    biomes = _require_biomes(grid)
    return np.bincount(grid.cells[grid.valid_mask], minlength=len(biomes)).astype(np.int64)


def class_areas(grid: LulcGrid) -> AreaTable:
    """Area in hectares of each biome; nodata cells are excluded."""
    counts = class_counts(grid)
    return AreaTable(_require_biomes(grid), counts * grid.cell_area_ha, grid.epoch_label, counts, grid.cell_area_ha)


def lulc_change(start: AreaTable, end: AreaTable, *, strict: bool = True) -> dict[str, float]:
    """Percent change of each biome's area between two epochs.

    A biome absent at the start but present at the end has no defined
    percentage: ``strict`` raises :class:`UndefinedChange`, otherwise the
    value is NaN. A biome absent in both epochs reports 0.
    """
    if start.biomes != end.biomes:
        raise SchemeMismatch("area tables cover different biome lists")
    out = {}
    for biome, a0, a1 in zip(start.biomes, start.area_ha, end.area_ha):
        if a0 == 0:
            if a1 == 0:
                out[biome] = 0.0
                continue
            if strict:
                raise UndefinedChange(biome)
            out[biome] = float("nan")
            continue
        out[biome] = float((a1 - a0) / a0 * 100.0)
    return out


def encode_pair(start_idx, end_idx, k: int):
    return start_idx * k + end_idx


def decode_pair(code, k: int):
    return code // k, code % k


def transition_matrix(start: LulcGrid, end: LulcGrid) -> TransitionMatrix:
    """Cross-tabulate two reclassified epochs by pair coding each cell.

    Cells that are nodata in either epoch are skipped so both marginals are
    computed over the same set of cells.
    """
    if start.shape != end.shape:
        raise ShapeMismatch(f"grid shapes differ: {start.shape} vs {end.shape}")
    if start.cell_area_ha != end.cell_area_ha:
        raise ShapeMismatch(f"cell areas differ: {start.cell_area_ha} vs {end.cell_area_ha}")
    biomes = _require_biomes(start)
    if _require_biomes(end) != biomes:
        raise SchemeMismatch("start and end grids use different biome lists")
    k = len(biomes)
    both = start.valid_mask & end.valid_mask
    codes = encode_pair(start.cells[both], end.cells[both], k)
    counts = np.bincount(codes, minlength=k * k).reshape(k, k).astype(np.int64)
    return TransitionMatrix(biomes, counts, start.cell_area_ha, (start.epoch_label, end.epoch_label))


# ---------------------------------------------------------------------------
# file formats


def read_esri_ascii(path, cell_area_ha: float, epoch_label: str = "") -> LulcGrid:
    """Read an ESRI ASCII grid of integer class codes.

    The header's ``cellsize`` is in projection units and is not used for
    area; ``cell_area_ha`` has to be supplied by the caller.
    """
    path = Path(path)
    with open(path) as f:
        lines = f.read().split("\n")
    header = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0].lower()
        if key[0].isalpha():
            if len(parts) != 2:
                raise RasterFormatError(f"{path}:{i + 1}: malformed header line {lines[i]!r}")
            header[key] = parts[1]
            i += 1
        else:
            break
    for key in ("ncols", "nrows"):
        if key not in header:
            raise RasterFormatError(f"{path}: header is missing {key}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    nodata = int(float(header.get("nodata_value", -9999)))
    values = " ".join(lines[i:]).split()
    if len(values) != nrows * ncols:
        raise RasterFormatError(f"{path}: expected {nrows * ncols} values, found {len(values)}")
    try:
        cells = np.array([int(v) for v in values], dtype=np.int64).reshape(nrows, ncols)
    except ValueError as exc:
        raise RasterFormatError(f"{path}: non-integer cell value ({exc})") from None
    return LulcGrid(cells, cell_area_ha, nodata, epoch_label)


def write_esri_ascii(path, grid: LulcGrid, *, xllcorner=0.0, yllcorner=0.0, cellsize=None):
    if cellsize is None:
        cellsize = (grid.cell_area_ha * 10_000.0) ** 0.5
    with open(path, "w") as f:
        f.write(f"ncols {grid.cols}\nnrows {grid.rows}\n")
        f.write(f"xllcorner {xllcorner}\nyllcorner {yllcorner}\n")
        f.write(f"cellsize {cellsize:g}\nNODATA_value {grid.nodata_code}\n")
        for row in grid.cells:
            f.write(" ".join(str(v) for v in row) + "\n")


def read_binary(path, cell_area_ha: float, epoch_label: str = "") -> LulcGrid:
    """Read the flat binary layout: 16-byte little-endian header
    (magic, u32 rows, u32 cols, i32 nodata) then row-major i32 codes."""
    raw = Path(path).read_bytes()
    if len(raw) < _BINARY_HEADER.size:
        raise RasterFormatError(f"{path}: truncated header")
    magic, rows, cols, nodata = _BINARY_HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise RasterFormatError(f"{path}: bad magic {magic!r}")
    body = raw[_BINARY_HEADER.size:]
    if len(body) != rows * cols * 4:
        raise RasterFormatError(f"{path}: expected {rows * cols} cells, found {len(body) // 4}")
    cells = np.frombuffer(body, dtype="<i4").reshape(rows, cols)
    return LulcGrid(cells, cell_area_ha, nodata, epoch_label)


def write_binary(path, grid: LulcGrid):
    with open(path, "wb") as f:
        f.write(_BINARY_HEADER.pack(BINARY_MAGIC, grid.rows, grid.cols, grid.nodata_code))
        f.write(grid.cells.astype("<i4").tobytes())


def read_raster(path, cell_area_ha: float, epoch_label: str = "") -> LulcGrid:
    """Read either supported raster format, sniffing the binary magic."""
    with open(path, "rb") as f:
        head = f.read(4)
    if head == BINARY_MAGIC:
        return read_binary(path, cell_area_ha, epoch_label)
    return read_esri_ascii(path, cell_area_ha, epoch_label)


def read_class_scheme(path, biomes: Sequence[str] | None = None) -> ClassScheme:
    """Load a ``source_code,source_name,biome_name`` CSV."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(line for line in f if not line.startswith("#"))
        required = {"source_code", "source_name", "biome_name"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"{path}: class scheme needs columns {sorted(required)}")
        for rec in reader:
            rows.append((int(rec["source_code"]), rec["source_name"].strip(), rec["biome_name"].strip()))
    return ClassScheme.from_pairs(rows, biomes)
