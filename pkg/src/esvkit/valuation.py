"""Ecosystem service valuation by benefit transfer.

Unit values (US$ per ha per year) for each biome x service pair are held in a
:class:`CoefficientTable`. Tables either come from published schemes, loaded
from CSV, or are derived from a cropland food-production anchor and a sheet
of dimensionless equivalent factors.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyInput,
    MixedEpochs,
    NegativeFactor,
    NonpositivePeriod,
    ZeroBaseline,
)
from .raster import AreaTable

# Nine services grouped by category.
SERVICE_GROUPS = {
    "food production": "provisioning",
    "raw material production": "provisioning",
    "gas regulation": "regulating",
    "climate regulation": "regulating",
    "water regulation": "regulating",
    "waste treatment": "regulating",
    "soil formation and retention": "supporting",
    "biodiversity maintenance": "supporting",
    "recreation culture and aesthetic": "cultural",
}
DEFAULT_SERVICES = tuple(SERVICE_GROUPS)

# the cropland food-production service is valued at 1/7 of actual output
FOOD_PRODUCTION_FRACTION = 7.0

UNIT = "US$ yr-1"


@dataclass(frozen=True)
class ServiceTaxonomy:
    services: tuple[str, ...] = DEFAULT_SERVICES
    groups: dict = field(default_factory=lambda: dict(SERVICE_GROUPS))

    def __post_init__(self):
        allowed = {"provisioning", "regulating", "supporting", "cultural"}
        for s in self.services:
            if self.groups.get(s) not in allowed:
                raise ValueError(f"service {s!r} has no valid group")


@dataclass(frozen=True)
class CoefficientTable:
    scheme_name: str
    biomes: tuple[str, ...]
    services: tuple[str, ...]
    values: np.ndarray
    currency_year: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        object.__setattr__(self, "biomes", tuple(self.biomes))
        object.__setattr__(self, "services", tuple(self.services))
        if values.shape != (len(self.biomes), len(self.services)):
            raise DimensionMismatch(
                f"table {self.scheme_name!r} is {values.shape}, expected "
                f"{len(self.biomes)} biomes x {len(self.services)} services"
            )
        if (values < 0).any() or not np.isfinite(values).all():
            raise ValueError(f"table {self.scheme_name!r} has negative or non-finite unit values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def scaled(self, factor: float) -> "CoefficientTable":
        return CoefficientTable(self.scheme_name, self.biomes, self.services, self.values * factor, self.currency_year)


@dataclass(frozen=True)
class EsvReport:
    epoch_label: str
    scheme_name: str
    biomes: tuple[str, ...]
    services: tuple[str, ...]
    by_biome: np.ndarray
    by_service: np.ndarray
    total: float
    unit: str = UNIT

    def contribution_percent(self) -> np.ndarray:
        """Share of each biome in the total, in percent."""
        if self.total == 0:
            return np.zeros_like(self.by_biome)
        return self.by_biome / self.total * 100.0

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch_label,
            "scheme": self.scheme_name,
            "unit": self.unit,
            "by_biome": dict(zip(self.biomes, self.by_biome.tolist())),
            "by_service": dict(zip(self.services, self.by_service.tolist())),
            "contribution_percent": dict(zip(self.biomes, self.contribution_percent().tolist())),
            "total": self.total,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EsvReport":
        return cls(
            d["epoch"],
            d["scheme"],
            tuple(d["by_biome"]),
            tuple(d["by_service"]),
            np.array(list(d["by_biome"].values()), dtype=float),
            np.array(list(d["by_service"].values()), dtype=float),
            float(d["total"]),
            d.get("unit", UNIT),
        )


@dataclass(frozen=True)
class CropStats:
    region_label: str
    year: str
    total_crop_area: float
    crop_production: float
    crop_yield: float
    net_irrigated_area: float
    cropping_intensity: float
    crop_price: float

    def __post_init__(self):
        for name in ("total_crop_area", "crop_production", "crop_yield", "net_irrigated_area",
                     "cropping_intensity", "crop_price"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{self.region_label}/{self.year}: {name} must be a nonnegative number, got {v}")
        if self.total_crop_area > 0 and self.crop_production > 0 and self.crop_yield > 0:
            implied = self.crop_production / self.total_crop_area
            if abs(implied - self.crop_yield) / self.crop_yield > 0.10:
                warnings.warn(
                    f"{self.region_label}/{self.year}: crop yield {self.crop_yield:g} differs from "
                    f"production/area {implied:g} by more than 10%",
                    stacklevel=2,
                )

    def factors(self) -> dict[str, float]:
        return {
            "tca": self.total_crop_area,
            "cp": self.crop_production,
            "cy": self.crop_yield,
            "nia": self.net_irrigated_area,
            "ci": self.cropping_intensity,
        }


def cropland_base_value(crop_yield: float, price: float) -> float:
    """Unit value of cropland food production, US$/ha/yr.

    Taken as one seventh of the market value of the actual harvest.
    """
    if crop_yield < 0 or price < 0:
        raise ValueError("yield and price must be nonnegative")
    return crop_yield * price / FOOD_PRODUCTION_FRACTION


def expand_equivalents(
    base: float,
    factors,
    biomes: Sequence[str],
    services: Sequence[str],
    scheme_name: str = "equivalent-factor",
    currency_year: str = "",
) -> CoefficientTable:
    """Scale a sheet of equivalent factors by the cropland anchor value."""
    factors = np.asarray(factors, dtype=float)
    if (factors < 0).any():
        k, f = np.argwhere(factors < 0)[0]
        raise NegativeFactor(f"factor for ({biomes[k]!r}, {services[f]!r}) is negative: {factors[k, f]}")
    return CoefficientTable(scheme_name, biomes, services, base * factors, currency_year)


def _check_aligned(areas: AreaTable, table: CoefficientTable):
    if areas.biomes != table.biomes:
        raise DimensionMismatch(
            f"area biomes {list(areas.biomes)} do not match table {table.scheme_name!r} biomes {list(table.biomes)}"
        )


def esv_by_biome(areas: AreaTable, table: CoefficientTable) -> np.ndarray:
    """ESV of each biome: its area times the sum of its unit values."""
    _check_aligned(areas, table)
    return areas.area_ha * table.values.sum(axis=1)


def esv_by_service(areas: AreaTable, table: CoefficientTable) -> np.ndarray:
    """ESV of each service summed over biomes."""
    _check_aligned(areas, table)
    return areas.area_ha @ table.values


def esv_total(areas: AreaTable, table: CoefficientTable) -> EsvReport:
    by_biome = esv_by_biome(areas, table)
    by_service = esv_by_service(areas, table)
    # fsum keeps the two marginal totals consistent to rounding
    total = math.fsum((areas.area_ha[:, None] * table.values).ravel())
    return EsvReport(areas.epoch_label, table.scheme_name, table.biomes, table.services, by_biome, by_service, total)


def esv_change(esv_start: float, esv_end: float, years: float) -> float:
    """Annualised percent change of ESV between two dates."""
    if years <= 0:
        raise NonpositivePeriod(f"period must be positive, got {years}")
    if esv_start == 0:
        raise ZeroBaseline("starting ESV is 0; relative change is undefined")
    return (esv_end - esv_start) / esv_start * (1.0 / years) * 100.0


def mean_esv(reports: Sequence[EsvReport]) -> EsvReport:
    """Entrywise arithmetic mean over schemes for a single epoch."""
    reports = list(reports)
    if not reports:
        raise EmptyInput("no reports to average")
    first = reports[0]
    for r in reports[1:]:
        if r.epoch_label != first.epoch_label:
            raise MixedEpochs(f"cannot average epochs {first.epoch_label!r} and {r.epoch_label!r}")
        if r.biomes != first.biomes or r.services != first.services:
            raise DimensionMismatch("reports cover different biome or service lists")
    n = len(reports)
    # fsum is correctly rounded, so the mean does not depend on report order
    by_biome = np.array([math.fsum(col) / n for col in zip(*(r.by_biome for r in reports))])
    by_service = np.array([math.fsum(col) / n for col in zip(*(r.by_service for r in reports))])
    total = math.fsum(r.total for r in reports) / n
    return EsvReport(first.epoch_label, "mean", first.biomes, first.services, by_biome, by_service, total)


# ---------------------------------------------------------------------------
# file formats


def _read_matrix_csv(path):
    meta = {}
    with open(path, newline="") as f:
        lines = []
        for line in f:
            if line.startswith("#"):
                for item in line[1:].split(","):
                    if "=" in item:
                        k, v = item.split("=", 1)
                        meta[k.strip()] = v.strip()
            elif line.strip():
                lines.append(line)
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: empty table")
    services = tuple(s.strip() for s in rows[0][1:])
    biomes, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(services) + 1:
            raise ValueError(f"{path}: row {lineno} has {len(row) - 1} values, expected {len(services)}")
        biomes.append(row[0].strip())
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}: row {lineno}: {exc}") from None
    return meta, tuple(biomes), services, np.array(values, dtype=float).reshape(len(biomes), len(services))


def _reorder(path, biomes, services, values, want_biomes, want_services):
    if want_biomes is None and want_services is None:
        return biomes, services, values
    want_biomes = tuple(want_biomes) if want_biomes is not None else biomes
    want_services = tuple(want_services) if want_services is not None else services
    if set(want_biomes) != set(biomes) or set(want_services) != set(services):
        raise DimensionMismatch(f"{path}: table biomes/services do not match the active lists")
    bi = [biomes.index(b) for b in want_biomes]
    si = [services.index(s) for s in want_services]
    return want_biomes, want_services, values[np.ix_(bi, si)]


def read_coefficient_table(path, biomes=None, services=None) -> CoefficientTable:
    """Load a unit-value table; rows are biomes, columns services.

    A leading ``# scheme=<name>`` line names the scheme (defaults to the
    file stem). When ``biomes``/``services`` are given, rows and columns are
    reordered to match them.
    """
    meta, b, s, v = _read_matrix_csv(path)
    b, s, v = _reorder(path, b, s, v, biomes, services)
    return CoefficientTable(meta.get("scheme", Path(path).stem), b, s, v, meta.get("currency_year", ""))


def read_equivalent_factors(path, biomes=None, services=None):
    """Load a factor sheet. Returns ``(biomes, services, factors)``."""
    _, b, s, v = _read_matrix_csv(path)
    return _reorder(path, b, s, v, biomes, services)


def write_coefficient_table(path, table: CoefficientTable):
    with open(path, "w", newline="") as f:
        meta = f"# scheme={table.scheme_name}"
        if table.currency_year:
            meta += f",currency_year={table.currency_year}"
        f.write(meta + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["biome", *table.services])
        for b, row in zip(table.biomes, table.values):
            w.writerow([b, *(repr(float(x)) for x in row)])


CROP_STATS_COLUMNS = ("region", "year", "tca_ha", "cp_kg", "cy_kg_per_ha", "nia_ha", "ci", "price_usd_per_kg")


def read_crop_stats(path) -> list[CropStats]:
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(line for line in f if not line.startswith("#"))
        missing = set(CROP_STATS_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                out.append(
                    CropStats(
                        rec["region"].strip(),
                        rec["year"].strip(),
                        float(rec["tca_ha"]),
                        float(rec["cp_kg"]),
                        float(rec["cy_kg_per_ha"]),
                        float(rec["nia_ha"]),
                        float(rec["ci"]),
                        float(rec["price_usd_per_kg"]),
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return out
