"""Land-use change intensity and the elasticity of ESV to land change."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import NonpositivePeriod, SchemeMismatch, ZeroBaseline, ZeroLci, ZeroTotalArea
from .raster import AreaTable
from .valuation import EsvReport


@dataclass
class ElasticityResult:
    epoch_pair: tuple[str, str]
    lci_percent: float
    per_biome_ces: dict[str, float | None]
    total_ces: float | None
    # biome -> reason, for biomes whose elasticity is undefined
    undefined: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "epoch_pair": list(self.epoch_pair),
            "lci_percent": self.lci_percent,
            "total_ces": self.total_ces,
            "per_biome_ces": dict(self.per_biome_ces),
            "undefined": dict(self.undefined),
        }


def lci(start: AreaTable, end: AreaTable, years: float) -> float:
    """Land-use change intensity in percent per year.

    Absolute area differences summed over biomes, divided by the total
    starting area and annualised.
    """
    if start.biomes != end.biomes:
        raise SchemeMismatch("area tables cover different biome lists")
    if years <= 0:
        raise NonpositivePeriod(f"period must be positive, got {years}")
    total = start.total
    if total <= 0:
        raise ZeroTotalArea("total starting area is 0")
    changed = math.fsum(abs(b - a) for a, b in zip(start.area_ha, end.area_ha))
    return changed / total * (1.0 / years) * 100.0


def elasticity(esv_start: float, esv_end: float, lci_percent: float) -> float:
    """Percent change of ESV per percent of land-use change intensity."""
    if esv_start == 0:
        raise ZeroBaseline("starting ESV is 0; relative change is undefined")
    if lci_percent == 0:
        raise ZeroLci("land-use change intensity is 0; elasticity is undefined")
    return (esv_end - esv_start) / esv_start * 100.0 / lci_percent


def elasticity_by_biome(
    start_areas: AreaTable,
    end_areas: AreaTable,
    start_esv: EsvReport,
    end_esv: EsvReport,
    years: float,
) -> ElasticityResult:
    """Elasticity of each biome's ESV against the landscape-wide LCI.

    Raises :class:`ZeroLci` when nothing changed. A biome with zero starting
    ESV gets ``None`` and a reason in ``undefined`` rather than an error.
    """
    if start_esv.biomes != start_areas.biomes or end_esv.biomes != start_areas.biomes:
        raise SchemeMismatch("ESV reports and area tables cover different biome lists")
    intensity = lci(start_areas, end_areas, years)
    if intensity == 0:
        raise ZeroLci("land-use change intensity is 0; every elasticity is undefined")
    per_biome: dict[str, float | None] = {}
    undefined = {}
    for biome, v0, v1 in zip(start_esv.biomes, start_esv.by_biome, end_esv.by_biome):
        try:
            per_biome[biome] = elasticity(float(v0), float(v1), intensity)
        except ZeroBaseline:
            per_biome[biome] = None
            undefined[biome] = "ZeroBaseline"
    try:
        total = elasticity(start_esv.total, end_esv.total, intensity)
    except ZeroBaseline:
        total = None
        undefined["total"] = "ZeroBaseline"
    return ElasticityResult((start_areas.epoch_label, end_areas.epoch_label), intensity, per_biome, total, undefined)
