"""Deterministic synthetic inputs for demos and end-to-end tests.

None of these numbers are real observations. The rasters, unit-value
tables and regional statistics are generated from a seed so that every
pipeline stage has something realistic-looking to chew on.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .raster import DEFAULT_BIOMES, LulcGrid, write_binary, write_esri_ascii
from .valuation import (
    DEFAULT_SERVICES,
    CoefficientTable,
    cropland_base_value,
    expand_equivalents,
    write_coefficient_table,
)

SOURCE_CLASSES = (
    (1, "deciduous broadleaf forest", "forest land"),
    (2, "evergreen broadleaf forest", "forest land"),
    (3, "deciduous needleleaf forest", "forest land"),
    (4, "evergreen needleleaf forest", "forest land"),
    (5, "mixed forest", "forest land"),
    (6, "shrubland", "grassland"),
    (7, "grassland", "grassland"),
    (8, "cropland", "cropland"),
    (9, "plantation", "cropland"),
    (10, "aquaculture", "cropland"),
    (11, "fallow land", "fallow land"),
    (12, "barren land", "fallow land"),
    (13, "built-up land", "urban built-up"),
    (14, "water bodies", "water bodies"),
    (15, "snow and ice", "water bodies"),
    (16, "mangrove", "mangrove"),
    (17, "wetland", "wetland"),
)

EPOCHS = ("1985", "1995", "2005")
NODATA = -9999
# used as the cropland anchor of the equivalent-factor table
NATIONAL_YIELD_KG_HA = 1495.21
NATIONAL_PRICE_USD_KG = 0.266

# rough per-biome level of unit values, US$/ha/yr, for the synthetic tables
_BIOME_LEVEL = {
    "forest land": 900.0,
    "cropland": 400.0,
    "urban built-up": 5.0,
    "grassland": 250.0,
    "fallow land": 40.0,
    "water bodies": 1200.0,
    "mangrove": 1800.0,
    "wetland": 2500.0,
}


def _codes_for(biome: str) -> list[int]:
    return [c for c, _, b in SOURCE_CLASSES if b == biome]


def make_rasters(rows: int = 40, cols: int = 50, seed: int = 7) -> list[np.ndarray]:
    """Three epochs of source-class codes with scripted conversions.

    Forest and fallow land lose ground to cropland, cropland near settlements
    turns into built-up land and some grassland regrows as forest.
    """
    rng = np.random.default_rng(seed)
    n_seeds = 70
    pts = np.column_stack([rng.uniform(0, rows, n_seeds), rng.uniform(0, cols, n_seeds)])
    weights = np.array([0.30, 0.30, 0.04, 0.12, 0.10, 0.07, 0.03, 0.04])
    seed_biome = rng.choice(len(DEFAULT_BIOMES), size=n_seeds, p=weights / weights.sum())
    seed_code = np.array([rng.choice(_codes_for(DEFAULT_BIOMES[b])) for b in seed_biome])
    rr, cc = np.mgrid[0:rows, 0:cols]
    d2 = (rr[..., None] - pts[:, 0]) ** 2 + (cc[..., None] - pts[:, 1]) ** 2
    base = seed_code[np.argmin(d2, axis=-1)]
    # scattered single-cell noise
    flip = rng.random(base.shape) < 0.05
    base[flip] = rng.choice([c for c, _, _ in SOURCE_CLASSES], size=int(flip.sum()))
    base[0, :3] = NODATA
    base[-1, -4:] = NODATA

    def convert(grid, from_codes, to_code, frac):
        out = grid.copy()
        mask = np.isin(out, from_codes) & (rng.random(out.shape) < frac)
        out[mask] = to_code
        return out

    forest = _codes_for("forest land")
    e1 = convert(base, forest, 8, 0.10)
    e1 = convert(e1, [11, 12], 8, 0.15)
    e1 = convert(e1, [8], 11, 0.03)
    e1 = convert(e1, [7], 1, 0.05)
    e1 = convert(e1, [16], 14, 0.08)
    e2 = convert(e1, forest, 8, 0.06)
    e2 = convert(e2, [11, 12], 9, 0.25)
    e2 = convert(e2, [8], 13, 0.04)
    e2 = convert(e2, [6, 7], 2, 0.05)
    e2 = convert(e2, [14], 17, 0.05)
    return [base, e1, e2]


def make_coefficient_tables(seed: int = 11):
    """Four synthetic unit-value schemes plus one built from equivalent factors."""
    rng = np.random.default_rng(seed)
    biomes, services = DEFAULT_BIOMES, DEFAULT_SERVICES
    level = np.array([_BIOME_LEVEL[b] for b in biomes])
    tables = []
    for name in ("synthetic-a", "synthetic-b", "synthetic-c", "synthetic-d"):
        shares = rng.dirichlet(np.ones(len(services)), size=len(biomes))
        spread = rng.uniform(0.6, 1.6, size=(len(biomes), 1))
        values = np.round(level[:, None] * spread * shares * len(services) / 3.0, 2)
        tables.append(CoefficientTable(name, biomes, services, values, "2005"))

    factors = np.round(rng.uniform(0.0, 3.0, size=(len(biomes), len(services))) * (level[:, None] / 400.0), 2)
    factors[biomes.index("cropland"), services.index("food production")] = 1.0
    factors[biomes.index("urban built-up")] = 0.0
    base = cropland_base_value(NATIONAL_YIELD_KG_HA, NATIONAL_PRICE_USD_KG)
    tables.append(expand_equivalents(base, factors, biomes, services, "equivalent-factor", "2005"))
    return tables, factors


def make_driver_data(n_regions: int = 20, seed: int = 23, tca_r2: float = 0.85):
    """Regional crop statistics and ESVs with a planted total-crop-area effect.

    ESV is linear in TCA plus a residual that is exactly orthogonal (in
    sample) to the intercept and all five factors, scaled so that the
    TCA-only regression has R2 equal to ``tca_r2``. Adding any other factor
    to TCA therefore explains nothing further.
    """
    rng = np.random.default_rng(seed)
    regions = [f"R{i + 1:02d}" for i in range(n_regions)]
    side = int(np.ceil(np.sqrt(n_regions)))
    coords = np.array([[(i % side) * 150.0 + rng.uniform(-30, 30), (i // side) * 150.0 + rng.uniform(-30, 30)]
                       for i in range(n_regions)])
    years = [int(e) for e in EPOCHS]
    recs = []
    tca0 = rng.uniform(4e5, 6e6, n_regions)
    for k, year in enumerate(years):
        tca = tca0 * (1.0 + 0.04 * k) * rng.uniform(0.95, 1.05, n_regions)
        cy = rng.uniform(900, 2600, n_regions) * (1.0 + 0.08 * k)
        cp = tca * cy * rng.uniform(0.97, 1.03, n_regions)
        nia = tca * rng.uniform(0.2, 0.6, n_regions)
        ci = rng.uniform(1.1, 1.5, n_regions)
        for i, region in enumerate(regions):
            recs.append([region, year, coords[i, 0], coords[i, 1], tca[i], cp[i], cy[i], nia[i], ci[i]])

    x = np.array([r[4:9] for r in recs])
    n = len(recs)
    signal = 2.0e9 + 150.0 * x[:, 0]
    basis = np.column_stack([np.ones(n), x])
    q, _ = np.linalg.qr(basis / np.linalg.norm(basis, axis=0))
    noise = rng.normal(size=n)
    noise -= q @ (q.T @ noise)
    ss_sig = float(((signal - signal.mean()) ** 2).sum())
    noise *= np.sqrt(ss_sig * (1.0 - tca_r2) / tca_r2 / float(noise @ noise))
    esv = signal + noise

    shares = rng.dirichlet(np.ones(len(DEFAULT_SERVICES)) * 4.0)
    service_cols = {}
    for j, svc in enumerate(DEFAULT_SERVICES):
        wobble = rng.normal(scale=0.05, size=n)
        service_cols[svc] = esv * shares[j] * (1.0 + wobble)
    return recs, esv, service_cols


def service_column(name: str) -> str:
    return "esv_" + name.replace(" ", "_")


def write_demo(out_dir, *, binary_last: bool = True) -> Path:
    """Write the demo dataset and a ready-to-run ``config.json`` to ``out_dir``.

    The last epoch is written in the flat binary raster format so both
    readers get exercised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "class_scheme.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["source_code", "source_name", "biome_name"])
        w.writerows(SOURCE_CLASSES)

    raster_files = []
    for k, (label, cells) in enumerate(zip(EPOCHS, make_rasters())):
        grid = LulcGrid(cells, 1.0, NODATA, label)
        if binary_last and k == len(EPOCHS) - 1:
            name = f"lulc_{label}.lulc"
            write_binary(out / name, grid)
        else:
            name = f"lulc_{label}.asc"
            write_esri_ascii(out / name, grid)
        raster_files.append(name)

    tables, factors = make_coefficient_tables()
    scheme_files = []
    for t in tables:
        name = f"scheme_{t.scheme_name}.csv"
        write_coefficient_table(out / name, t)
        scheme_files.append(name)
    with open(out / "equivalent_factors.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["biome", *DEFAULT_SERVICES])
        for b, row in zip(DEFAULT_BIOMES, factors):
            w.writerow([b, *(repr(float(v)) for v in row)])

    recs, esv, services = make_driver_data()
    with open(out / "crop_stats.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["region", "year", "tca_ha", "cp_kg", "cy_kg_per_ha", "nia_ha", "ci", "price_usd_per_kg"])
        for r in recs:
            w.writerow([r[0], r[1], *(repr(float(v)) for v in r[4:9]), repr(NATIONAL_PRICE_USD_KG)])
    with open(out / "region_esv.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["region", "year", "x", "y", "esv", *(service_column(s) for s in DEFAULT_SERVICES)])
        for i, r in enumerate(recs):
            w.writerow([r[0], r[1], repr(float(r[2])), repr(float(r[3])), repr(float(esv[i])),
                        *(repr(float(services[s][i])) for s in DEFAULT_SERVICES)])

    config = {
        "epochs": [{"label": label, "raster": name, "year": int(label)} for label, name in zip(EPOCHS, raster_files)],
        "scheme_files": scheme_files,
        "class_scheme": "class_scheme.csv",
        "biomes": list(DEFAULT_BIOMES),
        "cell_area_ha": 1.0,
        "crop_stats": "crop_stats.csv",
        "region_esv": "region_esv.csv",
        "output_dir": "out",
        "seed": 42,
        "gwr": {"enabled": True, "kernel": "adaptive", "select": "aicc", "neighbors": None, "bandwidth": None},
        "mlr": {"enabled": True},
        "correlations": {"enabled": True},
        "ann": {"enabled": True, "hidden": 30, "epochs": 2000, "lr": 0.05, "importance": "garson"},
    }
    with open(out / "config.json", "w") as f:
        json.dump(config, f, indent=2)
        f.write("\n")
    return out / "config.json"
