"""End-to-end runs: valuation per epoch and scheme, change and elasticity
per epoch pair, and the driver analysis over regional statistics.

Every stage writes human-readable CSV plus a full-precision JSON record;
``summary.json`` lists stage outcomes and a SHA-256 manifest of the outputs.
:func:`verify` re-derives the emitted numbers from those records.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .elasticity import elasticity, elasticity_by_biome, lci
from .errors import ConfigError, EsvError, ZeroBaseline, ZeroLci
from .gwr import AdaptiveKernel, FixedKernel, gwr_fit, select_bandwidth
from .neural import MlpModel, SplitSpec, mlp_init, mlp_train, normalized_importance
from .raster import (
    AreaTable,
    class_areas,
    lulc_change,
    read_class_scheme,
    read_raster,
    reclassify,
    transition_matrix,
)
from .regression import (
    FACTORS,
    SampleTable,
    correlation_matrix,
    ols_fit,
    simple_regressions,
    stepwise_mlr,
)
from .tables import read_csv, write_area_table, write_csv, write_json, write_transition_matrix
from .valuation import (
    EsvReport,
    esv_change,
    esv_total,
    mean_esv,
    read_coefficient_table,
    read_crop_stats,
)

log = logging.getLogger(__name__)

REL_TOL = 1e-9


@dataclass
class EpochSpec:
    label: str
    raster: str
    year: float | None = None

    def __post_init__(self):
        self.label = str(self.label)
        if self.year is None:
            try:
                self.year = float(self.label)
            except ValueError:
                raise ConfigError(f"epoch {self.label!r} needs an explicit numeric year") from None


@dataclass
class GwrOptions:
    enabled: bool = True
    kernel: str = "adaptive"
    select: str = "aicc"
    neighbors: int | None = None
    bandwidth: float | None = None


@dataclass
class AnnOptions:
    enabled: bool = True
    hidden: int = 30
    epochs: int = 2000
    lr: float = 0.05
    importance: str = "garson"


@dataclass
class RunConfig:
    epochs: list[EpochSpec]
    scheme_files: list[str]
    class_scheme: str
    cell_area_ha: float
    output_dir: str = "out"
    biomes: list[str] | None = None
    crop_stats: str | None = None
    region_esv: str | None = None
    seed: int = 0
    gwr: GwrOptions = field(default_factory=GwrOptions)
    mlr: bool = True
    correlations: bool = True
    ann: AnnOptions = field(default_factory=AnnOptions)
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for key in ("epochs", "scheme_files", "class_scheme", "cell_area_ha"):
            if key not in d:
                raise ConfigError(f"config is missing {key!r}")
        d["epochs"] = [e if isinstance(e, EpochSpec) else EpochSpec(**e) for e in d["epochs"]]
        for key, opt_cls in (("gwr", GwrOptions), ("ann", AnnOptions)):
            v = d.get(key)
            if isinstance(v, bool):
                d[key] = opt_cls(enabled=v)
            elif isinstance(v, dict):
                d[key] = opt_cls(**v)
        for key in ("mlr", "correlations"):
            if isinstance(d.get(key), dict):
                d[key] = bool(d[key].get("enabled", True))
        return cls(**d, base_dir=Path(base_dir))

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def absolute(self) -> dict:
        """Config as a dict with every input path made absolute and no output dir."""
        d = self.to_dict()
        d.pop("output_dir")
        for ep in d["epochs"]:
            ep["raster"] = str(self.resolve(ep["raster"]).resolve())
        d["scheme_files"] = [str(self.resolve(p).resolve()) for p in d["scheme_files"]]
        for key in ("class_scheme", "crop_stats", "region_esv"):
            if d[key]:
                d[key] = str(self.resolve(d[key]).resolve())
        return d

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self):
        if not self.epochs:
            raise ConfigError("at least one epoch is required")
        if not self.scheme_files:
            raise ConfigError("at least one coefficient table (scheme_files) is required")
        if not self.cell_area_ha > 0:
            raise ConfigError(f"cell_area_ha must be positive, got {self.cell_area_ha}")
        labels = [e.label for e in self.epochs]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate epoch labels: {labels}")
        paths = [self.class_scheme, *self.scheme_files, *(e.raster for e in self.epochs)]
        paths += [p for p in (self.crop_stats, self.region_esv) if p]
        missing = [p for p in paths if not self.resolve(p).is_file()]
        if missing:
            raise ConfigError(f"missing input files: {missing}")
        if self.gwr.kernel not in ("fixed", "adaptive"):
            raise ConfigError(f"unknown GWR kernel {self.gwr.kernel!r}")
        if self.gwr.select not in ("aicc", "cv", "none"):
            raise ConfigError(f"unknown bandwidth selection {self.gwr.select!r}")
        if self.gwr.select == "none":
            need = "neighbors" if self.gwr.kernel == "adaptive" else "bandwidth"
            if getattr(self.gwr, need) is None:
                raise ConfigError(f"--select none with a {self.gwr.kernel} kernel needs --{need}")


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-." else "_" for c in str(text))


def epoch_pairs(labels: list[str]) -> list[tuple[int, int]]:
    """Consecutive epoch pairs, plus first-to-last when there are three or more."""
    pairs = [(i, i + 1) for i in range(len(labels) - 1)]
    if len(labels) > 2:
        pairs.append((0, len(labels) - 1))
    return pairs


# ---------------------------------------------------------------------------
# valuation


def load_inputs(config: RunConfig):
    scheme_path = config.resolve(config.class_scheme)
    scheme = read_class_scheme(scheme_path, config.biomes)
    grids = {}
    for ep in config.epochs:
        path = config.resolve(ep.raster)
        raw = read_raster(path, config.cell_area_ha, ep.label)
        try:
            grids[ep.label] = reclassify(raw, scheme)
        except EsvError as exc:
            raise ConfigError(f"{path}: {type(exc).__name__}: {exc}") from exc
    tables = []
    for p in config.scheme_files:
        try:
            tables.append(read_coefficient_table(config.resolve(p), scheme.biomes))
        except (ValueError, EsvError) as exc:
            raise ConfigError(f"{config.resolve(p)}: {exc}") from exc
    names = [t.scheme_name for t in tables]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate scheme names: {names}")
    services = tables[0].services
    for t in tables[1:]:
        if set(t.services) != set(services):
            raise ConfigError(f"scheme {t.scheme_name!r} lists different services")
    tables = [t if t.services == services else read_coefficient_table(config.resolve(p), scheme.biomes, services)
              for t, p in zip(tables, config.scheme_files)]
    return scheme, grids, tables


def _area_record(a: AreaTable) -> dict:
    return {
        "epoch": a.epoch_label,
        "biomes": list(a.biomes),
        "area_ha": a.area_ha.tolist(),
        "cell_counts": None if a.cell_counts is None else a.cell_counts.tolist(),
        "cell_area_ha": a.cell_area_ha,
    }


def _write_report(path, r: EsvReport):
    rows = [("biome", b, v, c) for b, v, c in zip(r.biomes, r.by_biome, r.contribution_percent())]
    rows += [("service", s, v, None) for s, v in zip(r.services, r.by_service)]
    rows.append(("total", "total", r.total, 100.0 if r.total else 0.0))
    write_csv(path, ["kind", "name", "esv_usd_per_yr", "contribution_percent"], rows)


def run_valuation(config: RunConfig, out: Path, inputs=None) -> dict:
    """ESV per (epoch, scheme) and the cross-scheme mean per epoch."""
    scheme, grids, tables = inputs or load_inputs(config)
    areas, reports, means = {}, {}, {}
    for ep in config.epochs:
        a = class_areas(grids[ep.label])
        areas[ep.label] = a
        write_area_table(out / "areas" / f"areas_{_slug(ep.label)}.csv", a)
        reports[ep.label] = {}
        for t in tables:
            r = esv_total(a, t)
            reports[ep.label][t.scheme_name] = r
            _write_report(out / "esv" / f"esv_{_slug(ep.label)}_{_slug(t.scheme_name)}.csv", r)
        m = mean_esv(list(reports[ep.label].values()))
        means[ep.label] = m
        _write_report(out / "esv" / f"esv_{_slug(ep.label)}_mean.csv", m)
    write_json(out / "valuation.json", {
        "epochs": [{"label": e.label, "year": e.year} for e in config.epochs],
        "schemes": [t.scheme_name for t in tables],
        "areas": [_area_record(areas[e.label]) for e in config.epochs],
        "reports": [reports[e.label][t.scheme_name].to_dict() for e in config.epochs for t in tables],
        "means": [means[e.label].to_dict() for e in config.epochs],
    })
    return {"grids": grids, "tables": tables, "areas": areas, "reports": reports, "means": means}


# ---------------------------------------------------------------------------
# change and elasticity


def _safe_change(v0, v1, years):
    try:
        return esv_change(v0, v1, years), "ok"
    except ZeroBaseline:
        return None, "ZeroBaseline"


def run_change_analysis(config: RunConfig, out: Path, valuation: dict) -> dict:
    """Area change, transitions, ESV change and elasticity for each epoch pair."""
    if len(config.epochs) < 2:
        raise ConfigError("change analysis needs at least two epochs")
    labels = [e.label for e in config.epochs]
    records = []
    for i, j in epoch_pairs(labels):
        a_lab, b_lab = labels[i], labels[j]
        years = config.epochs[j].year - config.epochs[i].year
        tag = f"{_slug(a_lab)}_{_slug(b_lab)}"
        a0, a1 = valuation["areas"][a_lab], valuation["areas"][b_lab]

        change = lulc_change(a0, a1, strict=False)
        write_csv(out / "change" / f"lulc_change_{tag}.csv", ["biome", "start_ha", "end_ha", "change_percent", "status"],
                  [(b, s, e, None if math.isnan(change[b]) else change[b],
                    "UndefinedChange" if math.isnan(change[b]) else "ok")
                   for b, s, e in zip(a0.biomes, a0.area_ha, a1.area_ha)])

        tm = transition_matrix(valuation["grids"][a_lab], valuation["grids"][b_lab])
        write_transition_matrix(out / "change" / f"transitions_{tag}.csv", tm)

        m0, m1 = valuation["means"][a_lab], valuation["means"][b_lab]
        esv_rows = []
        for scheme in [*valuation["reports"][a_lab], "mean"]:
            r0 = m0 if scheme == "mean" else valuation["reports"][a_lab][scheme]
            r1 = m1 if scheme == "mean" else valuation["reports"][b_lab][scheme]
            pct, status = _safe_change(r0.total, r1.total, years)
            esv_rows.append(("total", scheme, "total", r0.total, r1.total, r1.total - r0.total, pct, status))
        for b, v0, v1 in zip(m0.biomes, m0.by_biome, m1.by_biome):
            pct, status = _safe_change(v0, v1, years)
            esv_rows.append(("biome", "mean", b, v0, v1, v1 - v0, pct, status))
        for s, v0, v1 in zip(m0.services, m0.by_service, m1.by_service):
            pct, status = _safe_change(v0, v1, years)
            esv_rows.append(("service", "mean", s, v0, v1, v1 - v0, pct, status))
        write_csv(out / "change" / f"esv_change_{tag}.csv",
                  ["scope", "scheme", "name", "esv_start", "esv_end", "net_change", "change_percent_per_year", "status"],
                  esv_rows)

        try:
            el = elasticity_by_biome(a0, a1, m0, m1, years)
            el_status = "ok"
            el_dict = el.to_dict()
        except ZeroLci:
            el_status = "ZeroLci"
            el_dict = {"epoch_pair": [a_lab, b_lab], "lci_percent": 0.0, "total_ces": None,
                       "per_biome_ces": {b: None for b in a0.biomes}, "undefined": {"all": "ZeroLci"}}
        ces_rows = []
        for b in a0.biomes:
            v = el_dict["per_biome_ces"][b]
            ces_rows.append((b, v, "ok" if v is not None else el_dict["undefined"].get(b, el_status)))
        ces_rows.append(("total", el_dict["total_ces"], "ok" if el_dict["total_ces"] is not None else
                         el_dict["undefined"].get("total", el_status)))
        write_csv(out / "change" / f"elasticity_{tag}.csv", ["biome", "ces", "status"], ces_rows)
        el_summary = {"epoch_pair": [a_lab, b_lab], "lci_percent": el_dict["lci_percent"],
                      "total_ces": el_dict["total_ces"], "status": el_status}
        write_json(out / "change" / f"elasticity_{tag}.json", el_summary)

        records.append({
            "epoch_pair": [a_lab, b_lab],
            "years": years,
            "lulc_change_percent": change,
            "transition_counts": tm.counts.tolist(),
            "cell_area_ha": tm.cell_area_ha,
            "esv_change": [dict(zip(("scope", "scheme", "name", "esv_start", "esv_end", "net_change",
                                     "change_percent_per_year", "status"), r)) for r in esv_rows],
            "elasticity": {**el_dict, "status": el_status},
        })
    write_json(out / "change.json", {"biomes": list(valuation["tables"][0].biomes), "pairs": records})
    return {"pairs": records}


# ---------------------------------------------------------------------------
# driver analysis


def load_driver_samples(config: RunConfig) -> SampleTable:
    """Join crop statistics with regional ESVs on (region, year)."""
    if not config.crop_stats or not config.region_esv:
        raise ConfigError("driver analysis needs crop_stats and region_esv")
    stats = read_crop_stats(config.resolve(config.crop_stats))
    esv_rows = read_csv(config.resolve(config.region_esv))
    for col in ("region", "year", "x", "y", "esv"):
        if esv_rows and col not in esv_rows[0]:
            raise ConfigError(f"{config.region_esv}: missing column {col!r}")
    by_key = {(s.region_label, s.year): s for s in stats}
    esv_keys = {(r["region"].strip(), r["year"].strip()) for r in esv_rows}
    only_stats = sorted(set(by_key) - esv_keys)
    only_esv = sorted(esv_keys - set(by_key))
    if only_stats or only_esv:
        raise ConfigError(
            "crop statistics and regional ESVs are misaligned; "
            f"missing ESV for {sorted({k[0] for k in only_stats})}, "
            f"missing crop statistics for {sorted({k[0] for k in only_esv})}"
        )
    extra_cols = [c for c in esv_rows[0] if c not in ("region", "year", "x", "y", "esv")] if esv_rows else []
    ids, coords, factors, resp, groups = [], [], [], [], []
    for r in esv_rows:
        key = (r["region"].strip(), r["year"].strip())
        s = by_key[key]
        ids.append(f"{key[0]}@{key[1]}")
        coords.append((float(r["x"]), float(r["y"])))
        factors.append([s.factors()[f] for f in FACTORS])
        resp.append(float(r["esv"]))
        groups.append(key[1])
    extra = {c: np.array([float(r[c]) for r in esv_rows]) for c in extra_cols}
    return SampleTable(ids, np.array(coords), np.array(factors), FACTORS, np.array(resp), extra, groups)


def _kernel_for(opts: GwrOptions, coords, x, y):
    if opts.select == "none":
        if opts.kernel == "adaptive":
            return AdaptiveKernel(int(opts.neighbors))
        return FixedKernel(float(opts.bandwidth))
    return select_bandwidth(coords, x, y, opts.kernel, opts.select)


def _kernel_record(k) -> dict:
    if isinstance(k, AdaptiveKernel):
        return {"kind": "adaptive", "n_neighbors": k.n_neighbors}
    return {"kind": "fixed", "bandwidth": k.bandwidth}


def kernel_from_record(d: dict):
    return AdaptiveKernel(int(d["n_neighbors"])) if d["kind"] == "adaptive" else FixedKernel(float(d["bandwidth"]))


def write_correlation(out: Path, stem: str, cm):
    write_csv(out / f"{stem}_r.csv", ["variable", *cm.names], ([n, *row] for n, row in zip(cm.names, cm.r)))
    write_csv(out / f"{stem}_p.csv", ["variable", *cm.names], ([n, *row] for n, row in zip(cm.names, cm.p)))


def mlr_rows_for_csv(rows, factor_names):
    names = ("intercept", *factor_names)
    header = ["rank", "model_id", "predictors", "r2", "f", "p_f"]
    header += [f"coef_{n}" for n in names] + [f"t_{n}" for n in names] + [f"p_t_{n}" for n in names]
    header += ["signs", "status"]
    body = []
    for rank, row in enumerate(rows, start=1):
        signs = ";".join(f"{k}:{'+' if v > 0 else '-' if v < 0 else '0'}" for k, v in row.signs.items())
        body.append([rank, row.model_id, "+".join(row.predictors), row.r2, row.f_stat, row.p_f,
                     *(row.coef.get(n) for n in names), *(row.t.get(n) for n in names),
                     *(row.p_t.get(n) for n in names), signs, row.status])
    return header, body


def run_gwr_surfaces(samples: SampleTable, opts: GwrOptions, out: Path):
    """Univariate GWR of ESV on each factor, fitted separately per year."""
    results, failures, summary = [], [], []
    group_keys = sorted(set(samples.groups or ["all"]))
    for g in group_keys:
        sub = samples if samples.groups is None else samples.subset([x == g for x in samples.groups])
        for j, factor in enumerate(samples.factor_names):
            x = sub.factors[:, j]
            try:
                kernel = _kernel_for(opts, sub.coords, x, sub.response)
                model = gwr_fit(sub.coords, x, sub.response, kernel, [factor])
            except (EsvError, ValueError) as exc:
                failures.append(f"gwr[{g}/{factor}]: {type(exc).__name__}: {exc}")
                continue
            write_csv(out / "gwr" / f"gwr_{_slug(g)}_{factor}.csv",
                      ["id", "x", "y", "beta_intercept", f"beta_{factor}", "local_r2", "bandwidth"],
                      ([i, c[0], c[1], *b, r2, bw] for i, c, b, r2, bw in
                       zip(sub.ids, sub.coords, model.coefficients, model.local_r2, model.bandwidths)))
            summary.append((g, factor, _kernel_record(kernel)["kind"],
                            kernel.n_neighbors if isinstance(kernel, AdaptiveKernel) else kernel.bandwidth,
                            model.aicc, model.rss, float(model.local_r2.mean())))
            results.append({
                "group": g, "factor": factor, "ids": sub.ids, "kernel": _kernel_record(kernel),
                "coefficients": model.coefficients, "local_r2": model.local_r2, "bandwidths": model.bandwidths,
                "aicc": model.aicc, "rss": model.rss,
            })
    write_csv(out / "gwr" / "gwr_summary.csv",
              ["group", "factor", "kernel", "parameter", "aicc", "rss", "mean_local_r2"], summary)
    return results, failures


def run_driver_analysis(config: RunConfig, out: Path) -> tuple[dict, list[str]]:
    """Correlations, simple and multiple regressions, GWR and the MLP.

    Each analysis runs even if another fails; failures come back as
    messages.
    """
    samples = load_driver_samples(config)
    dout = out / "drivers"
    write_csv(dout / "samples.csv", ["id", "group", "x", "y", *samples.factor_names, "esv", *samples.extra],
              ([i, samples.groups[n], c[0], c[1], *f, e, *(samples.extra[k][n] for k in samples.extra)]
               for n, (i, c, f, e) in enumerate(zip(samples.ids, samples.coords, samples.factors, samples.response))))
    record: dict = {
        "samples": {"ids": samples.ids, "groups": samples.groups, "coords": samples.coords,
                    "factor_names": list(samples.factor_names), "factors": samples.factors,
                    "response": samples.response, "extra": samples.extra},
    }
    failures = []
    factors = samples.factor_dict()

    def attempt(name, fn):
        try:
            fn()
        except (EsvError, ValueError) as exc:
            failures.append(f"{name}: {type(exc).__name__}: {exc}")

    def correlations():
        cm = correlation_matrix({**factors, "esv": samples.response})
        write_correlation(dout, "correlation_factors_esv", cm)
        record["correlation_factors_esv"] = {"names": cm.names, "r": cm.r, "p": cm.p}
        if samples.extra:
            cm2 = correlation_matrix({**samples.extra, **factors})
            write_correlation(dout, "correlation_services_factors", cm2)
            record["correlation_services_factors"] = {"names": cm2.names, "r": cm2.r, "p": cm2.p}

    def simple():
        fits = simple_regressions(factors, {"esv": samples.response, **samples.extra})
        write_csv(dout / "simple_regressions.csv", ["factor", "response", "r2", "slope", "sign", "rmse", "status"],
                  ((s.factor, s.response, s.r2, s.slope, s.sign, s.rmse, s.status) for s in fits))
        record["simple_regressions"] = [s.__dict__ for s in fits]

    def mlr():
        rows = stepwise_mlr(factors, samples.response)
        header, body = mlr_rows_for_csv(rows, samples.factor_names)
        write_csv(dout / "mlr.csv", header, body)
        record["mlr"] = [r.__dict__ for r in rows]

    def gwr():
        results, fails = run_gwr_surfaces(samples, config.gwr, dout)
        record["gwr"] = results
        failures.extend(fails)

    def ann():
        opts = config.ann
        model = mlp_init([len(samples.factor_names), opts.hidden, 1], config.seed, samples.factor_names)
        res = mlp_train(model, samples.factors, samples.response, SplitSpec(seed=config.seed), opts.epochs, opts.lr)
        imp = normalized_importance(res.model, opts.importance)
        ranked = sorted(imp.items(), key=lambda kv: (-kv[1], kv[0]))
        write_csv(dout / "ann_importance.csv", ["factor", "importance_percent", "rank"],
                  ((k, v, n) for n, (k, v) in enumerate(ranked, start=1)))
        write_json(dout / "ann_model.json", res.model.to_dict())
        metrics = {"train_mse": res.train_mse, "val_mse": res.val_mse, "test_mse": res.test_mse,
                   "test_r2": res.test_r2, "best_epoch": res.best_epoch, "method": opts.importance,
                   "split": {"train": res.split[0], "val": res.split[1], "test": res.split[2]}}
        write_json(dout / "ann_metrics.json", metrics)
        record["ann"] = {"importance": imp, "method": opts.importance, "metrics": metrics}

    if config.correlations:
        attempt("correlations", correlations)
        attempt("simple_regressions", simple)
    if config.mlr:
        attempt("mlr", mlr)
    if config.gwr.enabled:
        attempt("gwr", gwr)
    if config.ann.enabled:
        attempt("ann", ann)
    write_json(out / "drivers.json", record)
    return record, failures


# ---------------------------------------------------------------------------
# whole run


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(config: RunConfig, out_dir=None) -> list[str]:
    """Run every stage the config enables; returns the list of failures."""
    config.validate()
    out = Path(out_dir) if out_dir is not None else config.resolve(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    failures: list[str] = []
    stages = {}

    try:
        valuation = run_valuation(config, out)
        stages["valuation"] = "ok"
    except (EsvError, ValueError, OSError) as exc:
        failures.append(f"valuation: {type(exc).__name__}: {exc}")
        stages["valuation"] = "failed"
        valuation = None

    if len(config.epochs) >= 2 and valuation is not None:
        try:
            run_change_analysis(config, out, valuation)
            stages["change"] = "ok"
        except (EsvError, ValueError) as exc:
            failures.append(f"change: {type(exc).__name__}: {exc}")
            stages["change"] = "failed"
    else:
        stages["change"] = "skipped"

    if config.crop_stats and config.region_esv:
        try:
            _, fails = run_driver_analysis(config, out)
            failures.extend(fails)
            stages["drivers"] = "ok" if not fails else "partial"
        except (EsvError, ValueError, OSError) as exc:
            failures.append(f"drivers: {type(exc).__name__}: {exc}")
            stages["drivers"] = "failed"
    else:
        stages["drivers"] = "skipped"

    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "summary.json")
    write_json(out / "summary.json", {
        "generated_by": f"esvkit {__version__}",
        "config": config.absolute(),
        "stages": stages,
        "failures": failures,
        "files": {p.relative_to(out).as_posix(): _sha256(p) for p in files},
    })
    return failures


# ---------------------------------------------------------------------------
# verification


def _close(a, b, tol=REL_TOL) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-300) or a == b


def _verify_valuation(config: RunConfig, val: dict, problems: list[str]):
    biomes = tuple(val["areas"][0]["biomes"])
    tables = {}
    for p in config.scheme_files:
        t = read_coefficient_table(config.resolve(p), biomes)
        tables[t.scheme_name] = t
    areas = {}
    for rec in val["areas"]:
        a = np.array(rec["area_ha"])
        if rec["cell_counts"] is not None:
            expect = np.array(rec["cell_counts"]) * rec["cell_area_ha"]
            if not np.array_equal(a, expect):
                problems.append(f"areas {rec['epoch']}: area_ha != cell_counts x cell_area_ha")
        areas[rec["epoch"]] = a
    by_epoch: dict[str, list[dict]] = {}
    for rep in val["reports"]:
        ep, scheme = rep["epoch"], rep["scheme"]
        by_epoch.setdefault(ep, []).append(rep)
        t = tables.get(scheme)
        if t is None:
            problems.append(f"report {ep}/{scheme}: scheme table not found in config")
            continue
        vals = t.values
        services = t.services
        a = areas[ep]
        for k, b in enumerate(biomes):
            expect = a[k] * math.fsum(vals[k])
            if not _close(rep["by_biome"][b], expect):
                problems.append(f"report {ep}/{scheme}: by_biome[{b}] {rep['by_biome'][b]!r} != {expect!r}")
        for f, s in enumerate(services):
            expect = math.fsum(a[k] * vals[k, f] for k in range(len(biomes)))
            if not _close(rep["by_service"][s], expect):
                problems.append(f"report {ep}/{scheme}: by_service[{s}] mismatch")
        total = math.fsum(a[k] * vals[k, f] for k in range(len(biomes)) for f in range(len(services)))
        if not _close(rep["total"], total):
            problems.append(f"report {ep}/{scheme}: total mismatch")
        for label, part in (("by_biome", rep["by_biome"]), ("by_service", rep["by_service"])):
            if not _close(math.fsum(part.values()), rep["total"]):
                problems.append(f"report {ep}/{scheme}: sum of {label} != total")
    for m in val["means"]:
        reps = by_epoch.get(m["epoch"], [])
        if not reps:
            problems.append(f"mean {m['epoch']}: no scheme reports")
            continue
        expect = math.fsum(r["total"] for r in reps) / len(reps)
        if not _close(m["total"], expect):
            problems.append(f"mean {m['epoch']}: total {m['total']!r} != {expect!r}")
        for b in m["by_biome"]:
            e = math.fsum(r["by_biome"][b] for r in reps) / len(reps)
            if not _close(m["by_biome"][b], e):
                problems.append(f"mean {m['epoch']}: by_biome[{b}] mismatch")
    return areas, {m["epoch"]: m for m in val["means"]}


def _verify_change(val: dict, chg: dict, areas: dict, means: dict, problems: list[str]):
    biomes = chg["biomes"]
    for rec in chg["pairs"]:
        a_lab, b_lab = rec["epoch_pair"]
        a0, a1 = areas[a_lab], areas[b_lab]
        counts = np.array(rec["transition_counts"])
        cell = rec["cell_area_ha"]
        tag = f"{a_lab}->{b_lab}"
        if (counts.sum(axis=1) * cell != a0).any() and not np.allclose(counts.sum(axis=1) * cell, a0, rtol=REL_TOL):
            problems.append(f"{tag}: transition row sums != start areas")
        if (counts.sum(axis=0) * cell != a1).any() and not np.allclose(counts.sum(axis=0) * cell, a1, rtol=REL_TOL):
            problems.append(f"{tag}: transition column sums != end areas")
        for k, b in enumerate(biomes):
            got = rec["lulc_change_percent"][b]
            if a0[k] == 0:
                expect = 0.0 if a1[k] == 0 else None
            else:
                expect = (a1[k] - a0[k]) / a0[k] * 100.0
            if not _close(got, expect):
                problems.append(f"{tag}: lulc change for {b} mismatch")
        years = rec["years"]
        m0, m1 = means[a_lab], means[b_lab]
        for row in rec["esv_change"]:
            if row["scope"] == "total" and row["scheme"] == "mean":
                v0, v1 = m0["total"], m1["total"]
            elif row["scope"] == "biome":
                v0, v1 = m0["by_biome"][row["name"]], m1["by_biome"][row["name"]]
            elif row["scope"] == "service":
                v0, v1 = m0["by_service"][row["name"]], m1["by_service"][row["name"]]
            else:
                v0, v1 = row["esv_start"], row["esv_end"]
            expect = None if v0 == 0 else (v1 - v0) / v0 / years * 100.0
            if not (_close(row["esv_start"], v0) and _close(row["esv_end"], v1)
                    and _close(row["change_percent_per_year"], expect)):
                problems.append(f"{tag}: esv change {row['scope']}/{row['name']} mismatch")
        el = rec["elasticity"]
        intensity = math.fsum(abs(y - x) for x, y in zip(a0, a1)) / math.fsum(a0) / years * 100.0
        if el["status"] == "ZeroLci":
            if intensity != 0:
                problems.append(f"{tag}: reported ZeroLci but LCI is {intensity}")
            continue
        if not _close(el["lci_percent"], intensity):
            problems.append(f"{tag}: LCI mismatch")
        for b in biomes:
            v0, v1 = m0["by_biome"][b], m1["by_biome"][b]
            expect = None if v0 == 0 else (v1 - v0) / v0 * 100.0 / intensity
            if not _close(el["per_biome_ces"][b], expect):
                problems.append(f"{tag}: elasticity for {b} mismatch")
        expect = (m1["total"] - m0["total"]) / m0["total"] * 100.0 / intensity
        if not _close(el["total_ces"], expect):
            problems.append(f"{tag}: total elasticity mismatch")


def _verify_drivers(out: Path, drv: dict, problems: list[str]):
    s = drv["samples"]
    names = s["factor_names"]
    x = np.array(s["factors"], dtype=float)
    y = np.array(s["response"], dtype=float)
    for row in drv.get("mlr", []):
        if row["status"] != "ok":
            continue
        cols = [names.index(p) for p in row["predictors"]]
        refit = ols_fit(x[:, cols], y, row["predictors"])
        if not (_close(row["r2"], refit.r2, 1e-8) and _close(row["f_stat"], refit.f_stat, 1e-8)):
            problems.append(f"mlr model {row['model_id']}: R2/F mismatch on refit")
    if "correlation_factors_esv" in drv:
        cm = drv["correlation_factors_esv"]
        cols = {**{n: x[:, j] for j, n in enumerate(names)}, "esv": y}
        for i, a in enumerate(cm["names"]):
            for j, b in enumerate(cm["names"]):
                u, v = cols[a] - cols[a].mean(), cols[b] - cols[b].mean()
                r = float(u @ v / math.sqrt((u @ u) * (v @ v)))
                if abs(cm["r"][i][j] - r) > 1e-9:
                    problems.append(f"correlation {a}/{b} mismatch")
    for g in drv.get("gwr", []):
        idx = [s["ids"].index(i) for i in g["ids"]]
        j = names.index(g["factor"])
        model = gwr_fit(np.array(s["coords"])[idx], x[idx, j], y[idx], kernel_from_record(g["kernel"]))
        if not np.allclose(model.coefficients, np.array(g["coefficients"]), rtol=1e-8, atol=0):
            problems.append(f"gwr {g['group']}/{g['factor']}: coefficients mismatch on refit")
        if not np.allclose(model.local_r2, np.array(g["local_r2"]), rtol=1e-8, atol=1e-12):
            problems.append(f"gwr {g['group']}/{g['factor']}: local R2 mismatch on refit")
    if "ann" in drv:
        model = MlpModel.from_dict(json.loads((out / "drivers" / "ann_model.json").read_text()))
        imp = normalized_importance(model, drv["ann"]["method"])
        for k, v in imp.items():
            if not _close(drv["ann"]["importance"][k], v):
                problems.append(f"ann importance for {k} mismatch")


def verify(out_dir, rerun: bool = False) -> list[str]:
    """Re-derive emitted numbers from a finished run; returns problems found.

    With ``rerun`` the pipeline is executed again into a scratch directory
    and the two output trees must match byte for byte.
    """
    out = Path(out_dir)
    problems: list[str] = []
    summary_path = out / "summary.json"
    if not summary_path.is_file():
        return [f"{summary_path} not found"]
    summary = json.loads(summary_path.read_text())
    for rel, digest in summary["files"].items():
        p = out / rel
        if not p.is_file():
            problems.append(f"{rel}: listed in manifest but missing")
        elif _sha256(p) != digest:
            problems.append(f"{rel}: checksum differs from manifest")
    config = RunConfig.from_dict(summary["config"])

    val_path = out / "valuation.json"
    if val_path.is_file():
        val = json.loads(val_path.read_text())
        areas, means = _verify_valuation(config, val, problems)
        chg_path = out / "change.json"
        if chg_path.is_file():
            _verify_change(val, json.loads(chg_path.read_text()), areas, means, problems)
    drv_path = out / "drivers.json"
    if drv_path.is_file():
        _verify_drivers(out, json.loads(drv_path.read_text()), problems)

    if rerun:
        with tempfile.TemporaryDirectory() as tmp:
            run_pipeline(config, tmp)
            a = {p.relative_to(out).as_posix(): p.read_bytes() for p in out.rglob("*") if p.is_file()}
            b = {p.relative_to(tmp).as_posix(): p.read_bytes() for p in Path(tmp).rglob("*") if p.is_file()}
            if set(a) != set(b):
                problems.append(f"rerun produced a different file set: {sorted(set(a) ^ set(b))}")
            for rel in sorted(set(a) & set(b)):
                if a[rel] != b[rel]:
                    problems.append(f"{rel}: rerun output differs")
    return problems

