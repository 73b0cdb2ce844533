"""``esvkit`` command line.

Single-step subcommands write one CSV table (to ``-o`` or standard output);
``pipeline`` runs everything a config asks for and ``verify`` re-derives a
finished run. Exit status is 0 only when nothing failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .elasticity import elasticity_by_biome
from .errors import ConfigError, EsvError
from .gwr import AdaptiveKernel, FixedKernel, gwr_fit
from .neural import SplitSpec, mlp_init, mlp_train, normalized_importance
from .pipeline import (
    AnnOptions,
    EpochSpec,
    GwrOptions,
    RunConfig,
    _kernel_for,
    mlr_rows_for_csv,
    run_pipeline,
    verify,
)
from .raster import (
    class_areas,
    lulc_change,
    read_class_scheme,
    read_raster,
    reclassify,
    transition_matrix,
    write_binary,
    write_esri_ascii,
)
from .regression import FACTORS, correlation_matrix, read_samples, stepwise_mlr
from .tables import write_area_table, write_csv, write_json, write_transition_matrix
from .valuation import esv_change, esv_total, mean_esv, read_coefficient_table

log = logging.getLogger("esvkit")


def _grid(args, path, label=""):
    raw = read_raster(path, args.cell_area_ha, label or Path(path).stem)
    if args.class_scheme is None:
        raise ConfigError("--class-scheme is required to map raster codes to biomes")
    return reclassify(raw, read_class_scheme(args.class_scheme))


def _tables(args, biomes):
    if not args.scheme_file:
        raise ConfigError("at least one --scheme-file is required")
    return [read_coefficient_table(p, biomes) for p in args.scheme_file]


def _mean_report(args, grid):
    areas = class_areas(grid)
    reports = [esv_total(areas, t) for t in _tables(args, areas.biomes)]
    return areas, reports, mean_esv(reports)


def cmd_areas(args):
    write_area_table(args.out, class_areas(_grid(args, args.raster, args.label)))


def cmd_reclass(args):
    grid = _grid(args, args.raster, args.label)
    if args.out.endswith(".asc"):
        write_esri_ascii(args.out, grid)
    else:
        write_binary(args.out, grid)


def cmd_transitions(args):
    tm = transition_matrix(_grid(args, args.start, args.start_label), _grid(args, args.end, args.end_label))
    write_transition_matrix(args.out, tm)


def cmd_value(args):
    areas, reports, mean = _mean_report(args, _grid(args, args.raster, args.label))
    rows = []
    for r in [*reports, mean]:
        rows += [(r.scheme_name, "biome", b, v, c) for b, v, c in zip(r.biomes, r.by_biome, r.contribution_percent())]
        rows += [(r.scheme_name, "service", s, v, None) for s, v in zip(r.services, r.by_service)]
        rows.append((r.scheme_name, "total", "total", r.total, 100.0 if r.total else 0.0))
    write_csv(args.out, ["scheme", "kind", "name", "esv_usd_per_yr", "contribution_percent"], rows)
    if args.json:
        write_json(args.json, {"areas": areas.as_dict(), "reports": [r.to_dict() for r in [*reports, mean]]})


def cmd_change(args):
    a0, _, m0 = _mean_report(args, _grid(args, args.start, args.start_label))
    a1, _, m1 = _mean_report(args, _grid(args, args.end, args.end_label))
    change = lulc_change(a0, a1, strict=False)
    rows = []
    for k, b in enumerate(a0.biomes):
        v0, v1 = m0.by_biome[k], m1.by_biome[k]
        rate = esv_change(v0, v1, args.years) if v0 != 0 else None
        rows.append((b, a0.area_ha[k], a1.area_ha[k], change[b], v0, v1, v1 - v0, rate))
    rate = esv_change(m0.total, m1.total, args.years) if m0.total != 0 else None
    rows.append(("total", a0.total, a1.total, (a1.total - a0.total) / a0.total * 100.0 if a0.total else None,
                 m0.total, m1.total, m1.total - m0.total, rate))
    write_csv(args.out, ["biome", "start_ha", "end_ha", "area_change_percent", "esv_start", "esv_end",
                         "esv_net_change", "esv_change_percent_per_year"], rows)


def cmd_elasticity(args):
    a0, _, m0 = _mean_report(args, _grid(args, args.start, args.start_label))
    a1, _, m1 = _mean_report(args, _grid(args, args.end, args.end_label))
    res = elasticity_by_biome(a0, a1, m0, m1, args.years)
    rows = [(b, res.per_biome_ces[b], res.undefined.get(b, "ok")) for b in a0.biomes]
    rows.append(("total", res.total_ces, res.undefined.get("total", "ok")))
    print(f"# LCI = {res.lci_percent:.6g} %/yr", file=sys.stderr)
    write_csv(args.out, ["biome", "ces", "status"], rows)


def _samples(args):
    return read_samples(args.samples, tuple(args.factors), args.response)


def cmd_gwr(args):
    s = _samples(args)
    opts = GwrOptions(True, args.kernel, args.select, args.neighbors, args.bandwidth)
    if args.select == "none" and getattr(opts, "neighbors" if args.kernel == "adaptive" else "bandwidth") is None:
        raise ConfigError(f"--select none with a {args.kernel} kernel needs --{'neighbors' if args.kernel == 'adaptive' else 'bandwidth'}")
    kernel = _kernel_for(opts, s.coords, s.factors, s.response)
    model = gwr_fit(s.coords, s.factors, s.response, kernel, s.factor_names)
    param = kernel.n_neighbors if isinstance(kernel, AdaptiveKernel) else kernel.bandwidth
    print(f"# kernel={args.kernel} parameter={param} aicc={model.aicc:.6g}", file=sys.stderr)
    write_csv(args.out, ["id", "x", "y", *(f"beta_{n}" for n in model.names), "local_r2", "bandwidth"],
              ([i, c[0], c[1], *b, r2, bw] for i, c, b, r2, bw in
               zip(s.ids, s.coords, model.coefficients, model.local_r2, model.bandwidths)))


def cmd_mlr(args):
    s = _samples(args)
    header, body = mlr_rows_for_csv(stepwise_mlr(s.factor_dict(), s.response), s.factor_names)
    write_csv(args.out, header, body)


def cmd_correlate(args):
    s = _samples(args)
    variables = {**s.factor_dict(), args.response: s.response}
    if args.services:
        variables = {**s.extra, **s.factor_dict()}
    cm = correlation_matrix(variables)
    rows = [(a, b, cm.r[i, j], cm.p[i, j]) for i, a in enumerate(cm.names) for j, b in enumerate(cm.names)]
    write_csv(args.out, ["var_a", "var_b", "r", "p"], rows)


def cmd_ann(args):
    s = _samples(args)
    model = mlp_init([len(s.factor_names), args.hidden, 1], args.seed, s.factor_names)
    res = mlp_train(model, s.factors, s.response, SplitSpec(seed=args.seed), args.epochs, args.lr)
    imp = normalized_importance(res.model, args.importance)
    ranked = sorted(imp.items(), key=lambda kv: (-kv[1], kv[0]))
    print(f"# test_r2={res.test_r2:.6g} best_epoch={res.best_epoch}", file=sys.stderr)
    write_csv(args.out, ["factor", "importance_percent", "rank"], ((k, v, n) for n, (k, v) in enumerate(ranked, 1)))
    if args.model_out:
        write_json(args.model_out, res.model.to_dict())


def _parse_epoch(text: str) -> EpochSpec:
    """``LABEL=PATH`` or ``LABEL:YEAR=PATH``."""
    if "=" not in text:
        raise ConfigError(f"--epoch expects LABEL=PATH, got {text!r}")
    key, path = text.split("=", 1)
    label, _, year = key.partition(":")
    return EpochSpec(label, path, float(year) if year else None)


def build_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
    else:
        cfg = RunConfig([], [], "", 0.0, base_dir=Path.cwd())
    if args.epoch:
        cfg.epochs = [_parse_epoch(e) for e in args.epoch]
    for name in ("class_scheme", "crop_stats", "region_esv", "output_dir"):
        v = getattr(args, name)
        if v is not None:
            setattr(cfg, name, str(Path(v).resolve()))
    if args.scheme_file:
        cfg.scheme_files = [str(Path(p).resolve()) for p in args.scheme_file]
    if args.epoch:
        for e in cfg.epochs:
            e.raster = str(Path(e.raster).resolve())
    if args.cell_area_ha is not None:
        cfg.cell_area_ha = args.cell_area_ha
    if args.biomes is not None:
        cfg.biomes = [b.strip() for b in args.biomes.split(",")]
    if args.seed is not None:
        cfg.seed = args.seed
    for flag, target, attr in (("gwr", cfg.gwr, "enabled"), ("ann", cfg.ann, "enabled"),
                               ("kernel", cfg.gwr, "kernel"), ("select", cfg.gwr, "select"),
                               ("neighbors", cfg.gwr, "neighbors"), ("bandwidth", cfg.gwr, "bandwidth"),
                               ("hidden", cfg.ann, "hidden"), ("epochs", cfg.ann, "epochs"),
                               ("lr", cfg.ann, "lr"), ("importance", cfg.ann, "importance")):
        v = getattr(args, flag)
        if v is not None:
            setattr(target, attr, v)
    for flag in ("mlr", "correlations"):
        if getattr(args, flag) is not None:
            setattr(cfg, flag, getattr(args, flag))
    return cfg


def cmd_pipeline(args):
    cfg = build_config(args)
    failures = run_pipeline(cfg)
    out = cfg.resolve(cfg.output_dir)
    if failures:
        print(f"{len(failures)} stage(s) failed:", file=sys.stderr)
        for f in failures:
            print(f"  {f}", file=sys.stderr)
        return 1
    print(f"wrote {out}", file=sys.stderr)
    return 0


def cmd_verify(args):
    problems = verify(args.output_dir, rerun=args.rerun)
    if problems:
        print(f"verification failed ({len(problems)} problem(s)):", file=sys.stderr)
        for p in problems:
            print(f"  {p}", file=sys.stderr)
        return 1
    print("verification passed", file=sys.stderr)
    return 0


def cmd_demo(args):
    from .synthetic import write_demo

    path = write_demo(args.out_dir)
    print(f"wrote demo inputs; run: esvkit pipeline --config {path}", file=sys.stderr)


def _add_raster_opts(p):
    p.add_argument("--class-scheme", help="source code -> biome mapping CSV")
    p.add_argument("--cell-area-ha", type=float, default=1.0, help="area of one cell in hectares (default 1)")


def _add_scheme_opts(p):
    p.add_argument("--scheme-file", action="append", default=[], help="coefficient table CSV (repeatable)")


def _add_pair(p):
    p.add_argument("start")
    p.add_argument("end")
    p.add_argument("--start-label", default="")
    p.add_argument("--end-label", default="")


def _add_samples(p):
    p.add_argument("samples", help="CSV with id,x,y,<factors>,<response> columns")
    p.add_argument("--factors", nargs="+", default=list(FACTORS))
    p.add_argument("--response", default="esv")


def _add_gwr_opts(p, defaults: bool):
    d = GwrOptions() if defaults else None
    p.add_argument("--kernel", choices=("fixed", "adaptive"), default=d and d.kernel)
    p.add_argument("--bandwidth", type=float, default=None, help="fixed kernel distance")
    p.add_argument("--neighbors", type=int, default=None, help="adaptive kernel neighbour count")
    p.add_argument("--select", choices=("aicc", "cv", "none"), default=d and d.select)


def _add_ann_opts(p, defaults: bool):
    d = AnnOptions() if defaults else None
    p.add_argument("--hidden", type=int, default=d and d.hidden)
    p.add_argument("--epochs", type=int, default=d and d.epochs)
    p.add_argument("--lr", type=float, default=d and d.lr)
    p.add_argument("--importance", choices=("garson", "connection-weight"), default=d and d.importance)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="esvkit", description="Ecosystem service valuation from land-cover rasters.")
    ap.add_argument("--version", action="version", version=f"esvkit {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("areas", help="per-biome areas of one raster")
    p.add_argument("raster")
    p.add_argument("--label", default="")
    _add_raster_opts(p)
    p.add_argument("-o", "--out", default="-")
    p.set_defaults(func=cmd_areas)

    p = sub.add_parser("reclass", help="map source codes to biome indices")
    p.add_argument("raster")
    p.add_argument("--label", default="")
    _add_raster_opts(p)
    p.add_argument("-o", "--out", required=True, help="output raster (.asc for text, otherwise binary)")
    p.set_defaults(func=cmd_reclass)

    p = sub.add_parser("transitions", help="transition matrix between two rasters")
    _add_pair(p)
    _add_raster_opts(p)
    p.add_argument("-o", "--out", default="-")
    p.set_defaults(func=cmd_transitions)

    p = sub.add_parser("value", help="ESV of one raster under each coefficient table and their mean")
    p.add_argument("raster")
    p.add_argument("--label", default="")
    _add_raster_opts(p)
    _add_scheme_opts(p)
    p.add_argument("-o", "--out", default="-")
    p.add_argument("--json", help="also write full-precision JSON here")
    p.set_defaults(func=cmd_value)

    for name, func, text in (("change", cmd_change, "area and ESV change between two rasters"),
                             ("elasticity", cmd_elasticity, "land-change intensity and ESV elasticity")):
        p = sub.add_parser(name, help=text)
        _add_pair(p)
        p.add_argument("--years", type=float, required=True, help="length of the period")
        _add_raster_opts(p)
        _add_scheme_opts(p)
        p.add_argument("-o", "--out", default="-")
        p.set_defaults(func=func)

    p = sub.add_parser("gwr", help="geographically weighted regression")
    _add_samples(p)
    _add_gwr_opts(p, True)
    p.add_argument("-o", "--out", default="-")
    p.set_defaults(func=cmd_gwr)

    p = sub.add_parser("mlr", help="all one- and two-factor regressions, ranked")
    _add_samples(p)
    p.add_argument("-o", "--out", default="-")
    p.set_defaults(func=cmd_mlr)

    p = sub.add_parser("correlate", help="Pearson correlation matrix")
    _add_samples(p)
    p.add_argument("--services", action="store_true", help="correlate the extra service columns with the factors")
    p.add_argument("-o", "--out", default="-")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("ann", help="train an MLP and report input importance")
    _add_samples(p)
    _add_ann_opts(p, True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", help="write the trained model as JSON")
    p.add_argument("-o", "--out", default="-")
    p.set_defaults(func=cmd_ann)

    p = sub.add_parser("pipeline", help="run a full analysis from a JSON config")
    p.add_argument("--config", help="RunConfig JSON; flags below override its fields")
    p.add_argument("--epoch", action="append", help="LABEL=PATH or LABEL:YEAR=PATH (repeatable, replaces config epochs)")
    p.add_argument("--scheme-file", action="append", help="coefficient table (repeatable, replaces config list)")
    p.add_argument("--class-scheme")
    p.add_argument("--crop-stats")
    p.add_argument("--region-esv")
    p.add_argument("--cell-area-ha", type=float)
    p.add_argument("--biomes", help="comma-separated biome order")
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    for flag in ("gwr", "mlr", "correlations", "ann"):
        p.add_argument(f"--{flag}", action=argparse.BooleanOptionalAction, default=None)
    _add_gwr_opts(p, False)
    _add_ann_opts(p, False)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("verify", help="re-derive the numbers of a finished run")
    p.add_argument("output_dir")
    p.add_argument("--rerun", action="store_true", help="also rerun and compare output trees byte for byte")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("demo", help="write the synthetic demo dataset and config")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_demo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    np.seterr(all="ignore")
    try:
        return args.func(args) or 0
    except (EsvError, ValueError, OSError) as exc:
        print(f"esvkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
