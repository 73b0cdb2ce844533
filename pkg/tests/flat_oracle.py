"""Spreadsheet-style recomputation of a pipeline run from its raw inputs.

Everything here is plain loops over Python floats (``math.fsum`` for sums)
and mpmath for distribution tails; nothing is imported from esvkit. Each
``check_*`` function returns a list of mismatch messages.
"""
import csv
import json
import math
import struct
from pathlib import Path

import mpmath

REL = 1e-9


def rel_ok(got, want, tol=REL, floor=0.0):
    if got is None or want is None:
        return got is None and want is None
    if got == want:
        return True
    return abs(got - want) <= tol * max(abs(got), abs(want), floor)


def _data_lines(path):
    with open(path, newline="") as f:
        return [line for line in f if not line.startswith("#") and line.strip()]


# --- inputs ------------------------------------------------------------------------


def load_raster(path):
    raw = Path(path).read_bytes()
    if raw[:4] == b"LULC":
        _, rows, cols, nodata = struct.unpack("<4sIIi", raw[:16])
        vals = struct.unpack(f"<{rows * cols}i", raw[16:])
        return [list(vals[r * cols:(r + 1) * cols]) for r in range(rows)], nodata
    header, cells = {}, []
    for line in raw.decode().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0][0].isalpha():
            header[parts[0].lower()] = parts[1]
        else:
            cells.extend(int(v) for v in parts)
    ncols = int(header["ncols"])
    grid = [cells[i:i + ncols] for i in range(0, len(cells), ncols)]
    return grid, int(float(header.get("nodata_value", -9999)))


def load_class_map(path):
    return {int(r["source_code"]): r["biome_name"].strip() for r in csv.DictReader(_data_lines(path))}


def load_table(path):
    name = Path(path).stem
    with open(path) as f:
        first = f.readline()
    if first.startswith("#"):
        for item in first[1:].split(","):
            if item.strip().startswith("scheme="):
                name = item.split("=", 1)[1].strip()
    rows = list(csv.reader(_data_lines(path)))
    services = rows[0][1:]
    values = {}
    for row in rows[1:]:
        for s, v in zip(services, row[1:]):
            values[(row[0], s)] = float(v)
    return name, services, values


# --- valuation and change ---------------------------------------------------------------


def biome_grid(config, epoch):
    class_map = load_class_map(config["class_scheme"])
    grid, nodata = load_raster(epoch["raster"])
    return [[None if v == nodata else class_map[v] for v in row] for row in grid]


def areas_of(grid, biomes, cell_area):
    counts = {b: 0 for b in biomes}
    for row in grid:
        for v in row:
            if v is not None:
                counts[v] += 1
    return counts, {b: counts[b] * cell_area for b in biomes}


def check_valuation(config, val):
    bad = []
    biomes = config["biomes"]
    cell = config["cell_area_ha"]
    tables = [load_table(p) for p in config["scheme_files"]]
    grids, areas = {}, {}
    for ep in config["epochs"]:
        grids[ep["label"]] = biome_grid(config, ep)
        counts, a = areas_of(grids[ep["label"]], biomes, cell)
        areas[ep["label"]] = a
        rec = next(r for r in val["areas"] if r["epoch"] == ep["label"])
        for k, b in enumerate(biomes):
            if rec["cell_counts"][k] != counts[b] or not rel_ok(rec["area_ha"][k], a[b]):
                bad.append(f"area {ep['label']}/{b}")
    reports = {}
    for ep in config["epochs"]:
        a = areas[ep["label"]]
        for name, services, vals in tables:
            rep = next(r for r in val["reports"] if r["epoch"] == ep["label"] and r["scheme"] == name)
            by_biome = {b: math.fsum(a[b] * vals[(b, s)] for s in services) for b in biomes}
            by_service = {s: math.fsum(a[b] * vals[(b, s)] for b in biomes) for s in services}
            total = math.fsum(a[b] * vals[(b, s)] for b in biomes for s in services)
            reports[(ep["label"], name)] = (by_biome, by_service, total)
            for b in biomes:
                if not rel_ok(rep["by_biome"][b], by_biome[b]):
                    bad.append(f"esv {ep['label']}/{name}/{b}")
                share = by_biome[b] / total * 100 if total else 0.0
                if not rel_ok(rep["contribution_percent"][b], share, floor=1e-12):
                    bad.append(f"contribution {ep['label']}/{name}/{b}")
            for s in services:
                if not rel_ok(rep["by_service"][s], by_service[s]):
                    bad.append(f"esv {ep['label']}/{name}/{s}")
            if not rel_ok(rep["total"], total):
                bad.append(f"total {ep['label']}/{name}")
        m = next(r for r in val["means"] if r["epoch"] == ep["label"])
        group = [reports[(ep["label"], t[0])] for t in tables]
        n = len(group)
        mean = ({b: math.fsum(g[0][b] for g in group) / n for b in biomes},
                {s: math.fsum(g[1][s] for g in group) / n for s in tables[0][1]},
                math.fsum(g[2] for g in group) / n)
        reports[(ep["label"], "mean")] = mean
        for b in biomes:
            if not rel_ok(m["by_biome"][b], mean[0][b]):
                bad.append(f"mean {ep['label']}/{b}")
            if not rel_ok(m["contribution_percent"][b], mean[0][b] / mean[2] * 100, floor=1e-12):
                bad.append(f"mean contribution {ep['label']}/{b}")
        for s in tables[0][1]:
            if not rel_ok(m["by_service"][s], mean[1][s]):
                bad.append(f"mean {ep['label']}/{s}")
        if not rel_ok(m["total"], mean[2]):
            bad.append(f"mean total {ep['label']}")
    return bad, grids, areas, reports


def check_change(config, chg, grids, areas, reports):
    bad = []
    biomes = config["biomes"]
    labels = [e["label"] for e in config["epochs"]]
    years = {e["label"]: float(e["year"]) for e in config["epochs"]}
    pairs = [(labels[i], labels[i + 1]) for i in range(len(labels) - 1)]
    if len(labels) > 2:
        pairs.append((labels[0], labels[-1]))
    if [tuple(p["epoch_pair"]) for p in chg["pairs"]] != pairs:
        return [f"pairs {chg['pairs']} != {pairs}"]
    for rec, (a, b) in zip(chg["pairs"], pairs):
        t = years[b] - years[a]
        if rec["years"] != t:
            bad.append(f"{a}-{b}: years")
        a0, a1 = areas[a], areas[b]
        for k in biomes:
            want = 0.0 if a0[k] == 0 and a1[k] == 0 else None if a0[k] == 0 else (a1[k] - a0[k]) / a0[k] * 100
            if not rel_ok(rec["lulc_change_percent"][k], want, floor=1e-12):
                bad.append(f"{a}-{b}: lulc change {k}")
        counts = {(i, j): 0 for i in biomes for j in biomes}
        for r0, r1 in zip(grids[a], grids[b]):
            for v0, v1 in zip(r0, r1):
                if v0 is not None and v1 is not None:
                    counts[(v0, v1)] += 1
        for i, bi in enumerate(biomes):
            for j, bj in enumerate(biomes):
                if rec["transition_counts"][i][j] != counts[(bi, bj)]:
                    bad.append(f"{a}-{b}: transition {bi}->{bj}")
        for row in rec["esv_change"]:
            r0, r1 = reports[(a, row["scheme"])], reports[(b, row["scheme"])]
            idx = {"total": 2, "biome": 0, "service": 1}[row["scope"]]
            v0 = r0[idx] if idx == 2 else r0[idx][row["name"]]
            v1 = r1[idx] if idx == 2 else r1[idx][row["name"]]
            pct = None if v0 == 0 else (v1 - v0) / v0 / t * 100
            if not (rel_ok(row["esv_start"], v0) and rel_ok(row["esv_end"], v1)
                    and rel_ok(row["net_change"], v1 - v0, floor=abs(v0) * 1e-6)
                    and rel_ok(row["change_percent_per_year"], pct, floor=1e-12)):
                bad.append(f"{a}-{b}: esv change {row['scope']}/{row['scheme']}/{row['name']}")
        total0 = math.fsum(a0.values())
        intensity = math.fsum(abs(a1[k] - a0[k]) for k in biomes) / total0 / t * 100
        el = rec["elasticity"]
        if intensity == 0:
            if el["status"] != "ZeroLci":
                bad.append(f"{a}-{b}: expected ZeroLci")
            continue
        if not rel_ok(el["lci_percent"], intensity):
            bad.append(f"{a}-{b}: LCI")
        m0, m1 = reports[(a, "mean")], reports[(b, "mean")]
        for k in biomes:
            want = None if m0[0][k] == 0 else (m1[0][k] - m0[0][k]) / m0[0][k] * 100 / intensity
            if not rel_ok(el["per_biome_ces"][k], want, floor=1e-12):
                bad.append(f"{a}-{b}: elasticity {k}")
        if not rel_ok(el["total_ces"], (m1[2] - m0[2]) / m0[2] * 100 / intensity):
            bad.append(f"{a}-{b}: total elasticity")
    return bad


# --- statistics ---------------------------------------------------------------------


def t_sf2(t, df):
    """Two-sided Student t tail."""
    x = mpmath.mpf(df) / (df + mpmath.mpf(t) ** 2)
    return float(mpmath.betainc(df / 2.0, 0.5, 0, x, regularized=True))


def f_sf(f, d1, d2):
    x = mpmath.mpf(d2) / (d2 + d1 * mpmath.mpf(f))
    return float(mpmath.betainc(d2 / 2.0, d1 / 2.0, 0, x, regularized=True))


def mean(v):
    return math.fsum(v) / len(v)


def pearson(a, b):
    ma, mb = mean(a), mean(b)
    sab = math.fsum((x - ma) * (y - mb) for x, y in zip(a, b))
    saa = math.fsum((x - ma) ** 2 for x in a)
    sbb = math.fsum((y - mb) ** 2 for y in b)
    return sab / math.sqrt(saa * sbb)


def mp_ols(cols, y):
    """OLS with intercept via 50-digit normal equations, expanded by hand."""
    mpmath.mp.dps = 50
    n = len(y)
    xs = [[mpmath.mpf(1)] * n] + [[mpmath.mpf(v) for v in c] for c in cols]
    ym = [mpmath.mpf(v) for v in y]
    p = len(xs)
    g = [[mpmath.fsum(xs[i][k] * xs[j][k] for k in range(n)) for j in range(p)] for i in range(p)]
    r = [mpmath.fsum(xs[i][k] * ym[k] for k in range(n)) for i in range(p)]
    # Gauss-Jordan inverse
    aug = [g[i][:] + [mpmath.mpf(1 if i == j else 0) for j in range(p)] for i in range(p)]
    for c in range(p):
        piv = max(range(c, p), key=lambda q: abs(aug[q][c]))
        aug[c], aug[piv] = aug[piv], aug[c]
        d = aug[c][c]
        aug[c] = [v / d for v in aug[c]]
        for q in range(p):
            if q != c:
                f = aug[q][c]
                aug[q] = [vq - f * vc for vq, vc in zip(aug[q], aug[c])]
    inv = [row[p:] for row in aug]
    beta = [mpmath.fsum(inv[i][j] * r[j] for j in range(p)) for i in range(p)]
    fitted = [mpmath.fsum(beta[i] * xs[i][k] for i in range(p)) for k in range(n)]
    ss_res = mpmath.fsum((ym[k] - fitted[k]) ** 2 for k in range(n))
    ybar = mpmath.fsum(ym) / n
    ss_tot = mpmath.fsum((v - ybar) ** 2 for v in ym)
    df = n - p
    s2 = ss_res / df
    se = [mpmath.sqrt(s2 * inv[i][i]) for i in range(p)]
    f = ((ss_tot - ss_res) / (p - 1)) / s2
    t = [beta[i] / se[i] for i in range(p)]
    return {
        "coef": [float(b) for b in beta], "se": [float(s) for s in se], "t": [float(v) for v in t],
        "p_t": [t_sf2(v, df) for v in t], "r2": float(1 - ss_res / ss_tot), "f": float(f),
        "p_f": f_sf(f, p - 1, df), "rmse": float(mpmath.sqrt(ss_res / n)),
    }


def check_samples(config, drv):
    bad = []
    crop = {(r["region"], r["year"]): r for r in csv.DictReader(_data_lines(config["crop_stats"]))}
    esv_rows = list(csv.DictReader(_data_lines(config["region_esv"])))
    s = drv["samples"]
    cols = {"tca": "tca_ha", "cp": "cp_kg", "cy": "cy_kg_per_ha", "nia": "nia_ha", "ci": "ci"}
    for i, r in enumerate(esv_rows):
        key = (r["region"], r["year"])
        if s["ids"][i] != f"{key[0]}@{key[1]}":
            bad.append(f"sample {i} id")
        for j, f in enumerate(s["factor_names"]):
            if s["factors"][i][j] != float(crop[key][cols[f]]):
                bad.append(f"sample {i} {f}")
        if s["response"][i] != float(r["esv"]) or s["coords"][i] != [float(r["x"]), float(r["y"])]:
            bad.append(f"sample {i} esv/coords")
    return bad


def check_statistics(drv):
    bad = []
    s = drv["samples"]
    names = s["factor_names"]
    fac = {f: [row[j] for row in s["factors"]] for j, f in enumerate(names)}
    y = s["response"]
    extra = s["extra"]

    def check_corr(key, variables):
        cm = drv[key]
        df = len(y) - 2
        for i, a in enumerate(cm["names"]):
            for j, b in enumerate(cm["names"]):
                r = 1.0 if i == j else pearson(variables[a], variables[b])
                if not rel_ok(cm["r"][i][j], r, floor=1e-12):
                    bad.append(f"{key} r {a}/{b}")
                p = 0.0 if i == j else t_sf2(r * math.sqrt(df / (1 - r * r)), df)
                if not rel_ok(cm["p"][i][j], p, floor=1e-300):
                    bad.append(f"{key} p {a}/{b}")

    check_corr("correlation_factors_esv", {**fac, "esv": y})
    check_corr("correlation_services_factors", {**extra, **fac})

    responses = {"esv": y, **extra}
    for fit in drv["simple_regressions"]:
        x, v = fac[fit["factor"]], responses[fit["response"]]
        mx, mv = mean(x), mean(v)
        sxx = math.fsum((a - mx) ** 2 for a in x)
        slope = math.fsum((a - mx) * (b - mv) for a, b in zip(x, v)) / sxx
        icpt = mv - slope * mx
        rss = math.fsum((b - icpt - slope * a) ** 2 for a, b in zip(x, v))
        tss = math.fsum((b - mv) ** 2 for b in v)
        if not (rel_ok(fit["slope"], slope) and rel_ok(fit["r2"], 1 - rss / tss)
                and rel_ok(fit["rmse"], math.sqrt(rss / len(v)))):
            bad.append(f"simple {fit['factor']}/{fit['response']}")

    # coefficients that are zero by construction carry only rounding noise;
    # they are compared on the scale of their standard error (t on a floor of 1)
    for row in drv["mlr"]:
        o = mp_ols([fac[p] for p in row["predictors"]], y)
        terms = ("intercept", *row["predictors"])
        if not (rel_ok(row["r2"], o["r2"]) and rel_ok(row["f_stat"], o["f"]) and rel_ok(row["p_f"], o["p_f"])):
            bad.append(f"mlr {row['model_id']} R2/F/p")
        for k, name in enumerate(terms):
            if not (rel_ok(row["coef"][name], o["coef"][k], floor=o["se"][k])
                    and rel_ok(row["t"][name], o["t"][k], floor=1.0)
                    and rel_ok(row["p_t"][name], o["p_t"][k], floor=1e-300)):
                bad.append(f"mlr {row['model_id']} {name}")
    return bad


# --- GWR ------------------------------------------------------------------------------


def univariate_gwr(coords, x, y, bw):
    """Closed-form weighted simple regression at every location."""
    n = len(y)
    out = {"coef": [], "r2": [], "hat": [], "fitted": []}
    for i in range(n):
        w = [math.exp(-((coords[i][0] - coords[j][0]) ** 2 + (coords[i][1] - coords[j][1]) ** 2) / bw[i] ** 2)
             for j in range(n)]
        sw = math.fsum(w)
        mx = math.fsum(wj * xj for wj, xj in zip(w, x)) / sw
        my = math.fsum(wj * yj for wj, yj in zip(w, y)) / sw
        sxx = math.fsum(wj * (xj - mx) ** 2 for wj, xj in zip(w, x))
        sxy = math.fsum(wj * (xj - mx) * (yj - my) for wj, xj, yj in zip(w, x, y))
        b1 = sxy / sxx
        b0 = my - b1 * mx
        rss = math.fsum(wj * (yj - b0 - b1 * xj) ** 2 for wj, xj, yj in zip(w, x, y))
        tss = math.fsum(wj * (yj - my) ** 2 for wj, yj in zip(w, y))
        out["coef"].append((b0, b1))
        out["r2"].append(min(1.0, max(0.0, 1 - rss / tss)))
        # hat diagonal: w_ii (1/sw + (x_i - mx)^2 / sxx) with w_ii = 1
        out["hat"].append(1.0 / sw + (x[i] - mx) ** 2 / sxx)
        out["fitted"].append(b0 + b1 * x[i])
    rss = math.fsum((yj - fj) ** 2 for yj, fj in zip(y, out["fitted"]))
    tr = math.fsum(out["hat"])
    out["rss"] = rss
    out["aicc"] = n * math.log(rss / n) + n * math.log(2 * math.pi) + n * (n + tr) / (n - 2 - tr)
    return out


def kth_neighbour(coords, k):
    out = []
    for i, c in enumerate(coords):
        d = sorted(math.dist(c, o) for j, o in enumerate(coords) if j != i)
        out.append(d[k - 1])
    return out


def check_gwr(drv):
    bad = []
    s = drv["samples"]
    for g in drv["gwr"]:
        idx = [s["ids"].index(i) for i in g["ids"]]
        coords = [s["coords"][i] for i in idx]
        j = s["factor_names"].index(g["factor"])
        x = [s["factors"][i][j] for i in idx]
        y = [s["response"][i] for i in idx]
        tag = f"gwr {g['group']}/{g['factor']}"
        kern = g["kernel"]
        if kern["kind"] == "adaptive":
            bw = kth_neighbour(coords, kern["n_neighbors"])
        else:
            bw = [kern["bandwidth"]] * len(y)
        if not all(rel_ok(a, b) for a, b in zip(g["bandwidths"], bw)):
            bad.append(f"{tag} bandwidths")
        o = univariate_gwr(coords, x, y, bw)
        for i in range(len(y)):
            for k in range(2):
                if not rel_ok(g["coefficients"][i][k], o["coef"][i][k]):
                    bad.append(f"{tag} coef[{i}][{k}]")
            if not rel_ok(g["local_r2"][i], o["r2"][i], floor=1e-12):
                bad.append(f"{tag} local_r2[{i}]")
        if not (rel_ok(g["rss"], o["rss"]) and rel_ok(g["aicc"], o["aicc"])):
            bad.append(f"{tag} rss/aicc")
        if kern["kind"] == "adaptive":
            # the selected neighbour count is at least a local minimum of AICc
            k = kern["n_neighbors"]
            for kk in (k - 1, k + 1):
                if 3 <= kk < len(y):
                    other = univariate_gwr(coords, x, y, kth_neighbour(coords, kk))["aicc"]
                    if other < o["aicc"] - 1e-9 * abs(o["aicc"]):
                        bad.append(f"{tag} k={k} is not a local AICc minimum")
    return bad


# --- ANN ------------------------------------------------------------------------------


def check_ann(out_dir, drv):
    bad = []
    model = json.loads((Path(out_dir) / "drivers" / "ann_model.json").read_text())
    w_in, w_out = model["weights"]
    b_in, b_out = model["biases"]
    norm = model["normalization"]
    n_in, n_hid = len(w_in[0]), len(w_in)
    raw = []
    for j in range(n_in):
        total = 0.0
        for h in range(n_hid):
            col = math.fsum(abs(w_in[h][q]) for q in range(n_in))
            total += abs(w_in[h][j]) / col * abs(w_out[0][h])
        raw.append(total)
    s = math.fsum(raw)
    imp = drv["ann"]["importance"]
    for j, name in enumerate(model["input_names"]):
        if not rel_ok(imp[name], raw[j] / s * 100):
            bad.append(f"ann importance {name}")

    def predict(xrow):
        z = [(xrow[q] - norm["x_mean"][q]) / norm["x_std"][q] for q in range(n_in)]
        hidden = [math.tanh(math.fsum(w_in[h][q] * z[q] for q in range(n_in)) + b_in[h]) for h in range(n_hid)]
        o = math.fsum(w_out[0][h] * hidden[h] for h in range(n_hid)) + b_out[0]
        return norm["y_mean"] + norm["y_std"] * o

    xs, ys = drv["samples"]["factors"], drv["samples"]["response"]
    metrics = drv["ann"]["metrics"]
    for part in ("train", "val", "test"):
        ids = metrics["split"][part]
        err = [(predict(xs[i]) - ys[i]) ** 2 for i in ids]
        if not rel_ok(metrics[f"{part}_mse"], math.fsum(err) / len(err), tol=1e-9):
            bad.append(f"ann {part} mse")
    ids = metrics["split"]["test"]
    yt = [ys[i] for i in ids]
    m = mean(yt)
    r2 = 1 - math.fsum((predict(xs[i]) - ys[i]) ** 2 for i in ids) / math.fsum((v - m) ** 2 for v in yt)
    if not rel_ok(metrics["test_r2"], r2):
        bad.append("ann test r2")
    if sorted(metrics["split"]["train"] + metrics["split"]["val"] + ids) != list(range(len(ys))):
        bad.append("ann split is not a partition")
    return bad


# --- CSV mirrors -----------------------------------------------------------------------


def check_csv_mirrors(out_dir, val):
    """Each CSV number equals its JSON counterpart printed to 6 significant digits."""
    bad = []
    out = Path(out_dir)
    for rep in val["reports"] + val["means"]:
        path = out / "esv" / f"esv_{rep['epoch']}_{rep['scheme']}.csv"
        for r in csv.DictReader(_data_lines(path)):
            want = rep["total"] if r["kind"] == "total" else rep[f"by_{r['kind']}"][r["name"]]
            if r["esv_usd_per_yr"] != f"{want:.6g}":
                bad.append(f"{path.name}: {r['name']}")
    return bad


def check_run(out_dir):
    out = Path(out_dir)
    summary = json.loads((out / "summary.json").read_text())
    config = summary["config"]
    val = json.loads((out / "valuation.json").read_text())
    bad, grids, areas, reports = check_valuation(config, val)
    bad += check_change(config, json.loads((out / "change.json").read_text()), grids, areas, reports)
    drv = json.loads((out / "drivers.json").read_text())
    bad += check_samples(config, drv)
    bad += check_statistics(drv)
    bad += check_gwr(drv)
    bad += check_ann(out, drv)
    bad += check_csv_mirrors(out, val)
    return bad
