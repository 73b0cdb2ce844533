"""Global regression statistics for the driver analysis.

OLS with ANOVA and coefficient t-tests, univariate regressions with R2/RMSE,
Pearson correlation matrices, and the enumerated one- and two-factor
multiple regressions.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateFactor, SingularDesign

FACTORS = ("tca", "cp", "cy", "nia", "ci")

# smallest/largest singular value ratio below which a design counts as singular
RANK_TOL = 1e-10


@dataclass
class SampleTable:
    """Sample points: an id, projected coordinates, factor values and ESV.

    Extra numeric columns (per-service ESVs, for instance) land in ``extra``.
    """

    ids: list[str]
    coords: np.ndarray
    factors: np.ndarray
    factor_names: tuple[str, ...]
    response: np.ndarray
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    groups: list[str] | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        self.factors = np.asarray(self.factors, dtype=float).reshape(len(self.ids), -1)
        self.response = np.asarray(self.response, dtype=float)
        if not np.isfinite(self.coords).all():
            raise ValueError("sample coordinates must be finite")
        if self.factors.shape[1] != len(self.factor_names):
            raise ValueError("factor matrix width does not match factor names")

    def __len__(self):
        return len(self.ids)

    def factor_dict(self) -> dict[str, np.ndarray]:
        return {name: self.factors[:, j] for j, name in enumerate(self.factor_names)}

    def subset(self, mask) -> "SampleTable":
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        return SampleTable(
            [self.ids[i] for i in idx],
            self.coords[idx],
            self.factors[idx],
            self.factor_names,
            self.response[idx],
            {k: v[idx] for k, v in self.extra.items()},
            None if self.groups is None else [self.groups[i] for i in idx],
        )


def read_samples(path, factor_names: Sequence[str] = FACTORS, response: str = "esv") -> SampleTable:
    """Read an ``id,x,y,<factors...>,esv`` CSV; other numeric columns go to ``extra``."""
    with open(path, newline="") as f:
        reader = csv.DictReader(line for line in f if not line.startswith("#"))
        cols = reader.fieldnames or []
        need = ["id", "x", "y", *factor_names, response]
        missing = [c for c in need if c not in cols]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        recs = list(reader)
    extra_cols = [c for c in cols if c not in need and c != "group"]
    ids = [r["id"] for r in recs]
    coords = np.array([[float(r["x"]), float(r["y"])] for r in recs])
    factors = np.array([[float(r[c]) for c in factor_names] for r in recs]).reshape(len(recs), len(factor_names))
    resp = np.array([float(r[response]) for r in recs])
    extra = {c: np.array([float(r[c]) for r in recs]) for c in extra_cols}
    groups = [r["group"] for r in recs] if "group" in cols else None
    return SampleTable(ids, coords, factors, tuple(factor_names), resp, extra, groups)


@dataclass
class OlsResult:
    names: tuple[str, ...]  # "intercept" first
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p_t: np.ndarray
    r2: float
    rmse: float
    f_stat: float
    p_f: float
    n: int
    df_model: int
    df_resid: int
    ss_res: float
    ss_tot: float

    @property
    def adj_r2(self) -> float:
        return 1.0 - (1.0 - self.r2) * (self.n - 1) / self.df_resid


def lstsq_svd(a: np.ndarray, b: np.ndarray, location=None):
    """Least-squares solve through an SVD of the column-equilibrated design.

    Returns ``(coef, inv_gram)`` where ``inv_gram`` is ``(A^T A)^-1``. The
    rank test uses unit-norm columns so it is blind to predictor units.
    """
    scale = np.sqrt((a**2).sum(axis=0))
    if (scale == 0).any():
        raise SingularDesign(location)
    u, s, vt = np.linalg.svd(a / scale, full_matrices=False)
    if s[-1] / s[0] < RANK_TOL:
        raise SingularDesign(location)
    coef = (vt.T @ ((u.T @ b) / s)) / scale
    inv_gram = ((vt.T / s**2) @ vt) / np.outer(scale, scale)
    return coef, inv_gram


def ols_fit(x, y, names: Sequence[str] | None = None) -> OlsResult:
    """Ordinary least squares with an intercept.

    ``x`` is an ``(n, p)`` design without the intercept column. RMSE is
    sqrt(SS_res / n).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    if n <= p + 1:
        raise ValueError(f"need more than {p + 1} samples for {p} predictors, got {n}")
    if names is None:
        names = [f"x{j + 1}" for j in range(p)]
    design = np.column_stack([np.ones(n), x])
    coef, inv_gram = lstsq_svd(design, y)
    resid = y - design @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    df_resid = n - p - 1
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    ss_reg = max(ss_tot - ss_res, 0.0)
    sigma2 = np.float64(ss_res) / df_resid
    se = np.sqrt(sigma2 * np.diag(inv_gram))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = coef / se
        f_stat = np.float64(ss_reg / p) / sigma2 if ss_tot > 0 else float("nan")
    p_t = 2.0 * stats.t.sf(np.abs(t), df_resid)
    p_f = float(stats.f.sf(f_stat, p, df_resid))
    return OlsResult(
        ("intercept", *names), coef, se, t, p_t, float(r2), float(np.sqrt(ss_res / n)),
        float(f_stat), p_f, n, p, df_resid, ss_res, ss_tot,
    )


@dataclass
class SimpleFit:
    factor: str
    response: str
    r2: float | None
    slope: float | None
    rmse: float | None
    status: str = "ok"

    @property
    def sign(self) -> int:
        return 0 if self.slope is None else int(np.sign(self.slope))


def simple_regression(x, y) -> OlsResult:
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        raise DegenerateFactor("factor has zero variance")
    return ols_fit(x, y)


def simple_regressions(factors: Mapping[str, Sequence[float]], responses: Mapping[str, Sequence[float]]) -> list[SimpleFit]:
    """One univariate OLS per (factor, response) pair, factor-major order.

    Constant factors produce a row with ``status="DegenerateFactor"``.
    """
    out = []
    for fname, x in factors.items():
        for rname, y in responses.items():
            try:
                res = simple_regression(x, y)
            except DegenerateFactor:
                out.append(SimpleFit(fname, rname, None, None, None, "DegenerateFactor"))
                continue
            out.append(SimpleFit(fname, rname, res.r2, float(res.coef[1]), res.rmse))
    return out


@dataclass
class CorrelationMatrix:
    names: tuple[str, ...]
    r: np.ndarray
    p: np.ndarray
    n: int


def correlation_matrix(variables: Mapping[str, Sequence[float]]) -> CorrelationMatrix:
    """Pearson r for every pair, with two-sided p from the t transform (n-2 df)."""
    names = tuple(variables)
    data = np.array([np.asarray(variables[k], dtype=float) for k in names])
    m, n = data.shape
    if n < 3:
        raise ValueError(f"need at least 3 samples, got {n}")
    if not np.isfinite(data).all():
        raise ValueError("correlation inputs must be finite")
    centered = data - data.mean(axis=1, keepdims=True)
    ss = (centered**2).sum(axis=1)
    flat = [nm for nm, v in zip(names, ss) if v == 0]
    if flat:
        raise DegenerateFactor(f"zero-variance variables: {flat}")
    r = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            rij = float(centered[i] @ centered[j] / np.sqrt(ss[i] * ss[j]))
            r[i, j] = r[j, i] = min(1.0, max(-1.0, rij))
    df = n - 2
    with np.errstate(divide="ignore"):
        t = r * np.sqrt(df / np.maximum(1.0 - r**2, 0.0))
    p = 2.0 * stats.t.sf(np.abs(t), df)
    return CorrelationMatrix(names, r, p, n)


@dataclass
class MlrRow:
    model_id: int
    predictors: tuple[str, ...]
    r2: float
    f_stat: float
    p_f: float
    coef: dict[str, float]
    t: dict[str, float]
    p_t: dict[str, float]
    status: str = "ok"

    @property
    def signs(self) -> dict[str, int]:
        return {k: int(np.sign(v)) for k, v in self.coef.items() if k != "intercept"}


def enumerate_subsets(names: Sequence[str]) -> list[tuple[str, ...]]:
    """All single factors then all pairs, in that order (5 + 10 for 5 factors)."""
    return [(n,) for n in names] + list(itertools.combinations(names, 2))


def stepwise_mlr(predictors: Mapping[str, Sequence[float]], response) -> list[MlrRow]:
    """Fit OLS on every one- and two-factor subset and rank by R2.

    Model ids follow :func:`enumerate_subsets` order. Rows are sorted by
    descending R2; R2 values equal to 10 decimals are ordered by fewer
    predictors, then model id. Singular subsets are kept with
    ``status="SingularDesign"`` and sorted last.
    """
    names = tuple(predictors)
    y = np.asarray(response, dtype=float)
    if len(y) <= 7:
        raise ValueError(f"need more than 7 samples, got {len(y)}")
    nan = float("nan")
    rows = []
    for model_id, subset in enumerate(enumerate_subsets(names), start=1):
        x = np.column_stack([np.asarray(predictors[k], dtype=float) for k in subset])
        try:
            res = ols_fit(x, y, subset)
        except SingularDesign:
            rows.append(MlrRow(model_id, subset, nan, nan, nan, {}, {}, {}, "SingularDesign"))
            continue
        rows.append(
            MlrRow(
                model_id, subset, res.r2, res.f_stat, res.p_f,
                dict(zip(res.names, res.coef.tolist())),
                dict(zip(res.names, res.t.tolist())),
                dict(zip(res.names, res.p_t.tolist())),
            )
        )

    def key(row: MlrRow):
        if row.status != "ok":
            return (1, 0.0, 0, row.model_id)
        return (0, -round(row.r2, 10), len(row.predictors), row.model_id)

    return sorted(rows, key=key)
