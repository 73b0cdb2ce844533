"""Geographically weighted regression with a Gaussian distance-decay kernel.

Each sample location gets its own weighted least-squares fit, with weights
``exp(-d^2 / B^2)`` on every other sample. ``B`` is either one fixed distance
or, for the adaptive kernel, the distance from the location to its k-th
nearest neighbour.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import NonpositiveBandwidth, SingularDesign, TooFewPoints
from .regression import lstsq_svd


@dataclass(frozen=True)
class FixedKernel:
    bandwidth: float


@dataclass(frozen=True)
class AdaptiveKernel:
    n_neighbors: int


Kernel = Union[FixedKernel, AdaptiveKernel]


def gaussian_weight(d, bandwidth):
    """Gaussian kernel weight ``exp(-d^2/B^2)``. Accepts scalars or arrays.

    An infinite bandwidth gives uniform weights of exactly 1.
    """
    b = np.asarray(bandwidth, dtype=float)
    if (b <= 0).any() or np.isnan(b).any():
        raise NonpositiveBandwidth(f"bandwidth must be positive, got {bandwidth}")
    d = np.asarray(d, dtype=float)
    w = np.exp(-(d**2) / b**2)
    return float(w) if w.ndim == 0 else w


def distance_matrix(coords) -> np.ndarray:
    c = np.asarray(coords, dtype=float)
    diff = c[:, None, :] - c[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def adaptive_bandwidths(coords, n_neighbors: int) -> np.ndarray:
    """Distance from each point to its ``n_neighbors``-th nearest other point."""
    dist = distance_matrix(coords)
    n = len(dist)
    if not 1 <= n_neighbors < n:
        raise TooFewPoints(f"n_neighbors must be in [1, {n - 1}] for {n} points, got {n_neighbors}")
    out = np.empty(n)
    for i in range(n):
        others = np.delete(dist[i], i)
        # stable sort keeps point-id order among equal distances
        out[i] = np.sort(others, kind="stable")[n_neighbors - 1]
    return out


@dataclass
class GwrModel:
    kernel: Kernel
    names: tuple[str, ...]  # "intercept" first
    coefficients: np.ndarray  # (n, p + 1)
    local_r2: np.ndarray
    bandwidths: np.ndarray
    fitted: np.ndarray
    hat_diag: np.ndarray
    rss: float
    aicc: float

    @property
    def trace_s(self) -> float:
        return float(self.hat_diag.sum())


def _bandwidths(dist: np.ndarray, kernel: Kernel) -> np.ndarray:
    n = len(dist)
    if isinstance(kernel, FixedKernel):
        if not kernel.bandwidth > 0:
            raise NonpositiveBandwidth(f"bandwidth must be positive, got {kernel.bandwidth}")
        return np.full(n, float(kernel.bandwidth))
    k = int(kernel.n_neighbors)
    if not 1 <= k < n:
        raise TooFewPoints(f"n_neighbors must be in [1, {n - 1}] for {n} points, got {k}")
    bw = np.sort(dist, axis=1)[:, k]  # column 0 is the point itself
    if (bw <= 0).any():
        i = int(np.argmax(bw <= 0))
        raise NonpositiveBandwidth(f"location {i} has {k} coincident neighbours; adaptive bandwidth is 0")
    return bw


def aicc(rss: float, trace_s: float, n: int) -> float:
    """Corrected Akaike criterion for a GWR fit."""
    denom = n - 2.0 - trace_s
    if denom <= 0 or rss <= 0:
        return math.inf
    return n * math.log(rss / n) + n * math.log(2.0 * math.pi) + n * (n + trace_s) / denom


def gwr_fit(coords, x, y, kernel: Kernel, names: Sequence[str] | None = None) -> GwrModel:
    """Fit one weighted least-squares regression per sample location.

    ``x`` excludes the intercept column. Local R2 compares the weighted
    residual sum of squares with the weighted spread of ``y`` about its
    weighted mean at that location.
    """
    coords = np.asarray(coords, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    if n < p + 2:
        raise TooFewPoints(f"GWR with {p} predictors needs at least {p + 2} points, got {n}")
    if names is None:
        names = [f"x{j + 1}" for j in range(p)]
    design = np.column_stack([np.ones(n), x])
    dist = distance_matrix(coords)
    bw = _bandwidths(dist, kernel)

    coefs = np.empty((n, p + 1))
    local_r2 = np.empty(n)
    hat = np.empty(n)
    for i in range(n):
        w = gaussian_weight(dist[i], bw[i])
        if np.count_nonzero(w) < p + 2:
            raise TooFewPoints(f"location {i} has fewer than {p + 2} points with nonzero weight")
        sw = np.sqrt(w)
        beta, inv_gram = lstsq_svd(design * sw[:, None], y * sw, location=i)
        coefs[i] = beta
        hat[i] = design[i] @ inv_gram @ design[i]  # w_ii = 1
        resid = y - design @ beta
        wrss = float(w @ resid**2)
        ybar = float(w @ y / w.sum())
        wtss = float(w @ (y - ybar) ** 2)
        # spread at rounding level means y is locally constant
        if wtss > 1e-24 * float(w @ y**2):
            local_r2[i] = min(1.0, max(0.0, 1.0 - wrss / wtss))
        else:
            local_r2[i] = 0.0
    fitted = (design * coefs).sum(axis=1)
    rss = float(((y - fitted) ** 2).sum())
    return GwrModel(kernel, ("intercept", *names), coefs, local_r2, bw, fitted, hat, rss, aicc(rss, hat.sum(), n))


def cv_score(model: GwrModel, y) -> float:
    """Leave-one-out cross-validation score from the hat diagonal."""
    resid = np.asarray(y, dtype=float) - model.fitted
    denom = 1.0 - model.hat_diag
    if (denom <= 0).any():
        return math.inf
    return float(((resid / denom) ** 2).sum())


def _score(coords, x, y, kernel, criterion):
    try:
        model = gwr_fit(coords, x, y, kernel)
    except (SingularDesign, NonpositiveBandwidth, TooFewPoints):
        return math.inf
    return model.aicc if criterion == "aicc" else cv_score(model, y)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def select_bandwidth(coords, x, y, kind: str = "adaptive", criterion: str = "aicc",
                     tol: float = 1e-6, max_iter: int = 200) -> Kernel:
    """Golden-section search for the kernel minimising AICc or the CV score.

    Adaptive kernels search integer neighbour counts in ``[p + 2, n - 1]``;
    the bracket is refined until it holds at most a few candidates, which are
    then scored exhaustively. Fixed kernels search the bandwidth between the
    smallest and largest pairwise distances.
    """
    if criterion not in ("aicc", "cv"):
        raise ValueError(f"unknown criterion {criterion!r}")
    coords = np.asarray(coords, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, p = x.shape
    if n < p + 3:
        raise TooFewPoints(f"bandwidth selection needs at least {p + 3} points, got {n}")

    if kind == "adaptive":
        cache: dict[int, float] = {}

        def f(k: int) -> float:
            if k not in cache:
                cache[k] = _score(coords, x, y, AdaptiveKernel(k), criterion)
            return cache[k]

        lo, hi = min(p + 2, n - 1), n - 1
        a, b = lo, hi
        while b - a > 4:
            c = int(round(b - _INVPHI * (b - a)))
            d = int(round(a + _INVPHI * (b - a)))
            if c == d:
                d += 1
            if f(c) <= f(d):
                b = d
            else:
                a = c
        best = min(range(a, b + 1), key=lambda k: (f(k), k))
        return AdaptiveKernel(best)

    if kind == "fixed":
        dist = distance_matrix(coords)
        positive = dist[dist > 0]
        if positive.size == 0:
            raise TooFewPoints("all sample points coincide")
        a, b = float(positive.min()), float(dist.max())
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        fc = _score(coords, x, y, FixedKernel(c), criterion)
        fd = _score(coords, x, y, FixedKernel(d), criterion)
        for _ in range(max_iter):
            if abs(b - a) <= tol * max(abs(b), 1.0):
                break
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - _INVPHI * (b - a)
                fc = _score(coords, x, y, FixedKernel(c), criterion)
            else:
                a, c, fc = c, d, fd
                d = a + _INVPHI * (b - a)
                fd = _score(coords, x, y, FixedKernel(d), criterion)
        return FixedKernel((a + b) / 2.0)

    raise ValueError(f"unknown kernel kind {kind!r}")
