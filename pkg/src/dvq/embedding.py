"""Correlation integral and correlation-dimension estimation.

The correlation integral counts the fraction of point pairs closer than a
radius; its log-log slope in the scaling region estimates the correlation
dimension. Repeating the estimate for growing embedding sizes and watching
the slope saturate suggests a regressor size through Takens' rule
``p = 2 * D + 1``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InvalidInputError, ZeroSpreadError
from .series import TimeSeries, window_matrix

N_RADII = 50
MAX_POINTS = 5000
WINDOW_TOLERANCE = 0.10
PLATEAU_TOLERANCE = 0.10
_BLOCK = 512


@dataclass(frozen=True)
class CorrelationCurve:
    """ln C(r) sampled on a radius grid; ``log_c`` is -inf where C(r) = 0."""

    embedding_dim: int
    radii: np.ndarray
    log_c: np.ndarray
    counts: np.ndarray
    pair_count_total: int

    @property
    def log_r(self):
        return np.log(self.radii)

    @property
    def c(self):
        return self.counts / self.pair_count_total


@dataclass(frozen=True)
class DimensionEstimate:
    embedding_dim: int
    slope: float
    fit_window: tuple[float, float]
    fit_residual: float


@dataclass
class Plateau:
    value: float
    first_p: int
    last_p: int


@dataclass
class SaturationReport:
    """Outcome of scanning slopes over growing embedding sizes.

    ``plateaus`` lists every run of nearly equal slopes in p order; the first
    one drives ``plateau_value`` and ``recommended_p``. A second plateau is
    the hint that the first one may only reflect short-range smoothness.
    """

    saturated: bool
    plateau_value: float | None = None
    first_saturating_p: int | None = None
    recommended_p: int | None = None
    plateaus: list[Plateau] = field(default_factory=list)


def _as_points(points):
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidInputError("points must be a list of equal-length vectors")
    if X.shape[0] < 2:
        raise InvalidInputError("the correlation integral needs at least two points")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("points must be finite")
    return X


def _blocks(n):
    return [(s, min(s + _BLOCK, n)) for s in range(0, n - 1, _BLOCK)]


def _block_distances(X, lo, hi):
    """Distances from rows lo..hi-1 to every later row, flattened."""
    D = cdist(X[lo:hi], X[lo:])
    iu = np.triu_indices(hi - lo, k=1, m=D.shape[1])
    return D[iu]


def _map_blocks(fn, n, workers):
    blocks = _blocks(n)
    if workers and workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda b: fn(*b), blocks))
    return [fn(*b) for b in blocks]


def pair_distance_range(points, workers: int = 1) -> tuple[float, float]:
    """Smallest nonzero and largest pairwise Euclidean distance."""
    X = _as_points(points)

    def extremes(lo, hi):
        dist = _block_distances(X, lo, hi)
        nz = dist[dist > 0]
        return (nz.min() if nz.size else math.inf), (dist.max() if dist.size else 0.0)

    parts = _map_blocks(extremes, X.shape[0], workers)
    dmin = min(p[0] for p in parts)
    dmax = max(p[1] for p in parts)
    if dmax == 0 or not math.isfinite(dmin):
        raise ZeroSpreadError("all points coincide")
    return float(dmin), float(dmax)


def default_radii(points, n_radii: int = N_RADII, workers: int = 1) -> np.ndarray:
    """Log-spaced radii from the smallest nonzero to the largest pair distance."""
    dmin, dmax = pair_distance_range(points, workers)
    if dmin == dmax:
        return np.array([dmin])
    radii = np.geomspace(dmin, dmax, n_radii)
    radii[0], radii[-1] = dmin, dmax
    return radii


def correlation_integral(points, radii, workers: int = 1) -> CorrelationCurve:
    """C(r) = 2 / (n(n-1)) * #{t < t' : ||x_t - x_t'|| <= r} for every radius.

    Pair distances are computed block by block and binned against the sorted
    radii, so memory stays bounded and the integer counts do not depend on
    the worker count.
    """
    X = _as_points(points)
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size == 0 or np.any(radii <= 0):
        raise InvalidInputError("radii must be a non-empty list of positive values")
    if np.any(np.diff(radii) <= 0):
        raise InvalidInputError("radii must be strictly increasing")
    n = X.shape[0]

    def count(lo, hi):
        # bin k collects distances in (r_{k-1}, r_k]
        idx = np.searchsorted(radii, _block_distances(X, lo, hi), side="left")
        return np.bincount(idx, minlength=radii.size + 1)

    hist = sum(_map_blocks(count, n, workers))
    counts = np.cumsum(hist[:-1]).astype(np.int64)
    total = n * (n - 1) // 2
    with np.errstate(divide="ignore"):
        log_c = np.log(counts / total)
    return CorrelationCurve(X.shape[1], radii, log_c, counts, total)


def local_slopes(curve: CorrelationCurve) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference slopes of ln C vs ln r between consecutive usable radii.

    Returns (midpoint ln r, slope) over radii where 0 < C(r) < 1.
    """
    ok = (curve.counts > 0) & (curve.counts < curve.pair_count_total)
    lr, lc = curve.log_r[ok], curve.log_c[ok]
    if lr.size < 2:
        return np.empty(0), np.empty(0)
    return 0.5 * (lr[1:] + lr[:-1]), np.diff(lc) / np.diff(lr)


def _auto_window(lr, lc, tolerance, min_points):
    """Widest run of points whose local slopes stay within ``tolerance``
    (relative to their mean); ties go to the smaller radii."""
    slopes = np.diff(lc) / np.diff(lr)
    best = None
    k = slopes.size
    for i in range(k):
        lo_s = hi_s = slopes[i]
        total = 0.0
        for j in range(i, k):
            lo_s, hi_s = min(lo_s, slopes[j]), max(hi_s, slopes[j])
            total += slopes[j]
            mean = total / (j - i + 1)
            if mean <= 0 or hi_s - lo_s > tolerance * mean:
                break
            if j - i + 2 < min_points:
                continue
            width = lr[j + 1] - lr[i]
            if best is None or width > best[0] + 1e-12:
                best = (width, i, j + 1)
    if best is None:
        return 0, lr.size - 1
    return best[1], best[2]


def fit_dimension(
    curve: CorrelationCurve,
    window: tuple[float, float] | None = None,
    tolerance: float = WINDOW_TOLERANCE,
    min_points: int = 4,
    min_pairs: int = 10,
) -> DimensionEstimate:
    """Least-squares slope of ln C against ln r.

    With ``window=None`` the fit uses the widest stretch where the local
    slope varies by less than ``tolerance``; otherwise the closed
    ``(ln r low, ln r high)`` interval is used.
    """
    ok = (curve.counts >= min_pairs) & (curve.counts < curve.pair_count_total)
    lr, lc = curve.log_r[ok], curve.log_c[ok]
    if window is not None:
        lo, hi = window
        if not lo < hi:
            raise InvalidInputError("fit window must satisfy low < high")
        sel = (lr >= lo) & (lr <= hi)
        lr, lc = lr[sel], lc[sel]
        if lr.size < 2:
            raise InvalidInputError(f"fewer than two usable radii inside ln r window {window}")
        a, b = 0, lr.size - 1
    else:
        if lr.size < 2:
            raise InvalidInputError("fewer than two usable radii; widen the radius grid")
        a, b = _auto_window(lr, lc, tolerance, min_points)
    x, y = lr[a:b + 1], lc[a:b + 1]
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return DimensionEstimate(curve.embedding_dim, float(max(slope, 0.0)), (float(x[0]), float(x[-1])), resid)


def embed(series: TimeSeries, p: int, max_points: int = MAX_POINTS, seed: int = 0) -> np.ndarray:
    """Delay vectors of size p, uniformly subsampled to ``max_points`` rows."""
    X, _ = window_matrix(series, p)
    if X.shape[0] > max_points:
        rng = np.random.default_rng(seed)
        X = X[np.sort(rng.choice(X.shape[0], max_points, replace=False))]
    return X


def estimate_dimension(
    series: TimeSeries,
    p_values,
    radii=None,
    window: tuple[float, float] | None = None,
    max_points: int = MAX_POINTS,
    seed: int = 0,
    workers: int = 1,
    min_regressors: int = 100,
) -> list[tuple[CorrelationCurve, DimensionEstimate]]:
    """Correlation curve and fitted dimension for each embedding size in ``p_values``.

    ``radii=None`` picks a log-spaced grid per embedding size.
    """
    known = series.values[series.mask]
    if known.size == 0 or np.ptp(known) == 0:
        raise ZeroSpreadError("series has zero spread; the correlation dimension is undefined")
    p_values = [int(p) for p in p_values]
    if not p_values or min(p_values) < 1:
        raise InvalidInputError("embedding sizes must be positive")
    n_max = window_matrix(series, max(p_values))[0].shape[0]
    if n_max < min_regressors:
        raise InvalidInputError(
            f"only {n_max} regressors at p={max(p_values)}; need at least {min_regressors}"
        )
    out = []
    for p in p_values:
        X = embed(series, p, max_points, seed)
        r = default_radii(X, workers=workers) if radii is None else radii
        curve = correlation_integral(X, r, workers=workers)
        out.append((curve, fit_dimension(curve, window)))
    return out


def detect_saturation(estimates, tolerance: float = PLATEAU_TOLERANCE) -> SaturationReport:
    """Find runs of successive embedding sizes whose slopes differ by < ``tolerance``.

    Accepts DimensionEstimate objects or bare slopes (then p = 1, 2, ...).
    The recommended regressor size is ceil(2 * D + 1) with D rounded to one
    decimal.
    """
    est = list(estimates)
    if est and not isinstance(est[0], DimensionEstimate):
        est = [DimensionEstimate(i + 1, float(s), (0.0, 1.0), 0.0) for i, s in enumerate(est)]
    est.sort(key=lambda e: e.embedding_dim)
    if len(est) < 2:
        return SaturationReport(False)
    plateaus = []
    start = 0
    for i in range(1, len(est) + 1):
        if i < len(est) and abs(est[i].slope - est[i - 1].slope) < tolerance:
            continue
        if i - start >= 2:
            run = est[start:i]
            plateaus.append(Plateau(
                float(np.mean([e.slope for e in run])), run[0].embedding_dim, run[-1].embedding_dim
            ))
        start = i
    if not plateaus:
        return SaturationReport(False)
    first = plateaus[0]
    return SaturationReport(
        True,
        plateau_value=first.value,
        first_saturating_p=first.first_p,
        recommended_p=recommended_regressor_size(first.value),
        plateaus=plateaus,
    )


def recommended_regressor_size(dimension: float) -> int:
    return max(1, math.ceil(2 * round(dimension, 1) + 1))
