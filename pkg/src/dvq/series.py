"""Scalar time series container, preprocessing transforms and regressor windows.

Time indices are stored 0-based; anything written to a report is converted
to 1-based time by the caller.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EmptyResultError, GapBoundaryError, InvalidInputError, SeriesZeroDivisionError

PREPROCESSINGS = ("none", "difference", "returns")


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Ordered scalar observations with a known/missing mask.

    ``values`` holds NaN wherever ``mask`` is False. Both arrays are
    read-only.
    """

    values: np.ndarray
    mask: np.ndarray
    name: str = "series"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 1 or values.size < 1:
            raise InvalidInputError("a series needs at least one value")
        if mask.shape != values.shape:
            raise InvalidInputError("mask and values differ in length")
        if not np.all(np.isfinite(values[mask])):
            raise InvalidInputError("known values must be finite")
        values = np.where(mask, values, np.nan)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))

    @classmethod
    def from_values(cls, values: Iterable, name: str = "series") -> "TimeSeries":
        """Build a series; ``None`` and NaN entries become missing."""
        vals = np.array([np.nan if v is None else float(v) for v in values], dtype=float)
        return cls(vals, np.isfinite(vals), name)

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values.tolist())

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values[self.mask], other.values[other.mask])
        )

    @property
    def n_known(self) -> int:
        return int(self.mask.sum())

    def with_missing(self, indices) -> "TimeSeries":
        """Copy of the series with extra indices flagged missing."""
        mask = self.mask.copy()
        mask[np.asarray(indices, dtype=int)] = False
        return TimeSeries(self.values, mask, self.name)

    def gaps(self) -> list[tuple[int, int]]:
        """Maximal runs of missing values as (0-based start, length)."""
        missing = np.concatenate([[False], ~self.mask, [False]]).astype(np.int8)
        edges = np.flatnonzero(np.diff(missing))
        return [(int(s), int(e - s)) for s, e in zip(edges[::2], edges[1::2])]


@dataclass(frozen=True, eq=False)
class Regressor:
    """Window of ``m`` consecutive known values ending at ``anchor_time``."""

    components: np.ndarray
    anchor_time: int

    def __post_init__(self):
        object.__setattr__(self, "components", _frozen(np.asarray(self.components, dtype=float)))


@dataclass(frozen=True, eq=False)
class Deformation:
    """``regressor(anchor_time + spacing) - regressor(anchor_time)``."""

    components: np.ndarray
    anchor_time: int
    spacing: int

    def __post_init__(self):
        object.__setattr__(self, "components", _frozen(np.asarray(self.components, dtype=float)))


# ---------------------------------------------------------------- transforms

def _check_len(series, what):
    if len(series) < 2:
        raise InvalidInputError(f"{what} needs a series of length >= 2")


def difference_transform(series: TimeSeries) -> TimeSeries:
    """x_d(t) = x(t+1) - x(t); missing if either operand is missing."""
    _check_len(series, "difference_transform")
    v, m = series.values, series.mask
    mask = m[1:] & m[:-1]
    out = np.where(mask, v[1:] - v[:-1], np.nan)
    return TimeSeries(out, mask, series.name + ":difference")


def returns_transform(series: TimeSeries) -> TimeSeries:
    """x_r(t) = (x(t+1) - x(t)) / x(t); missing if either operand is missing."""
    _check_len(series, "returns_transform")
    v, m = series.values, series.mask
    mask = m[1:] & m[:-1]
    zero = np.flatnonzero(mask & (v[:-1] == 0))
    if zero.size:
        raise SeriesZeroDivisionError(int(zero[0]) + 1)
    with np.errstate(invalid="ignore"):
        out = np.where(mask, (v[1:] - v[:-1]) / np.where(mask, v[:-1], 1.0), np.nan)
    return TimeSeries(out, mask, series.name + ":returns")


def _check_complete(series, what):
    if not series.mask.all():
        first = int(np.flatnonzero(~series.mask)[0])
        raise GapBoundaryError(f"{what}: missing value at t={first + 1} stops the reconstruction")


def inverse_difference(diff: TimeSeries, anchor: float) -> TimeSeries:
    """Cumulative-sum reconstruction; ``anchor`` is the value before the first difference."""
    _check_complete(diff, "inverse_difference")
    out = np.empty(len(diff) + 1)
    out[0] = anchor
    out[1:] = diff.values
    return TimeSeries(np.cumsum(out), np.ones(out.size, bool))


def inverse_returns(ret: TimeSeries, anchor: float) -> TimeSeries:
    """Multiplicative reconstruction x(t+1) = x(t) * (1 + x_r(t))."""
    if anchor == 0:
        raise InvalidInputError("inverse_returns needs a nonzero anchor")
    _check_complete(ret, "inverse_returns")
    out = np.empty(len(ret) + 1)
    out[0] = anchor
    out[1:] = 1.0 + ret.values
    return TimeSeries(np.cumprod(out), np.ones(out.size, bool))


def preprocess(series: TimeSeries, preprocessing: str) -> TimeSeries:
    if preprocessing == "none":
        return series
    if preprocessing == "difference":
        return difference_transform(series)
    if preprocessing == "returns":
        return returns_transform(series)
    raise InvalidInputError(f"unknown preprocessing {preprocessing!r}; use one of {PREPROCESSINGS}")


def invert_forecast(values: np.ndarray, anchor: float, preprocessing: str) -> np.ndarray:
    """Map forecast values back to the original scale along the last axis.

    ``anchor`` is the last known original value before the forecast; it is
    unused when no preprocessing was applied.
    """
    values = np.asarray(values, dtype=float)
    if preprocessing == "none":
        return values
    if preprocessing == "difference":
        return anchor + np.cumsum(values, axis=-1)
    if preprocessing == "returns":
        return anchor * np.cumprod(1.0 + values, axis=-1)
    raise InvalidInputError(f"unknown preprocessing {preprocessing!r}")


def context_length(p: int, d: int, preprocessing: str = "none") -> int:
    """Known original values needed right before a forecast origin."""
    return p + d - 1 + (preprocessing != "none")


# ---------------------------------------------------------------- windows

def _check_geometry(p, d):
    if int(p) != p or int(d) != d or p < 1 or d < 1:
        raise InvalidInputError(f"p and d must be positive integers, got p={p}, d={d}")


def window_matrix(series: TimeSeries, m: int) -> tuple[np.ndarray, np.ndarray]:
    """All length-``m`` windows made of known values.

    Returns ``(X, anchors)`` where row ``k`` of X ends at index ``anchors[k]``.
    """
    n = len(series)
    if m > n:
        return np.empty((0, m)), np.empty(0, dtype=int)
    ok = sliding_window_view(series.mask, m).all(axis=1)
    starts = np.flatnonzero(ok)
    X = sliding_window_view(series.values, m)[starts]
    return np.array(X), starts + m - 1


def pair_matrices(series: TimeSeries, m: int, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Regressors with a known ``d``-shifted successor and their deformations.

    Returns ``(X, Y, anchors)`` with ``Y = window(anchor + d) - window(anchor)``.
    """
    X, anchors = window_matrix(series, m)
    if X.shape[0] == 0:
        return X, np.empty((0, m)), anchors
    pos = np.full(len(series), -1)
    pos[anchors] = np.arange(anchors.size)
    target = anchors + d
    valid = target < len(series)
    valid[valid] = pos[target[valid]] >= 0
    src = np.flatnonzero(valid)
    dst = pos[target[valid]]
    return X[src], X[dst] - X[src], anchors[src]


def build_regressors(series: TimeSeries, p: int, d: int = 1) -> list[Regressor]:
    """Regressors of length p + d - 1; windows touching a missing value are skipped."""
    _check_geometry(p, d)
    X, anchors = window_matrix(series, p + d - 1)
    if X.shape[0] == 0:
        raise EmptyResultError(f"no run of {p + d - 1} consecutive known values")
    return [Regressor(x, int(a)) for x, a in zip(X, anchors)]


def build_deformations(series: TimeSeries, p: int, d: int = 1) -> list[tuple[Regressor, Deformation]]:
    """(regressor, deformation) pairs, each deformation tied to one regressor."""
    _check_geometry(p, d)
    X, Y, anchors = pair_matrices(series, p + d - 1, d)
    if X.shape[0] == 0:
        raise EmptyResultError("no regressor has a known d-shifted partner")
    return [
        (Regressor(x, int(a)), Deformation(y, int(a), d))
        for x, y, a in zip(X, Y, anchors)
    ]


def reverse_series(series: TimeSeries) -> TimeSeries:
    """Exact index reversal, mask included."""
    return TimeSeries(series.values[::-1], series.mask[::-1], series.name)


# ---------------------------------------------------------------- csv

def _parse_value(field_):
    s = field_.strip()
    if s == "" or s.lower() == "nan":
        return math.nan
    return float(s)


def parse_csv(text: str, name: str = "series") -> TimeSeries:
    """One value per line; optional header; empty field or ``NaN`` is missing.

    Lines starting with ``#`` are comments. With several columns the one
    headed ``value`` is read, or else the last one, so files such as
    ``time,value`` tables load directly.
    """
    values = []
    first = True
    col = None
    for row in csv.reader(io.StringIO(text)):
        if row and row[0].lstrip().startswith("#"):
            continue
        if not row:
            if first:
                continue
            values.append(math.nan)
            continue
        field = row[col if col is not None else -1]
        try:
            values.append(_parse_value(field))
        except ValueError:
            if first:
                first = False
                header = [h.strip().lower() for h in row]
                col = header.index("value") if "value" in header else None
                continue
            raise InvalidInputError(f"line {len(values) + 1}: cannot parse {field!r} as a number")
        except IndexError:
            raise InvalidInputError(f"line {len(values) + 1}: missing value column")
        first = False
    if not values:
        raise InvalidInputError("no values in input")
    return TimeSeries.from_values(values, name)


def read_csv(path, name: str | None = None) -> TimeSeries:
    path = Path(path)
    return parse_csv(path.read_text(), name or path.stem)


def format_float(x) -> str:
    x = float(x)
    return "NaN" if math.isnan(x) else repr(x)


def write_csv(series: TimeSeries, path, header: str = "value", comment: str | None = None):
    lines = []
    if comment:
        lines.append("# " + comment)
    lines.append(header)
    lines.extend(format_float(v) for v in series.values)
    Path(path).write_text("\n".join(lines) + "\n")
