"""Filling missing blocks with forward and backward DVQ forecasts.

For a gap with known values on both sides, the series is forecast one step
past the gap in each direction, each forecast is tilted linearly so that
its extra step lands on the known value, and the two tilted forecasts are
averaged. A gap at the end of the series keeps the plain forward mean.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dvq import DvqModel, fit, forecast
from .errors import InvalidInputError, UnfillableGapError
from .selection import Config, generate_gaps, mse
from .series import TimeSeries, context_length, reverse_series
from .som import TrainSchedule

__all__ = [
    "GapPrediction",
    "fill_gap",
    "fill_all",
    "fit_final",
    "corrected_path",
    "linear_correction",
    "reverse_series",
    "reversed_gap",
]


@dataclass
class GapPrediction:
    """Components of one gap's prediction; starts are 0-based."""

    gap: tuple[int, int]
    forward_mean: np.ndarray
    final: np.ndarray
    backward_mean: np.ndarray | None = None
    forward_corrected: np.ndarray | None = None
    backward_corrected: np.ndarray | None = None
    forward_correction_applied: bool = False
    backward_correction_applied: bool = False


def reversed_gap(gap, series_len):
    start, length = gap
    return series_len - start - length, length


def corrected_path(trajectory, true_value) -> np.ndarray:
    """Linearly corrected (h+1)-step trajectory whose last value is ``true_value``.

    Step k (1-based) moves by k/(h+1) of the end-point error.
    """
    traj = np.asarray(trajectory, dtype=float)
    if traj.ndim != 1 or traj.size < 1:
        raise InvalidInputError("trajectory must be a non-empty vector")
    h1 = traj.size
    w = np.arange(1, h1 + 1) / h1
    path = traj + w * (true_value - traj[-1])
    # weight 1: pred + (true - pred) is true; pin it against rounding
    path[-1] = true_value
    return path


def linear_correction(trajectory, true_value) -> np.ndarray:
    """The h corrected steps of an (h+1)-step trajectory (see corrected_path)."""
    return corrected_path(trajectory, true_value)[:-1]


def _refit(series, model, schedule, seed):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit(series, model.p, model.d, model.n1, model.n2, model.preprocessing, schedule, seed)


def fill_gap(
    model: DvqModel,
    series: TimeSeries,
    gap: tuple[int, int],
    n_sims: int = 100,
    seed: int = 0,
    backward_model: DvqModel | None = None,
    backward: str = "separate",
    schedule: TrainSchedule | None = None,
    workers: int = 1,
) -> GapPrediction:
    """Predict the values of ``gap`` = (0-based start, length).

    When the value right after the gap is known, the forward forecast runs
    one step further and is corrected against it. The backward direction
    needs p + d - 1 known values after that; its model is ``backward_model``
    if given, the forward model itself with ``backward="reuse"``, or else a
    fresh fit on the reversed series with the forward model's settings.
    """
    start, h = int(gap[0]), int(gap[1])
    n = len(series)
    if h < 1 or start < 0 or start + h > n:
        raise InvalidInputError(f"gap {gap} lies outside the series")
    need = context_length(model.p, model.d, model.preprocessing)
    if start < need or not series.mask[start - need:start].all():
        raise UnfillableGapError(f"gap at t={start + 1} has fewer than {need} known values before it")
    after = start + h
    has_next = after < n and bool(series.mask[after])
    fwd_seed, bwd_seed, fit_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(3))

    if not has_next:
        mean = forecast(model, series, h, n_sims, fwd_seed, end=start - 1, workers=workers).mean
        return GapPrediction((start, h), mean, mean.copy())

    fwd = forecast(model, series, h + 1, n_sims, fwd_seed, end=start - 1, workers=workers).mean
    fwd_corr = linear_correction(fwd, series.values[after])
    pred = GapPrediction((start, h), fwd[:h], fwd_corr, forward_corrected=fwd_corr,
                         forward_correction_applied=True)

    can_back = after + need <= n and series.mask[after:after + need].all() and start >= 1
    if not (can_back and series.mask[start - 1]):
        return pred
    rev = reverse_series(series)
    if backward_model is None:
        backward_model = model if backward == "reuse" else _refit(rev, model, schedule, fit_seed)
    r_start, _ = reversed_gap((start, h), n)
    bwd = forecast(backward_model, rev, h + 1, n_sims, bwd_seed, end=r_start - 1, workers=workers).mean
    bwd_corr = linear_correction(bwd, rev.values[r_start + h])
    pred.backward_mean = bwd[:h][::-1].copy()
    pred.backward_corrected = bwd_corr[::-1].copy()
    pred.backward_correction_applied = True
    pred.final = 0.5 * (pred.forward_corrected + pred.backward_corrected)
    return pred


def validation_mse(model: DvqModel, series: TimeSeries, gapsets, n_sims: int = 20, seed: int = 0) -> float:
    """Mean over gap sets of the forward-forecast MSE on the hidden values."""
    scores = []
    for gs in gapsets:
        punctured = series.with_missing(gs.indices())
        preds, truths = [], []
        for s, n in gs.gaps:
            preds.append(forecast(model, punctured, n, n_sims, seed + s, end=s - 1).mean)
            truths.append(series.values[s:s + n])
        scores.append(mse(np.concatenate(preds), np.concatenate(truths)))
    return float(np.mean(scores))


def fit_final(
    series: TimeSeries,
    config: Config,
    p: int = 3,
    restarts: int = 10,
    seed: int = 0,
    gapsets=None,
    schedule: TrainSchedule | None = None,
    n_sims: int = 20,
    n_validation_sets: int = 5,
    n_gaps: int = 15,
    gap_len: int = 20,
    fitter=None,
) -> DvqModel:
    """Train ``restarts`` models on all known data and keep the best one on
    the validation gap sets.

    The validation values are part of the training data here, so the
    selection is mildly optimistic. ``fitter(series, config, p, schedule,
    seed)`` replaces the default fit.
    """
    if restarts < 1:
        raise InvalidInputError("restarts must be >= 1")
    seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(restarts + 1)]
    if fitter is None:
        def fitter(s, c, p_, sch, sd):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return fit(s, p_, c.d, c.n1, c.n2, c.preprocessing, sch, sd)
    models = [fitter(series, config, p, schedule, s) for s in seeds[:restarts]]
    if restarts == 1:
        return models[0]
    if gapsets is None:
        ctx = context_length(p, config.d, config.preprocessing)
        gs_seeds = np.random.SeedSequence(seeds[-1]).generate_state(n_validation_sets)
        gapsets = [generate_gaps(len(series), series.gaps(), n_gaps, gap_len, int(s), ctx) for s in gs_seeds]
    scores = []
    for model in models:
        with np.errstate(over="ignore", invalid="ignore"):
            score = validation_mse(model, series, gapsets, n_sims, seeds[-1])
        scores.append(score if np.isfinite(score) else np.inf)
    return models[int(np.argmin(scores))]


@dataclass
class FillResult:
    completed: TimeSeries
    predictions: list[GapPrediction] = field(default_factory=list)


def fill_all(
    series: TimeSeries,
    config: Config,
    p: int = 3,
    n_sims: int = 100,
    restarts: int = 1,
    seed: int = 0,
    schedule: TrainSchedule | None = None,
    backward: str = "separate",
    workers: int = 1,
    n_validation_sets: int = 5,
) -> FillResult:
    """Fill every missing block of ``series``, in time order.

    One forward model is fit on the whole series and one backward model on
    its reversal. Filled values are not fed back into later gaps.
    """
    f_seed, b_seed, g_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(3))
    gaps = series.gaps()
    common = dict(p=p, restarts=restarts, schedule=schedule, n_validation_sets=n_validation_sets)
    fwd_model = fit_final(series, config, seed=f_seed, **common)
    bwd_model = None
    if backward == "separate" and any(s + n < len(series) for s, n in gaps):
        bwd_model = fit_final(reverse_series(series), config, seed=b_seed, **common)
    elif backward == "reuse":
        bwd_model = fwd_model
    values = np.array(series.values)
    preds = []
    for k, gap in enumerate(gaps):
        pred = fill_gap(fwd_model, series, gap, n_sims, g_seed + k, bwd_model, backward, schedule, workers)
        values[gap[0]:gap[0] + gap[1]] = pred.final
        preds.append(pred)
    completed = TimeSeries(values, np.isfinite(values), series.name)
    return FillResult(completed, preds)
