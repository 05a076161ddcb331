"""Random-gap cross-validation and grid search over model configurations.

Each repetition punches the same set of artificial gaps into the series for
every configuration, fits on what remains and scores the forecasts of the
hidden values by mean squared error on the original scale.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .dvq import fit, forecast
from .errors import DvqError, InvalidInputError, PlacementError
from .series import PREPROCESSINGS, TimeSeries, context_length, format_float
from .som import TrainSchedule

MAX_PLACEMENT_TRIES = 1000


@dataclass(frozen=True)
class GapSet:
    """Artificial gaps as (0-based start, length) pairs, sorted by start."""

    gaps: tuple[tuple[int, int], ...]
    seed: int

    def indices(self) -> np.ndarray:
        if not self.gaps:
            return np.empty(0, dtype=int)
        return np.concatenate([np.arange(s, s + n) for s, n in self.gaps])


def _overlaps(a, b):
    return a[0] < b[0] + b[1] and b[0] < a[0] + a[1]


def check_gaps(series_len, gaps, existing=(), min_context=0):
    """Raise if gaps overlap each other, the existing gaps, or leave the series."""
    for s, n in gaps:
        if s < min_context or s + n > series_len or n < 1:
            raise InvalidInputError(f"gap ({s}, {n}) does not fit in a series of {series_len}")
    for a, b in itertools.combinations(gaps, 2):
        if _overlaps(a, b):
            raise InvalidInputError(f"gaps {a} and {b} overlap")
    for a in gaps:
        for b in existing:
            if _overlaps(a, b):
                raise InvalidInputError(f"gap {a} overlaps existing gap {b}")


def generate_gaps(
    series_len: int,
    existing=(),
    n_gaps: int = 15,
    gap_len: int = 20,
    seed: int = 0,
    min_context: int = 0,
) -> GapSet:
    """Place ``n_gaps`` disjoint gaps of ``gap_len`` uniformly at random.

    Gaps never overlap each other or ``existing`` gaps, and each keeps at
    least ``min_context`` untouched values in front of it (also counted from
    the start of the series). Placement is sequential rejection sampling;
    after MAX_PLACEMENT_TRIES failed attempts for one gap the whole set is
    redrawn, and after as many redraws PlacementError is raised.
    """
    existing = [tuple(map(int, g)) for g in existing]
    rng = np.random.default_rng(seed)
    hi = series_len - gap_len
    if hi < min_context:
        raise PlacementError("series too short for a single gap")

    def blocked(s, placed):
        for b0, b1 in placed:
            if s < b0 + b1 + min_context and b0 < s + gap_len + min_context:
                return True
        return False

    # each new gap and its context form disjoint blocks outside the existing gaps
    if n_gaps * (gap_len + min_context) > series_len - sum(b1 for _, b1 in existing):
        raise PlacementError(
            f"cannot fit {n_gaps} gaps of {gap_len} with context {min_context} in {series_len} values"
        )
    for _ in range(MAX_PLACEMENT_TRIES):
        placed = list(existing)
        ok = True
        for _ in range(n_gaps):
            for _ in range(MAX_PLACEMENT_TRIES):
                s = int(rng.integers(min_context, hi + 1))
                if not blocked(s, placed):
                    placed.append((s, gap_len))
                    break
            else:
                ok = False
                break
        if ok:
            gaps = tuple(sorted(placed[len(existing):]))
            check_gaps(series_len, gaps, existing, min_context)
            return GapSet(gaps, seed)
    raise PlacementError(f"could not place {n_gaps} gaps of length {gap_len}")


def mse(predictions, truths) -> float:
    """Mean of squared differences."""
    y_hat = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(truths, dtype=float).ravel()
    if y.size != y_hat.size:
        raise InvalidInputError(f"length mismatch: {y_hat.size} predictions for {y.size} truths")
    if y.size == 0:
        raise InvalidInputError("mse needs at least one value")
    return float(np.mean((y - y_hat) ** 2))


# ---------------------------------------------------------------- grid search

@dataclass(frozen=True, order=True)
class Config:
    n1: int
    n2: int
    d: int
    preprocessing: str = "none"

    @property
    def key(self):
        return f"{self.preprocessing}/d={self.d}/n1={self.n1}/n2={self.n2}"


def config_grid(n1_values, n2_values, d_values=(1,), preprocessings=("none",)) -> list[Config]:
    for prep in preprocessings:
        if prep not in PREPROCESSINGS:
            raise InvalidInputError(f"unknown preprocessing {prep!r}")
    return [
        Config(int(n1), int(n2), int(d), prep)
        for prep in preprocessings
        for d in d_values
        for n1 in n1_values
        for n2 in n2_values
    ]


# the full search grid over prototype counts, block sizes and series variants
FULL_GRID = dict(
    n1_values=range(5, 101, 5),
    n2_values=range(5, 101, 5),
    d_values=(1, 2, 5, 10, 20),
    preprocessings=PREPROCESSINGS,
)


@dataclass
class ConfigResult:
    config: Config
    mses: list[float] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def mean_mse(self) -> float:
        if self.failures or not self.mses:
            return math.nan
        return float(np.mean(self.mses))


@dataclass
class ValidationReport:
    results: list[ConfigResult]
    n_repetitions: int
    gapsets: list[GapSet]
    seed: int

    @property
    def ranking(self) -> list[ConfigResult]:
        """Configurations with a finite mean MSE, best first; ties go to the
        smaller n1, then the smaller n2."""
        ok = [r for r in self.results if math.isfinite(r.mean_mse)]
        return sorted(ok, key=lambda r: (r.mean_mse, r.config.n1, r.config.n2, r.config.d,
                                         PREPROCESSINGS.index(r.config.preprocessing)))

    @property
    def best(self) -> ConfigResult | None:
        ranking = self.ranking
        return ranking[0] if ranking else None

    def best_per_group(self) -> list[ConfigResult]:
        """Best configuration for every (preprocessing, d) pair, like a summary table."""
        seen = {}
        for r in self.ranking:
            seen.setdefault((r.config.preprocessing, r.config.d), r)
        return [seen[k] for k in sorted(seen, key=lambda k: (PREPROCESSINGS.index(k[0]), k[1]))]

    def summary_csv(self, comment: str | None = None) -> str:
        out = io.StringIO()
        if comment:
            out.write("# " + comment + "\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["series_variant", "d", "n1", "n2", "mean_mse"])
        for r in self.best_per_group():
            c = r.config
            w.writerow([c.preprocessing, c.d, c.n1, c.n2, format_float(r.mean_mse)])
        return out.getvalue()

    def detail_csv(self, comment: str | None = None) -> str:
        out = io.StringIO()
        if comment:
            out.write("# " + comment + "\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["series_variant", "d", "n1", "n2", "repetition", "mse", "status"])
        for r in self.results:
            c = r.config
            if r.failures:
                w.writerow([c.preprocessing, c.d, c.n1, c.n2, "", "NaN", "failed: " + r.failures[0]])
                continue
            for k, v in enumerate(r.mses, start=1):
                w.writerow([c.preprocessing, c.d, c.n1, c.n2, k, format_float(v), "ok"])
        return out.getvalue()

    def to_dict(self):
        best = self.best
        return {
            "seed": self.seed,
            "n_repetitions": self.n_repetitions,
            "gapsets": [[[s + 1, n] for s, n in g.gaps] for g in self.gapsets],
            "best": None if best is None else asdict(best.config),
            "results": [
                {
                    **asdict(r.config),
                    "mse": [v if math.isfinite(v) else None for v in r.mses],
                    "mean_mse": r.mean_mse if math.isfinite(r.mean_mse) else None,
                    "failures": r.failures,
                }
                for r in self.results
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


def _config_seed(seed, rep, config):
    prep = PREPROCESSINGS.index(config.preprocessing)
    return int(np.random.SeedSequence([seed, rep, config.n1, config.n2, config.d, prep]).generate_state(1)[0])


def dvq_predictor(config: Config, train_series: TimeSeries, seed: int, *, p=3, n_sims=20,
                  schedule=None):
    """Fit a model on ``train_series`` and return ``predict(start, length)``
    giving the Monte-Carlo mean over a gap, forecast from its left edge."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = fit(train_series, p, config.d, config.n1, config.n2, config.preprocessing, schedule, seed)

    def predict(start, length):
        return forecast(model, train_series, length, n_sims, seed + start, end=start - 1).mean

    return predict


def _evaluate(args):
    config, series_values, series_mask, gapsets, seed, factory, factory_kwargs = args
    series = TimeSeries(series_values, series_mask)
    res = ConfigResult(config)
    for rep, gs in enumerate(gapsets):
        punctured = series.with_missing(gs.indices())
        try:
            predict = factory(config, punctured, _config_seed(seed, rep, config), **factory_kwargs)
            preds, truths = [], []
            for s, n in gs.gaps:
                preds.append(np.asarray(predict(s, n), dtype=float))
                truths.append(series.values[s:s + n])
            with np.errstate(over="ignore", invalid="ignore"):
                value = mse(np.concatenate(preds), np.concatenate(truths))
        except (DvqError, FloatingPointError, np.linalg.LinAlgError) as exc:
            res.failures.append(f"rep {rep + 1}: {exc}")
            res.mses.clear()
            break
        res.mses.append(value)
    return res


def cross_validate(
    series: TimeSeries,
    grid,
    n_repetitions: int = 20,
    seed: int = 0,
    *,
    p: int = 3,
    n_gaps: int = 15,
    gap_len: int = 20,
    n_sims: int = 20,
    schedule: TrainSchedule | None = None,
    workers: int = 1,
    predictor_factory: Callable | None = None,
) -> ValidationReport:
    """Score every configuration of ``grid`` on ``n_repetitions`` random gap sets.

    All configurations share the gap set of a repetition. Gap starts keep
    enough known context for the largest configuration. ``predictor_factory``
    replaces the default DVQ fit; it is called as
    ``factory(config, punctured_series, seed, **kwargs)`` and must return a
    ``predict(start, length)`` callable (module-level when workers > 1).
    """
    grid = list(grid)
    if not grid:
        raise InvalidInputError("empty configuration grid")
    context = max(context_length(p, c.d, c.preprocessing) for c in grid)
    existing = series.gaps()
    gapsets = [
        generate_gaps(len(series), existing, n_gaps, gap_len, int(s), context)
        for s in np.random.SeedSequence(seed).generate_state(n_repetitions)
    ]
    if predictor_factory is None:
        factory, kwargs = dvq_predictor, {"p": p, "n_sims": n_sims, "schedule": schedule}
    else:
        factory, kwargs = predictor_factory, {}
    jobs = [(c, np.array(series.values), np.array(series.mask), gapsets, seed, factory, kwargs) for c in grid]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate, jobs))
    else:
        results = [_evaluate(j) for j in jobs]
    return ValidationReport(results, n_repetitions, gapsets, seed)
