"""Double vector quantization model.

Regressors and their deformations are quantized by two independent string
SOMs. A row-stochastic matrix records, for every regressor class, how often
each deformation class followed it. Forecasting picks the regressor's
class, draws a deformation prototype from that class's row and adds it to
the regressor; the last ``d`` components of the sum are the new values.
"""
from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import EmptyResultError, InvalidInputError, UnfillableGapError
from .series import (
    PREPROCESSINGS,
    Regressor,
    TimeSeries,
    context_length,
    invert_forecast,
    pair_matrices,
    preprocess,
    window_matrix,
)
from .som import Codebook, TrainSchedule, best_matching_units, quantize, train

MODEL_FORMAT = "dvq-model"
MODEL_VERSION = 1
STRATEGIES = ("recursive", "block", "recursive_block")
DEFAULT_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True, eq=False)
class DvqModel:
    """Two codebooks linked by the deformation-given-regressor frequency matrix.

    ``counts[i, j]`` is the number of training pairs whose regressor fell in
    class i and whose deformation fell in class j; ``transition`` is its
    row-normalized version, with empty rows replaced by a uniform law.
    """

    regressor_codebook: Codebook
    deformation_codebook: Codebook
    transition: np.ndarray
    p: int
    d: int
    preprocessing: str = "none"
    counts: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        T = np.array(self.transition, dtype=float)
        T.setflags(write=False)
        object.__setattr__(self, "transition", T)
        m = self.p + self.d - 1
        if self.regressor_codebook.input_dim != m or self.deformation_codebook.input_dim != m:
            raise InvalidInputError(f"codebooks must have dimension p + d - 1 = {m}")
        if T.shape != (self.n1, self.n2):
            raise InvalidInputError("transition shape must be (n1, n2)")
        if self.preprocessing not in PREPROCESSINGS:
            raise InvalidInputError(f"unknown preprocessing {self.preprocessing!r}")

    @property
    def n1(self):
        return self.regressor_codebook.unit_count

    @property
    def n2(self):
        return self.deformation_codebook.unit_count

    @property
    def m(self):
        return self.p + self.d - 1

    @property
    def empty_rows(self) -> np.ndarray:
        if self.counts is None:
            return np.empty(0, dtype=int)
        return np.flatnonzero(self.counts.sum(axis=1) == 0)

    @cached_property
    def _cdf(self):
        return np.cumsum(self.transition, axis=1)

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "p": self.p,
            "d": self.d,
            "preprocessing": self.preprocessing,
            "seed": self.seed,
            "regressor_codebook": self.regressor_codebook.to_dict(),
            "deformation_codebook": self.deformation_codebook.to_dict(),
            "transition": self.transition.tolist(),
            "counts": None if self.counts is None else self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != MODEL_FORMAT or data.get("version") != MODEL_VERSION:
            raise InvalidInputError("not a version-1 dvq model file")
        counts = data.get("counts")
        return cls(
            Codebook.from_dict(data["regressor_codebook"]),
            Codebook.from_dict(data["deformation_codebook"]),
            np.array(data["transition"], dtype=float),
            int(data["p"]),
            int(data["d"]),
            data["preprocessing"],
            None if counts is None else np.array(counts, dtype=np.int64),
            data.get("seed"),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def transition_from_classes(reg_classes, def_classes, n1, n2):
    """Counts and row-normalized frequencies; empty rows become uniform."""
    counts = np.zeros((n1, n2), dtype=np.int64)
    np.add.at(counts, (np.asarray(reg_classes), np.asarray(def_classes)), 1)
    rows = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        T = np.where(rows > 0, counts / np.maximum(rows, 1), 1.0 / n2)
    return counts, T


def _sub_seeds(seed, n):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def fit(
    series: TimeSeries,
    p: int,
    d: int,
    n1: int,
    n2: int,
    preprocessing: str = "none",
    schedule: TrainSchedule | None = None,
    seed: int = 0,
) -> DvqModel:
    """Learn a model from the known values of ``series``.

    The regressor map is trained on every admissible regressor, the
    deformation map on every deformation; frequencies are counted over the
    (regressor, deformation) pairs.
    """
    work = preprocess(series, preprocessing)
    m = p + d - 1
    R, _ = window_matrix(work, m)
    X, Y, _ = pair_matrices(work, m, d)
    if X.shape[0] == 0:
        raise EmptyResultError("no (regressor, deformation) pair could be formed")
    if X.shape[0] < 10 * max(n1, n2):
        warnings.warn(
            f"only {X.shape[0]} training pairs for n1={n1}, n2={n2}; estimates will be noisy",
            stacklevel=2,
        )
    s_reg, s_def = _sub_seeds(seed, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        reg_cb = train(R, n1, schedule, s_reg)
        def_cb = train(Y, n2, schedule, s_def)
    reg_cls, _ = quantize(reg_cb, X)
    def_cls, _ = quantize(def_cb, Y)
    counts, T = transition_from_classes(reg_cls, def_cls, n1, n2)
    return DvqModel(reg_cb, def_cb, T, int(p), int(d), preprocessing, counts, int(seed))


# ---------------------------------------------------------------- prediction

def _components(regressor):
    v = regressor.components if isinstance(regressor, Regressor) else regressor
    return np.asarray(v, dtype=float)


def sample_classes(model: DvqModel, classes, uniforms) -> np.ndarray:
    """Inverse-CDF draw of a deformation class per (regressor class, uniform)."""
    cdf = model._cdf[classes]
    idx = (np.asarray(uniforms)[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, model.n2 - 1)


def _step(model, R, uniforms):
    k = best_matching_units(model.regressor_codebook, R)
    l = sample_classes(model, k, uniforms)
    return R + model.deformation_codebook.prototypes[l]


def predict_step(model: DvqModel, regressor, rng) -> np.ndarray:
    """Predicted regressor ``d`` steps ahead: x_t + y_l with l drawn from the
    row of x_t's class."""
    x = _components(regressor)
    if x.shape != (model.m,):
        raise InvalidInputError(f"regressor must have {model.m} components")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("regressor contains non-finite values")
    return _step(model, x[None, :], np.array([rng.random()]))[0]


def extract_scalars(predicted, d: int) -> np.ndarray:
    """The last ``d`` components: values for times t+1..t+d."""
    return np.asarray(predicted)[..., -d:]


def _check_strategy(model, h, strategy):
    if h < 1:
        raise InvalidInputError("horizon must be >= 1")
    if strategy not in STRATEGIES:
        raise InvalidInputError(f"unknown strategy {strategy!r}; use one of {STRATEGIES}")
    if strategy == "recursive" and model.d != 1:
        raise InvalidInputError("the recursive strategy needs a model with d = 1")
    if strategy == "block" and model.d != h:
        raise InvalidInputError(f"the block strategy needs d = h, got d={model.d}, h={h}")
    if h % model.d:
        raise InvalidInputError(f"horizon {h} is not a multiple of d = {model.d}")


def strategy_for(d: int, h: int) -> str:
    if d == 1:
        return "recursive"
    return "block" if d == h else "recursive_block"


def _chain(model, X0, n_steps, U):
    """Advance every row of X0 by n_steps predict steps; U has one uniform
    per (row, step)."""
    d = model.d
    R = np.array(X0, dtype=float)
    out = np.empty((R.shape[0], n_steps * d))
    for s in range(n_steps):
        pred = _step(model, R, U[:, s])
        new = extract_scalars(pred, d)
        out[:, s * d:(s + 1) * d] = new
        R = np.concatenate([R[:, d:], new], axis=1)
    return out


def simulate(model: DvqModel, seed_regressor, h: int, strategy: str, rng) -> np.ndarray:
    """One trajectory of ``h`` values on the model's working scale.

    Each step's extracted values are appended to the regressor window, which
    drops its oldest ``d`` values.
    """
    x = _components(seed_regressor)
    if x.shape != (model.m,) or not np.all(np.isfinite(x)):
        raise InvalidInputError(f"seed regressor must be {model.m} finite values")
    _check_strategy(model, h, strategy)
    n_steps = h // model.d
    U = np.array([[rng.random() for _ in range(n_steps)]])
    return _chain(model, x[None, :], n_steps, U)[0]


@dataclass(frozen=True, eq=False)
class ForecastEnsemble:
    """Monte-Carlo trajectories (n_sims x h) on the original scale."""

    trajectories: np.ndarray
    strategy: str
    seed: int
    quantile_levels: tuple[float, ...] = DEFAULT_QUANTILES

    @property
    def horizon(self) -> int:
        return self.trajectories.shape[1]

    @property
    def n_sims(self) -> int:
        return self.trajectories.shape[0]

    @property
    def mean(self) -> np.ndarray:
        # shifted by the first trajectory: identical rows give an exact mean
        ref = self.trajectories[0]
        return ref + (self.trajectories - ref).mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return (self.trajectories - self.trajectories[0]).std(axis=0)

    @property
    def quantiles(self) -> dict[float, np.ndarray]:
        return {q: np.quantile(self.trajectories, q, axis=0) for q in self.quantile_levels}


def trajectory_uniforms(seed: int, n_sims: int, n_steps: int) -> np.ndarray:
    """Uniform draws per trajectory; row i comes from the i-th child seed of
    ``seed`` and does not depend on n_sims or on how rows are batched."""
    children = np.random.SeedSequence(seed).spawn(n_sims)
    return np.array([np.random.default_rng(c).random(n_steps) for c in children]).reshape(n_sims, n_steps)


def monte_carlo(
    model: DvqModel,
    seed_regressor,
    h: int,
    strategy: str,
    n_sims: int = 100,
    seed: int = 0,
    anchor: float | None = None,
    workers: int = 1,
    quantile_levels=DEFAULT_QUANTILES,
) -> ForecastEnsemble:
    """``n_sims`` independent simulations, mapped back to the original scale.

    ``anchor`` is the last known original value; it is required when the
    model was fit on a preprocessed series.
    """
    x = _components(seed_regressor)
    if x.shape != (model.m,) or not np.all(np.isfinite(x)):
        raise InvalidInputError(f"seed regressor must be {model.m} finite values")
    _check_strategy(model, h, strategy)
    if n_sims < 1:
        raise InvalidInputError("n_sims must be >= 1")
    if model.preprocessing != "none" and anchor is None:
        raise InvalidInputError("an anchor value is needed to undo the preprocessing")
    n_steps = h // model.d
    U = trajectory_uniforms(seed, n_sims, n_steps)
    X0 = np.broadcast_to(x, (n_sims, model.m))
    if workers > 1 and n_sims > 1:
        chunks = np.array_split(np.arange(n_sims), min(workers, n_sims))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _chain(model, X0[c], n_steps, U[c]), chunks))
        work = np.concatenate(parts, axis=0)
    else:
        work = _chain(model, X0, n_steps, U)
    traj = invert_forecast(work, anchor, model.preprocessing)
    return ForecastEnsemble(traj, strategy, seed, tuple(quantile_levels))


def forecast_origin(model: DvqModel, series: TimeSeries, end: int) -> tuple[np.ndarray, float]:
    """Seed regressor (working scale) and anchor for a forecast after index ``end``.

    Uses the last p + d - 1 working values up to ``end``; all the original
    values involved must be known.
    """
    need = context_length(model.p, model.d, model.preprocessing)
    lo = end - need + 1
    if lo < 0 or not series.mask[lo:end + 1].all():
        raise UnfillableGapError(
            f"need {need} known values ending at t={end + 1} to seed a forecast"
        )
    window = TimeSeries(series.values[lo:end + 1], np.ones(need, bool))
    work = preprocess(window, model.preprocessing)
    return np.array(work.values), float(series.values[end])


def forecast(
    model: DvqModel,
    series: TimeSeries,
    h: int,
    n_sims: int = 100,
    seed: int = 0,
    end: int | None = None,
    workers: int = 1,
    quantile_levels=DEFAULT_QUANTILES,
) -> ForecastEnsemble:
    """Forecast ``h`` values after index ``end`` (default: the last index).

    Horizons that are not a multiple of d are simulated up to the next
    multiple and truncated.
    """
    end = len(series) - 1 if end is None else end
    x, anchor = forecast_origin(model, series, end)
    h_sim = -(-h // model.d) * model.d
    strategy = strategy_for(model.d, h_sim)
    ens = monte_carlo(model, x, h_sim, strategy, n_sims, seed, anchor, workers, quantile_levels)
    if h_sim != h:
        ens = ForecastEnsemble(ens.trajectories[:, :h], strategy, seed, tuple(quantile_levels))
    return ens
