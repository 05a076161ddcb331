"""One-dimensional self-organizing map ("string") used as a vector quantizer.

Training is the classical online Kohonen rule on a chain of units with a
Gaussian neighbourhood over chain distance. Two phases run back to back:
a short ordering phase with a wide, shrinking neighbourhood and a longer
convergence phase whose neighbourhood shrinks to the winner alone.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .errors import InvalidInputError

CODEBOOK_FORMAT = "dvq-som-codebook"
CODEBOOK_VERSION = 1


@dataclass(frozen=True)
class Phase:
    """One training phase; values decay linearly from start to end over
    ``passes`` sweeps through the data.

    ``radius_start=None`` means half the number of units. With
    ``rate_decay="inverse"`` the learning rate is 1/t, t counting updates
    from the start of the phase, and the rate fields are ignored.
    """

    passes: int
    radius_start: float | None
    radius_end: float
    rate_start: float
    rate_end: float
    rate_decay: str = "linear"


@dataclass(frozen=True)
class TrainSchedule:
    phases: tuple[Phase, ...] = (
        Phase(10, None, 1.0, 0.5, 0.05),
        Phase(40, 1.0, 0.0, 0.05, 0.01),
    )

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(Phase(**ph) for ph in data["phases"]))

    def to_dict(self):
        return {"phases": [asdict(ph) for ph in self.phases]}

    @classmethod
    def quick(cls, passes=5):
        """Shorter default-shaped schedule, handy for grid searches and tests."""
        return cls((Phase(max(1, passes // 4), None, 1.0, 0.5, 0.05),
                    Phase(passes, 1.0, 0.0, 0.05, 0.01)))

    @classmethod
    def running_mean(cls, passes=1):
        """Winner-only updates with a 1/t rate: online k-means."""
        return cls((Phase(passes, 0.0, 0.0, 1.0, 1.0, "inverse"),))


DEFAULT_SCHEDULE = TrainSchedule()


@dataclass(frozen=True, eq=False)
class Codebook:
    """Trained prototypes of a chain map, in chain order."""

    prototypes: np.ndarray
    schedule: TrainSchedule = DEFAULT_SCHEDULE
    seed: int | None = None
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        P = np.array(self.prototypes, dtype=float)
        if P.ndim != 2 or P.shape[0] < 1:
            raise InvalidInputError("a codebook needs at least one prototype vector")
        if not np.all(np.isfinite(P)):
            raise InvalidInputError("prototypes must be finite")
        P.setflags(write=False)
        object.__setattr__(self, "prototypes", P)

    @property
    def unit_count(self) -> int:
        return self.prototypes.shape[0]

    @property
    def input_dim(self) -> int:
        return self.prototypes.shape[1]

    def to_dict(self):
        return {
            "format": CODEBOOK_FORMAT,
            "version": CODEBOOK_VERSION,
            "prototypes": self.prototypes.tolist(),
            "schedule": self.schedule.to_dict(),
            "seed": self.seed,
            "train_meta": self.train_meta,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != CODEBOOK_FORMAT or data.get("version") != CODEBOOK_VERSION:
            raise InvalidInputError("not a version-1 dvq codebook")
        return cls(
            np.array(data["prototypes"], dtype=float),
            TrainSchedule.from_dict(data["schedule"]),
            data.get("seed"),
            dict(data.get("train_meta", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- distances

@numba.njit(cache=True)
def _sqdist_rows(X, P, out):
    # fixed component order so single and batched queries agree bit for bit
    n, m = X.shape
    k = P.shape[0]
    for a in range(n):
        for b in range(k):
            s = 0.0
            for c in range(m):
                t = X[a, c] - P[b, c]
                s += t * t
            out[a, b] = s


def squared_distances(X, P) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    P = np.ascontiguousarray(P, dtype=float)
    out = np.empty((X.shape[0], P.shape[0]))
    _sqdist_rows(X, P, out)
    return out


def _check_dim(codebook, X):
    if X.shape[-1] != codebook.input_dim:
        raise InvalidInputError(
            f"vector dimension {X.shape[-1]} does not match codebook dimension {codebook.input_dim}"
        )


def best_matching_units(codebook: Codebook, X) -> np.ndarray:
    """0-based index of the nearest prototype for each row (lowest index on ties)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_dim(codebook, X)
    return np.argmin(squared_distances(X, codebook.prototypes), axis=1)


def best_matching_unit(codebook: Codebook, v) -> int:
    """0-based index of the prototype nearest to ``v``."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise InvalidInputError("best_matching_unit expects a single vector")
    return int(best_matching_units(codebook, v[None, :])[0])


def quantize(codebook: Codebook, data) -> tuple[np.ndarray, float]:
    """Class index per vector and the mean squared quantization error."""
    X = np.atleast_2d(np.asarray(data, dtype=float))
    _check_dim(codebook, X)
    D = squared_distances(X, codebook.prototypes)
    idx = np.argmin(D, axis=1)
    return idx, float(D[np.arange(idx.size), idx].mean())


# ---------------------------------------------------------------- training

@numba.njit(cache=True)
def _run_phase(W, X, order, radius0, radius1, rate0, rate1, inverse):
    k, m = W.shape
    total = order.size
    for it in range(total):
        x = X[order[it]]
        frac = it / (total - 1) if total > 1 else 1.0
        radius = radius0 + (radius1 - radius0) * frac
        if inverse:
            rate = 1.0 / (it + 1)
        else:
            rate = rate0 + (rate1 - rate0) * frac
        best = 0
        best_d = np.inf
        for b in range(k):
            s = 0.0
            for c in range(m):
                t = x[c] - W[b, c]
                s += t * t
            if s < best_d:
                best_d = s
                best = b
        for b in range(k):
            g = abs(b - best)
            if radius <= 0.0:
                if g != 0:
                    continue
                h = 1.0
            else:
                h = np.exp(-(g * g) / (2.0 * radius * radius))
            step = rate * h
            for c in range(m):
                W[b, c] += step * (x[c] - W[b, c])


def initial_prototypes(X, unit_count, rng) -> np.ndarray:
    lo, hi = X.min(axis=0), X.max(axis=0)
    return lo + (hi - lo) * rng.random((unit_count, X.shape[1]))


def train(data, unit_count: int, schedule: TrainSchedule | None = None, seed: int = 0) -> Codebook:
    """Train a chain SOM with ``unit_count`` units on ``data`` (rows are vectors).

    Prototypes start uniformly inside the data's bounding box; every pass
    presents the data in a fresh seeded permutation. The result depends
    only on (data, unit_count, schedule, seed).
    """
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("SOM training needs a non-empty list of equal-length vectors")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("training data must be finite")
    unit_count = int(unit_count)
    if unit_count < 1:
        raise InvalidInputError("unit_count must be >= 1")
    if unit_count > X.shape[0]:
        warnings.warn(
            f"{unit_count} units for {X.shape[0]} vectors; some units will stay empty",
            stacklevel=2,
        )
    schedule = schedule or DEFAULT_SCHEDULE
    X = np.ascontiguousarray(X)
    rng = np.random.default_rng(seed)
    W = initial_prototypes(X, unit_count, rng)
    n = X.shape[0]
    radius = rate = 0.0
    for ph in schedule.phases:
        if ph.passes <= 0:
            continue
        order = np.concatenate([rng.permutation(n) for _ in range(ph.passes)])
        r0 = unit_count / 2.0 if ph.radius_start is None else float(ph.radius_start)
        inverse = ph.rate_decay == "inverse"
        _run_phase(W, X, order, r0, float(ph.radius_end), float(ph.rate_start), float(ph.rate_end), inverse)
        radius = float(ph.radius_end)
        rate = 1.0 / order.size if inverse else float(ph.rate_end)
    meta = {
        "epochs": int(sum(ph.passes for ph in schedule.phases)),
        "final_radius": radius,
        "final_rate": rate,
        "seed": seed,
    }
    return Codebook(W, schedule, seed, meta)
