"""Human step-execution timing model.

Execution times are drawn from per-cell distributions, where a cell is the pair
(neuroticism level, bin of the exponentially weighted rolling TTF).  The model
is fed the measured time-to-feedback of the previous step at the start of each
step and answers with an execution time for the new one.
"""

from __future__ import annotations

import bisect
import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .errors import CalibrationError, FitError, ParameterError, StateError

DEFAULT_HORIZON = 12
DEFAULT_DECAY = 0.7
DEFAULT_EDGES = (0.82, 1.53, 2.08, 2.67, 3.45, 4.13)

TAU_FLOOR = 1e-3
MIN_FIT_SAMPLES = 30


class NeuroticismLevel(enum.Enum):
    LOW = "low"
    HIGH = "high"

    @classmethod
    def from_score(cls, score: float) -> "NeuroticismLevel":
        """Bin a normalized neuroticism score: [0, 0.5) is low, [0.5, 1] is high."""
        if not 0.0 <= score <= 1.0:
            raise ParameterError(f"neuroticism score must lie in [0, 1], got {score}")
        return cls.LOW if score < 0.5 else cls.HIGH

    @classmethod
    def parse(cls, value) -> "NeuroticismLevel":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ParameterError(f"unknown neuroticism level {value!r}") from None


class Variant(enum.Enum):
    EMPIRICAL = "empirical"  # resample the cell's stored execution times
    FITTED = "fitted"  # draw from the cell's exGaussian parameters

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ParameterError(f"unknown timing model variant {value!r}") from None


def make_weights(horizon: int = DEFAULT_HORIZON, decay: float = DEFAULT_DECAY) -> np.ndarray:
    """Normalized exponentially decaying weights; element 0 weighs the most recent TTF."""
    if int(horizon) != horizon or horizon < 1:
        raise ParameterError(f"horizon must be a positive integer, got {horizon}")
    if not decay > 0:
        raise ParameterError(f"decay must be positive, got {decay}")
    raw = np.exp(-decay * np.arange(1, int(horizon) + 1))
    return raw / raw.sum()


class TtfHistory:
    """Rolling window of measured TTFs, oldest first.

    The first observation pads the whole window with copies of itself so that
    the weighted average is meaningful from the very first step.
    """

    def __init__(self, horizon: int = DEFAULT_HORIZON):
        if int(horizon) != horizon or horizon < 1:
            raise ParameterError(f"horizon must be a positive integer, got {horizon}")
        self.horizon = int(horizon)
        self._window: deque[float] = deque(maxlen=self.horizon)

    def push(self, ttf: float) -> None:
        ttf = float(ttf)
        if not ttf >= 0:
            raise ParameterError(f"TTF must be non-negative, got {ttf}")
        if not self._window:
            self._window.extend([ttf] * self.horizon)
        else:
            self._window.append(ttf)

    def clear(self) -> None:
        self._window.clear()

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(self._window)

    def __len__(self) -> int:
        return len(self._window)

    def __iter__(self):
        return iter(self._window)

    def __reversed__(self):
        return reversed(self._window)


def weighted_ttf(history: Iterable[float], weights: Sequence[float]) -> float:
    """Dot product of ``weights`` with the most recent TTFs (newest gets ``weights[0]``)."""
    recent = list(reversed(list(history)))
    if not recent:
        raise StateError("weighted TTF requested before any TTF was observed")
    return math.fsum(float(w) * x for w, x in zip(weights, recent))


@dataclass(frozen=True)
class BinTable:
    """Weighted-TTF bins; bin k covers (edges[k-1], edges[k]], the last is open."""

    edges: tuple[float, ...] = DEFAULT_EDGES

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if not edges:
            raise ParameterError("at least one bin edge is required")
        if any(e <= 0 for e in edges):
            raise ParameterError(f"bin edges must be positive: {edges}")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ParameterError(f"bin edges must be strictly ascending: {edges}")
        object.__setattr__(self, "edges", edges)

    @property
    def n_bins(self) -> int:
        return len(self.edges) + 1

    def index(self, wttf: float) -> int:
        if not wttf >= 0:
            raise ParameterError(f"weighted TTF must be non-negative, got {wttf}")
        # bisect_left puts a value equal to an edge into the lower bin
        return bisect.bisect_left(self.edges, wttf)


def bin_index(wttf: float, bins: BinTable = BinTable()) -> int:
    return bins.index(wttf)


@dataclass(frozen=True)
class ExGaussianParams:
    mu: float
    sigma: float
    tau: float

    def __post_init__(self):
        for name in ("mu", "sigma", "tau"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"exGaussian {name} must be finite")
        if self.sigma <= 0 or self.tau <= 0:
            raise ParameterError(f"exGaussian sigma and tau must be positive: {self}")

    @property
    def mean(self) -> float:
        return self.mu + self.tau

    @property
    def var(self) -> float:
        return self.sigma**2 + self.tau**2

    def logpdf(self, x) -> np.ndarray:
        return stats.exponnorm.logpdf(x, self.tau / self.sigma, loc=self.mu, scale=self.sigma)


def sample_exgaussian(params: ExGaussianParams, rng: np.random.Generator) -> float:
    """Normal plus exponential draw; non-positive results are redrawn."""
    while True:
        x = rng.normal(params.mu, params.sigma) + rng.exponential(params.tau)
        if x > 0:
            return float(x)


def _moment_start(x: np.ndarray) -> tuple[float, float, float]:
    mean = x.mean()
    var = x.var()
    std = math.sqrt(var)
    skew = float(stats.skew(x))
    tau = std * np.cbrt(skew / 2.0) if skew > 0 else TAU_FLOOR
    # keep sigma^2 = var - tau^2 strictly positive
    tau = min(max(tau, TAU_FLOOR), 0.95 * std)
    return mean - tau, math.sqrt(var - tau**2), tau


def fit_exgaussian(samples: Sequence[float]) -> ExGaussianParams:
    """Maximum-likelihood exGaussian fit.

    Nelder-Mead over (mu, log sigma, log(tau - floor)), started from the
    method-of-moments estimate. The result never has a lower likelihood than
    the starting point.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < MIN_FIT_SAMPLES:
        raise FitError(f"need at least {MIN_FIT_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise FitError("samples must be finite and strictly positive")
    if x.var() <= 0:
        raise FitError("samples have zero variance")

    mu0, sigma0, tau0 = _moment_start(x)

    def unpack(theta):
        return theta[0], math.exp(theta[1]), TAU_FLOOR + math.exp(theta[2])

    def nll(theta):
        mu, sigma, tau = unpack(theta)
        val = -np.sum(stats.exponnorm.logpdf(x, tau / sigma, loc=mu, scale=sigma))
        return val if np.isfinite(val) else np.inf

    start = np.array([mu0, math.log(sigma0), math.log(max(tau0 - TAU_FLOOR, 1e-12))])
    res = optimize.minimize(
        nll, start, method="Nelder-Mead",
        options={"xatol": 1e-7, "fatol": 1e-9, "maxiter": 4000},
    )
    theta = res.x if res.fun <= nll(start) else start
    mu, sigma, tau = unpack(theta)
    return ExGaussianParams(float(mu), float(sigma), float(tau))


@dataclass(frozen=True)
class CalibrationCell:
    params: ExGaussianParams
    samples: tuple[float, ...] = ()

    @property
    def mean(self) -> float:
        return self.params.mean


@dataclass(frozen=True)
class CalibrationTable:
    """Execution-time distributions per (neuroticism level, weighted-TTF bin)."""

    cells: Mapping[tuple[NeuroticismLevel, int], CalibrationCell]
    bins: BinTable = field(default_factory=BinTable)
    horizon: int = DEFAULT_HORIZON
    decay: float = DEFAULT_DECAY

    def problems(self) -> list[tuple[tuple[NeuroticismLevel, int], str]]:
        """Invariant violations as (cell key, message) pairs."""
        out = []
        for level in NeuroticismLevel:
            prev = None
            for k in range(self.bins.n_bins):
                key = (level, k)
                cell = self.cells.get(key)
                if cell is None:
                    out.append((key, f"missing cell ({level.value}, {k})"))
                    prev = None
                    continue
                if cell.mean <= 0:
                    out.append((key, f"cell ({level.value}, {k}) has non-positive mean {cell.mean:.6g}"))
                if any(s <= 0 for s in cell.samples):
                    out.append((key, f"cell ({level.value}, {k}) has non-positive samples"))
                if prev is not None and cell.mean < prev[1]:
                    out.append((key,
                        f"cell ({level.value}, {k}) mean {cell.mean:.6g} is below "
                        f"cell ({level.value}, {prev[0]}) mean {prev[1]:.6g}"
                    ))
                prev = (k, cell.mean)
        return out

    def validate(self) -> "CalibrationTable":
        issues = self.problems()
        if issues:
            raise CalibrationError("; ".join(msg for _, msg in issues))
        return self

    def cell(self, level: NeuroticismLevel, k: int) -> CalibrationCell:
        try:
            return self.cells[(level, k)]
        except KeyError:
            raise CalibrationError(f"no calibration cell for ({level.value}, {k})") from None

    def corpus(self) -> np.ndarray:
        """Every stored sample, pooled over levels and bins."""
        parts = [np.asarray(c.samples, dtype=float) for _, c in sorted(
            self.cells.items(), key=lambda kv: (kv[0][0].value, kv[0][1]))]
        return np.concatenate(parts) if parts else np.empty(0)

    def means(self) -> dict[tuple[NeuroticismLevel, int], float]:
        return {key: cell.mean for key, cell in self.cells.items()}


class TimingModel:
    """Stateful execution-time generator for one emulated user."""

    def __init__(
        self,
        table: CalibrationTable,
        level: NeuroticismLevel | str,
        variant: Variant | str = Variant.EMPIRICAL,
    ):
        self.table = table
        self.level = NeuroticismLevel.parse(level)
        self.variant = Variant.parse(variant)
        self.weights = make_weights(table.horizon, table.decay)
        self.bins = table.bins
        self.history = TtfHistory(table.horizon)
        self._w = self.weights.tolist()

    def reset(self) -> None:
        self.history.clear()

    def push(self, measured_ttf: float) -> None:
        self.history.push(measured_ttf)

    def weighted_ttf(self) -> float:
        if not len(self.history):
            raise StateError("weighted TTF requested before any TTF was observed")
        return math.fsum(w * x for w, x in zip(self._w, reversed(self.history)))

    def current_bin(self) -> int:
        return self.bins.index(self.weighted_ttf())

    def current_cell(self) -> CalibrationCell:
        return self.table.cell(self.level, self.current_bin())

    def draw(self, rng: np.random.Generator) -> float:
        cell = self.current_cell()
        if self.variant is Variant.FITTED:
            return sample_exgaussian(cell.params, rng)
        n = len(cell.samples)
        if n == 0:
            raise CalibrationError(
                f"cell ({self.level.value}, {self.current_bin()}) has no samples to resample"
            )
        return cell.samples[int(rng.random() * n)]

    def advance(self, measured_ttf: float, rng: np.random.Generator) -> float:
        """Feed the previous step's TTF and return the next execution time."""
        self.push(measured_ttf)
        return self.draw(rng)


class ReferenceModel:
    """First-order model: one exGaussian for every step, blind to TTF."""

    def __init__(self, params: ExGaussianParams):
        self.params = params

    def reset(self) -> None:
        pass

    def advance(self, measured_ttf: float, rng: np.random.Generator) -> float:
        return sample_exgaussian(self.params, rng)


def make_reference_model(corpus: Sequence[float] | CalibrationTable) -> ReferenceModel:
    if isinstance(corpus, CalibrationTable):
        corpus = corpus.corpus()
    if len(corpus) == 0:
        raise FitError("reference model needs a non-empty corpus")
    return ReferenceModel(fit_exgaussian(corpus))
