"""Optimal aperiodic sampling under a penalty ``alpha * E[S] + beta * E[W]``.

The instantaneous sampling rate r(t) places one sample per unit of area under
it.  Minimizing the penalty with the calculus of variations gives

    r*(t) = sqrt(beta * f(t) / (2 * alpha * (1 - F(t))))

which, for Rayleigh(sigma) execution times, integrates to the closed-form
schedule ``t_n = (3 * sigma * sqrt(alpha / (2 * beta)))**(2/3) * n**(2/3)``.

The closed form rests on approximating the wait within an interval as half the
interval.  ``exact_penalty`` evaluates a schedule without that approximation and
``brute_force_schedule`` finds the exact optimum over a time grid; together they
bound how far the closed form is from optimal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special, stats

from .errors import (
    CoverageError,
    DomainError,
    ModelConsistencyError,
    NumericalError,
    ParameterError,
    ResourceError,
)
from .timing import ExGaussianParams

GAMMA_3_4 = math.gamma(0.75)
# E[W] = WAIT_CONSTANT * sqrt(alpha * sigma / beta) under r* for Rayleigh(sigma)
WAIT_CONSTANT = GAMMA_3_4 / math.sqrt(2.0 * math.sqrt(2.0))
# alpha / beta = RATIO_CONSTANT * w0**2 / sigma makes that wait equal w0
RATIO_CONSTANT = 2.0 * math.sqrt(2.0) / GAMMA_3_4**2

DEFAULT_COVERAGE = 1e-6
QUAD_EPSREL = 1e-10


@dataclass(frozen=True)
class PenaltyWeights:
    alpha: float
    beta: float
    c: float = 0.0

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ParameterError(f"alpha must be positive and finite, got {self.alpha}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ParameterError(f"beta must be positive and finite, got {self.beta}")
        if not math.isfinite(self.c):
            raise ParameterError("c must be finite")

    @property
    def ratio(self) -> float:
        return self.alpha / self.beta

    @classmethod
    def from_ratio(cls, ratio: float, beta: float = 1.0) -> "PenaltyWeights":
        return cls(ratio * beta, beta)


@dataclass(frozen=True)
class EnergyParams:
    """Idle/communication power (W) and processing/two-way communication delay (s)."""

    p0: float = 0.015
    pc: float = 0.045
    tau_p: float = 0.25
    tau_c: float = 0.05

    def __post_init__(self):
        if not self.p0 > 0:
            raise ParameterError(f"idle power must be positive, got {self.p0}")
        # pc == p0 is accepted for step_energy but rejected by energy_weights
        if not self.pc >= self.p0:
            raise ParameterError(f"communication power {self.pc} is below idle power {self.p0}")
        if not (self.tau_p >= 0 and self.tau_c >= 0):
            raise ParameterError("delays must be non-negative")

    @classmethod
    def from_rtt(cls, rtt: float, tau_p: float = 0.25, p0: float = 0.015, pc: float = 0.045):
        """Split a round-trip time into processing and communication delay."""
        tau_c = rtt - tau_p
        if not tau_c > 0:
            raise ParameterError(f"rtt {rtt} must exceed the processing delay {tau_p}")
        return cls(p0=p0, pc=pc, tau_p=tau_p, tau_c=tau_c)

    @property
    def rtt(self) -> float:
        return self.tau_p + self.tau_c


# -- lifetime distributions -------------------------------------------------


class LifetimeDistribution:
    """Execution-time distribution on t >= 0.

    Subclasses provide vectorized ``pdf``, ``cdf`` and ``ccdf``.  The other
    methods have generic numerical fallbacks.
    """

    name = "lifetime"

    def pdf(self, t):
        raise NotImplementedError

    def cdf(self, t):
        raise NotImplementedError

    def ccdf(self, t):
        return 1.0 - self.cdf(t)

    def hazard(self, t):
        return self.pdf(t) / self.ccdf(t)

    @property
    def mean(self) -> float:
        val, _ = integrate.quad(lambda t: float(self.ccdf(t)), 0, self.upper(1e-15),
                                epsrel=QUAD_EPSREL, limit=200)
        return val

    def upper(self, eps: float) -> float:
        """Smallest-ish t with ccdf(t) <= eps, found by doubling then bisection."""
        hi = 1.0
        while self.ccdf(hi) > eps:
            hi *= 2.0
            if hi > 1e9:
                raise NumericalError("distribution tail does not decay")
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.ccdf(mid) > eps:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-12 * hi:
                break
        return hi

    def integrated_cdf(self, t):
        """``int_0^t F(x) dx`` for each element of ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        order = np.argsort(t)
        out = np.empty_like(t)
        acc, prev = 0.0, 0.0
        for idx in order:
            x = t[idx]
            if x > prev:
                piece, err = integrate.quad(lambda s: float(self.cdf(s)), prev, x,
                                            epsrel=QUAD_EPSREL, limit=200)
                acc += piece
                prev = x
            out[idx] = acc
        return out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Rayleigh(LifetimeDistribution):
    sigma: float
    name = "rayleigh"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"Rayleigh sigma must be positive, got {self.sigma}")

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, t / self.sigma**2 * np.exp(-t * t / (2 * self.sigma**2)), 0.0)

    def cdf(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return -np.expm1(-t * t / (2 * self.sigma**2))

    def ccdf(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return np.exp(-t * t / (2 * self.sigma**2))

    def hazard(self, t):
        return np.asarray(t, dtype=float) / self.sigma**2

    @property
    def mean(self) -> float:
        return self.sigma * math.sqrt(math.pi / 2)

    def upper(self, eps: float) -> float:
        return self.sigma * math.sqrt(2.0 * math.log(1.0 / eps))

    def integrated_cdf(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        s = self.sigma
        return t - s * math.sqrt(math.pi / 2) * special.erf(t / (s * math.sqrt(2.0)))

    def sample(self, rng, size):
        return rng.rayleigh(self.sigma, size)


@dataclass(frozen=True)
class ExGaussianLifetime(LifetimeDistribution):
    params: ExGaussianParams
    name = "exgaussian"

    def _dist(self):
        p = self.params
        return stats.exponnorm(p.tau / p.sigma, loc=p.mu, scale=p.sigma)

    def pdf(self, t):
        return self._dist().pdf(t)

    def cdf(self, t):
        return self._dist().cdf(t)

    def ccdf(self, t):
        return self._dist().sf(t)

    def sample(self, rng, size):
        p = self.params
        return rng.normal(p.mu, p.sigma, size) + rng.exponential(p.tau, size)


@dataclass(frozen=True)
class Empirical(LifetimeDistribution):
    """Gaussian-kernel smoothing of observed execution times (Silverman bandwidth)."""

    samples: tuple[float, ...]
    bandwidth: float | None = None
    name = "empirical"
    _x: np.ndarray = field(init=False, repr=False, compare=False)
    _h: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.size < 2 or np.any(x <= 0):
            raise ParameterError("empirical distribution needs >= 2 positive samples")
        h = self.bandwidth or 1.06 * x.std(ddof=1) * x.size ** (-0.2)
        if not h > 0:
            raise ParameterError("degenerate empirical sample")
        object.__setattr__(self, "_x", x)
        object.__setattr__(self, "_h", float(h))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        z = (t[..., None] - self._x) / self._h
        return np.exp(-0.5 * z * z).mean(axis=-1) / (self._h * math.sqrt(2 * math.pi))

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return special.ndtr((t[..., None] - self._x) / self._h).mean(axis=-1)

    def ccdf(self, t):
        t = np.asarray(t, dtype=float)
        return special.ndtr((self._x - t[..., None]) / self._h).mean(axis=-1)

    def sample(self, rng, size):
        return rng.choice(self._x, size) + rng.normal(0, self._h, size)


# -- schedules --------------------------------------------------------------


@dataclass(frozen=True)
class SamplingSchedule:
    """Ascending capture instants t_1 < t_2 < ...; t_0 = 0 is implicit."""

    instants: tuple[float, ...]

    def __post_init__(self):
        inst = tuple(float(t) for t in self.instants)
        if inst and inst[0] <= 0:
            raise ParameterError("schedule instants must be positive")
        if any(b <= a for a, b in zip(inst, inst[1:])):
            raise ParameterError("schedule instants must be strictly ascending")
        object.__setattr__(self, "instants", inst)

    def __len__(self):
        return len(self.instants)

    def __iter__(self):
        return iter(self.instants)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.instants, dtype=float)

    def uncovered(self, dist: LifetimeDistribution) -> float:
        if not self.instants:
            return 1.0
        return float(dist.ccdf(self.instants[-1]))


def periodic_schedule(period: float, horizon: float) -> SamplingSchedule:
    if not period > 0:
        raise ParameterError("period must be positive")
    n = int(math.ceil(horizon / period))
    return SamplingSchedule(tuple(period * np.arange(1, n + 1)))


def rayleigh_scale(sigma: float, w: PenaltyWeights) -> float:
    """First instant of the closed-form Rayleigh schedule; t_n = t_1 * n**(2/3)."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return (3.0 * sigma * math.sqrt(w.alpha / (2.0 * w.beta))) ** (2.0 / 3.0)


def rayleigh_schedule(
    sigma: float,
    w: PenaltyWeights,
    count: int | None = None,
    coverage: float = DEFAULT_COVERAGE,
) -> SamplingSchedule:
    """Closed-form instants for Rayleigh(sigma) execution times.

    With ``count=None`` instants are generated until the uncovered mass drops
    to ``coverage`` or below.
    """
    t1 = rayleigh_scale(sigma, w)
    if count is None:
        t_end = sigma * math.sqrt(2.0 * math.log(1.0 / coverage))
        count = max(1, math.ceil((t_end / t1) ** 1.5))
        # guard the rounding of the power
        while t1 * count ** (2.0 / 3.0) < t_end:
            count += 1
    if count < 0 or int(count) != count:
        raise ParameterError(f"count must be a non-negative integer, got {count}")
    n = np.arange(1, int(count) + 1, dtype=float)
    return SamplingSchedule(tuple(t1 * n ** (2.0 / 3.0)))


# -- rates and analytic expectations ----------------------------------------


class OptimalRate:
    """``r*(t) = sqrt(beta * f(t) / (2 * alpha * (1 - F(t))))`` in hertz."""

    def __init__(self, dist: LifetimeDistribution, w: PenaltyWeights):
        self.dist = dist
        self.w = w

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(self.dist.ccdf(t_arr) <= 0):
            raise DomainError(f"r*(t) is undefined where the survival function is zero (t={t})")
        val = np.sqrt(self.w.beta * self.dist.hazard(t_arr) / (2.0 * self.w.alpha))
        return float(val) if val.ndim == 0 else val


def optimal_rate(dist: LifetimeDistribution, w: PenaltyWeights) -> OptimalRate:
    return OptimalRate(dist, w)


def constant_rate(rate: float) -> Callable:
    if not rate > 0:
        raise ParameterError("rate must be positive")
    return lambda t: rate + 0.0 * np.asarray(t, dtype=float)


def _quad(fn, a, b, what):
    val, err = integrate.quad(fn, a, b, epsrel=QUAD_EPSREL, epsabs=0.0, limit=500)
    if not math.isfinite(val) or err > max(1e-6 * abs(val), 1e-12):
        raise NumericalError(f"{what}: quadrature did not converge (value {val}, error {err})")
    return val


def unit_mass_check(schedule: SamplingSchedule, rate: Callable) -> np.ndarray:
    """Area under ``rate`` over each inter-instant interval, starting from t_0 = 0."""
    edges = (0.0,) + schedule.instants
    return np.array([
        _quad(lambda t: float(rate(t)), a, b, f"interval [{a:.6g}, {b:.6g}]")
        for a, b in zip(edges, edges[1:])
    ])


def constrained_ratio(w0: float, sigma: float) -> float:
    """alpha/beta that makes the closed-form expected wait equal ``w0``."""
    if not (w0 > 0 and sigma > 0):
        raise ParameterError("w0 and sigma must be positive")
    return RATIO_CONSTANT * w0**2 / sigma


def expected_wait_closed_form(sigma: float, w: PenaltyWeights) -> float:
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    return WAIT_CONSTANT * math.sqrt(w.alpha * sigma / w.beta)


def expected_wait_numeric(dist: LifetimeDistribution, rate: Callable) -> float:
    """``int f(t) / (2 r(t)) dt`` over the support."""
    upper = dist.upper(1e-14)

    def integrand(t):
        r = float(rate(t))
        if not r > 0:
            raise NumericalError(f"rate is not positive at t={t}")
        return float(dist.pdf(t)) / (2.0 * r)

    return _quad(integrand, 0.0, upper, "expected wait")


def expected_samples_numeric(dist: LifetimeDistribution, rate: Callable) -> float:
    """Expected area under ``rate`` up to the completion instant.

    Evaluated in the integrated-by-parts form ``int r(t) (1 - F(t)) dt``, which
    equals the nested ``int (int_0^t r) f(t) dt``.
    """
    upper = dist.upper(1e-14)
    return _quad(lambda t: float(rate(t)) * float(dist.ccdf(t)), 0.0, upper, "expected samples")


# -- exact evaluation --------------------------------------------------------


@dataclass(frozen=True)
class Penalty:
    e_s: float
    e_w: float
    penalty: float


def exact_moments(schedule: SamplingSchedule, dist: LifetimeDistribution,
                  coverage: float = DEFAULT_COVERAGE) -> tuple[float, float]:
    """Exact expected sample count and wait of a schedule (no interval approximations).

    The wait excludes the final round trip.  Per-interval waits use
    ``int_a^b (F(t) - F(a)) dt``, in closed form for Rayleigh and by
    quadrature otherwise.
    """
    if schedule.uncovered(dist) > coverage:
        raise CoverageError(
            f"schedule leaves {schedule.uncovered(dist):.3g} of the mass uncovered "
            f"(limit {coverage:.3g})"
        )
    t = np.concatenate([[0.0], schedule.as_array()])
    F = dist.cdf(t)
    n = np.arange(1, t.size)
    e_s = float(np.sum(n * np.diff(F)))
    IF = dist.integrated_cdf(t)
    e_w = float(np.sum(np.diff(IF) - np.diff(t) * F[:-1]))
    return e_s, e_w


def exact_penalty(schedule: SamplingSchedule, dist: LifetimeDistribution, w: PenaltyWeights,
                  coverage: float = DEFAULT_COVERAGE) -> Penalty:
    e_s, e_w = exact_moments(schedule, dist, coverage)
    return Penalty(e_s, e_w, w.alpha * e_s + w.beta * e_w)


def brute_force_schedule(
    dist: LifetimeDistribution,
    w: PenaltyWeights,
    spacing: float,
    max_instants: int = 12,
    coverage: float = DEFAULT_COVERAGE,
    min_points: int = 200,
    budget: float = 2e8,
) -> SamplingSchedule:
    """Exact-penalty minimizer over ascending schedules on a uniform time grid.

    Dynamic program over (grid point, instants used).  The sample term is
    written as ``1 + sum_{n<N} (1 - F(t_n))`` so every transition cost is
    local; the last instant must leave at most ``coverage`` mass uncovered.
    """
    if not spacing > 0:
        raise ParameterError("grid spacing must be positive")
    if max_instants < 1:
        raise ParameterError("max_instants must be >= 1")
    t_end = dist.upper(coverage)
    g = int(math.ceil(t_end / spacing))
    if g < min_points:
        raise ParameterError(
            f"grid spacing {spacing} gives {g} points over the mass; need >= {min_points}"
        )
    size = g + 1
    if float(max_instants) * size * size > budget:
        raise ResourceError(f"{max_instants} x {size}^2 transitions exceed the budget {budget:.3g}")

    grid = spacing * np.arange(size)
    F = dist.cdf(grid)
    cc = dist.ccdf(grid)
    IF = dist.integrated_cdf(grid)
    # cost[i, j]: last instant at grid[i], next one at grid[j]
    wait = (IF[None, :] - IF[:, None]) - (grid[None, :] - grid[:, None]) * F[:, None]
    cost = w.beta * wait + w.alpha * cc[:, None]
    cost[np.tril_indices(size)] = np.inf

    value = cost[0].copy()
    value[0] = np.inf
    parents = []
    terminal = cc <= coverage
    best = (np.inf, None, None)
    for n in range(1, max_instants + 1):
        if n > 1:
            total = value[:, None] + cost
            total[0, :] = np.inf
            arg = np.argmin(total, axis=0)
            value = total[arg, np.arange(size)]
            parents.append(arg)
        cand = np.where(terminal, value, np.inf)
        j = int(np.argmin(cand))
        if cand[j] < best[0]:
            best = (float(cand[j]), n, j)
    if best[1] is None:
        raise ResourceError("no schedule within max_instants covers the mass")

    _, n, j = best
    path = [j]
    for arg in reversed(parents[: n - 1]):
        j = int(arg[j])
        path.append(j)
    return SamplingSchedule(tuple(grid[path[::-1]]))


# -- energy ------------------------------------------------------------------


def energy_weights(ep: EnergyParams, mean_exec: float = 0.0) -> PenaltyWeights:
    """Per-step energy as ``alpha * S + beta * W + c``.

    ``c = (E[T] + tau_p + tau_c) * p0`` does not depend on the schedule;
    pass ``mean_exec`` to include the E[T] part.
    """
    alpha = ep.tau_c * (ep.pc - ep.p0)
    if not alpha > 0:
        raise ParameterError(
            "energy weights are degenerate (alpha = 0): need tau_c > 0 and pc > p0"
        )
    return PenaltyWeights(alpha, ep.p0, (mean_exec + ep.tau_p + ep.tau_c) * ep.p0)


def step_energy(samples: int, t_exec: float, wait: float, ep: EnergyParams) -> float:
    """Joules spent by the client over one step.

    Communication power for ``samples * tau_c`` seconds, idle power for the
    rest of the span ``T + W + tau_p + tau_c``.
    """
    span = t_exec + wait + ep.tau_p + ep.tau_c
    comm = samples * ep.tau_c
    if comm > span * (1 + 1e-12):
        raise ModelConsistencyError(
            f"{samples} samples need {comm:.6g} s of communication, more than the step span {span:.6g} s"
        )
    return comm * ep.pc + (span - comm) * ep.p0


def rayleigh_mle(samples: Sequence[float]) -> float:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ParameterError("Rayleigh fit needs at least two samples")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ParameterError("Rayleigh fit needs positive samples")
    return float(math.sqrt(np.dot(x, x) / (2.0 * x.size)))
