"""Sampling strategies behind one planning contract.

A ``Scheme`` lives for a whole task and may carry state across steps.  At the
start of each step it hands the simulator a ``Plan``, whose ``next_instant``
returns the intended capture instant (seconds from step start) given the
previous actual capture, or ``None`` once the plan is exhausted.  The simulator
then enforces the in-flight rule: a capture cannot happen before the previous
result returns.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .errors import ConfigError, ParameterError
from .optimizer import (
    DEFAULT_COVERAGE,
    EnergyParams,
    PenaltyWeights,
    constrained_ratio,
    energy_weights,
    rayleigh_mle,
    rayleigh_schedule,
)
from .timing import CalibrationCell, CalibrationTable, TimingModel


class SchemeKind(enum.Enum):
    GREEDY = "greedy"
    ORACLE = "oracle"
    PERIODIC = "periodic"
    CDF = "cdf"
    APERIODIC_SAMPLES = "aperiodic-samples"
    APERIODIC_ENERGY = "aperiodic-energy"

    @classmethod
    def parse(cls, value) -> "SchemeKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown scheme {value!r}; expected one of {names}") from None


DEFAULT_SCHEMES = (
    SchemeKind.GREEDY,
    SchemeKind.ORACLE,
    SchemeKind.CDF,
    SchemeKind.APERIODIC_SAMPLES,
    SchemeKind.APERIODIC_ENERGY,
)


def missed_instant_rule(intended: float | None, previous_return: float) -> float:
    """Capture at the intended instant unless the previous sample is still in flight."""
    if intended is None:
        return previous_return
    return max(intended, previous_return)


@dataclass(frozen=True)
class StepContext:
    rtt: float
    t_exec: float  # hidden state; only the oracle may read it


# -- plans ---------------------------------------------------------------------


class Plan:
    def next_instant(self, last_capture: float | None) -> float | None:
        raise NotImplementedError


class SinglePlan(Plan):
    def __init__(self, instant: float):
        self.instant = instant

    def next_instant(self, last_capture):
        return self.instant if last_capture is None else None


class SchedulePlan(Plan):
    """Fixed instants consumed in order, one per capture."""

    def __init__(self, instants: Sequence[float]):
        self.instants = tuple(instants)
        self._k = 0

    def next_instant(self, last_capture):
        if self._k >= len(self.instants):
            return None
        t = self.instants[self._k]
        self._k += 1
        return t


class PeriodicPlan(Plan):
    def __init__(self, period: float):
        self.period = period
        self._k = 0

    def next_instant(self, last_capture):
        self._k += 1
        return self._k * self.period


class CdfPlan(Plan):
    """Next capture one rate-period after the last, with rate set by the CDF."""

    def __init__(self, scheme: "CdfAdaptive", r_max: float):
        self.scheme = scheme
        self.r_max = r_max

    def next_instant(self, last_capture):
        t = 0.0 if last_capture is None else last_capture
        return t + 1.0 / self.scheme.rate(t, self.r_max)


# -- schemes -------------------------------------------------------------------


class Scheme:
    kind: SchemeKind

    def plan(self, ctx: StepContext) -> Plan:
        raise NotImplementedError

    def observe(self, ttf: float) -> None:
        """Receive the measured TTF of the step that just ended (or the seed TTF)."""

    def reset(self) -> None:
        pass

    @property
    def name(self) -> str:
        return self.kind.value


class Greedy(Scheme):
    """First capture at step start, then one as soon as each result returns."""

    kind = SchemeKind.GREEDY

    def plan(self, ctx):
        return SinglePlan(0.0)


class Oracle(Scheme):
    kind = SchemeKind.ORACLE

    def plan(self, ctx):
        return SinglePlan(ctx.t_exec)


class Periodic(Scheme):
    kind = SchemeKind.PERIODIC

    def __init__(self, w0: float = 1.0):
        if not w0 > 0:
            raise ParameterError("w0 must be positive")
        # uniform wait over a period averages period / 2
        self.period = 2.0 * w0

    def plan(self, ctx):
        return PeriodicPlan(self.period)


class CdfAdaptive(Scheme):
    """Rate ``r_min + phi * (r_max - r_min) * CDF(t)`` clamped to [r_min, r_max].

    CDF is a single Normal fitted to the pooled calibration corpus at startup.
    ``r_max`` defaults to 1/rtt per step, never below ``r_min``.
    """

    kind = SchemeKind.CDF

    def __init__(self, mu: float, sd: float, r_min: float = 0.5, phi: float = 1.5,
                 r_max: float | None = None):
        if not (sd > 0 and math.isfinite(sd)):
            raise ConfigError(f"degenerate Normal fit for the CDF scheme (sd={sd})")
        if not r_min > 0:
            raise ConfigError("r_min must be positive")
        if not phi > 0:
            raise ConfigError("phi must be positive")
        if r_max is not None and r_max < r_min:
            raise ConfigError(f"r_max {r_max} is below r_min {r_min}")
        self.mu, self.sd, self.r_min, self.phi, self.r_max = mu, sd, r_min, phi, r_max

    @classmethod
    def from_corpus(cls, corpus: Sequence[float] | CalibrationTable, **kw) -> "CdfAdaptive":
        if isinstance(corpus, CalibrationTable):
            corpus = corpus.corpus()
        x = np.asarray(corpus, dtype=float)
        if x.size < 2:
            raise ConfigError("CDF scheme needs at least two corpus samples")
        return cls(float(x.mean()), float(x.std(ddof=1)), **kw)

    def effective_r_max(self, rtt: float) -> float:
        r_max = self.r_max if self.r_max is not None else 1.0 / rtt
        return max(r_max, self.r_min)

    def rate(self, t: float, r_max: float) -> float:
        cdf = float(special.ndtr((t - self.mu) / self.sd))
        r = self.r_min + self.phi * (r_max - self.r_min) * cdf
        return min(max(r, self.r_min), r_max)

    def plan(self, ctx):
        return CdfPlan(self, self.effective_r_max(ctx.rtt))


def cell_sigma(cell: CalibrationCell) -> float:
    """Rayleigh scale for a calibration cell.

    Uses the MLE over the cell samples.  Cells without samples fall back to
    the same second-moment formula applied to the exGaussian parameters.
    """
    if len(cell.samples) >= 2:
        return rayleigh_mle(cell.samples)
    p = cell.params
    return math.sqrt((p.var + p.mean**2) / 2.0)


class Aperiodic(Scheme):
    """Closed-form Rayleigh schedule re-parameterized every step.

    An embedded timing model, fed the same TTFs as the user, picks the active
    calibration cell; its Rayleigh scale sets the schedule.  The sample-count
    flavor constrains the expected wait to ``w0``; the energy flavor weights
    samples and wait by their energy cost.
    """

    def __init__(
        self,
        kind: SchemeKind,
        model: TimingModel,
        w0: float = 1.0,
        energy: EnergyParams | None = None,
        coverage: float = DEFAULT_COVERAGE,
    ):
        if kind not in (SchemeKind.APERIODIC_SAMPLES, SchemeKind.APERIODIC_ENERGY):
            raise ParameterError(f"{kind} is not an aperiodic scheme")
        if kind is SchemeKind.APERIODIC_SAMPLES and not w0 > 0:
            raise ParameterError("w0 must be positive")
        if kind is SchemeKind.APERIODIC_ENERGY:
            if energy is None:
                raise ParameterError("energy flavor needs EnergyParams")
            self._energy_w = energy_weights(energy)
        self.kind = kind
        self.model = model
        self.w0 = w0
        self.energy = energy
        self.coverage = coverage
        self._sigma: dict[int, float] = {}
        self._instants: dict[int, tuple[float, ...]] = {}

    def sigma_hat(self) -> float:
        k = self.model.current_bin()
        if k not in self._sigma:
            self._sigma[k] = cell_sigma(self.model.current_cell())
        return self._sigma[k]

    def weights(self, sigma: float) -> PenaltyWeights:
        if self.kind is SchemeKind.APERIODIC_SAMPLES:
            return PenaltyWeights.from_ratio(constrained_ratio(self.w0, sigma))
        return self._energy_w

    def schedule(self) -> tuple[float, ...]:
        k = self.model.current_bin()
        if k not in self._instants:
            sigma = self.sigma_hat()
            self._instants[k] = rayleigh_schedule(
                sigma, self.weights(sigma), coverage=self.coverage).instants
        return self._instants[k]

    def plan(self, ctx):
        return SchedulePlan(self.schedule())

    def observe(self, ttf):
        self.model.push(ttf)

    def reset(self):
        self.model.reset()


def build_scheme(
    kind: SchemeKind | str,
    table: CalibrationTable,
    level,
    rtt: float,
    *,
    w0: float = 1.0,
    r_min: float = 0.5,
    phi: float = 1.5,
    tau_p: float = 0.25,
    p0: float = 0.015,
    pc: float = 0.045,
    variant="empirical",
) -> Scheme:
    """Construct a scheme with the experiment parameters for one (level, rtt) cell."""
    kind = SchemeKind.parse(kind)
    if kind is SchemeKind.GREEDY:
        return Greedy()
    if kind is SchemeKind.ORACLE:
        return Oracle()
    if kind is SchemeKind.PERIODIC:
        return Periodic(w0)
    if kind is SchemeKind.CDF:
        return CdfAdaptive.from_corpus(table, r_min=r_min, phi=phi)
    model = TimingModel(table, level, variant)
    if kind is SchemeKind.APERIODIC_SAMPLES:
        return Aperiodic(kind, model, w0=w0)
    try:
        ep = EnergyParams.from_rtt(rtt, tau_p=tau_p, p0=p0, pc=pc)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    return Aperiodic(kind, model, energy=ep)
