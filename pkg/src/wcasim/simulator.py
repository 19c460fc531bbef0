"""Discrete-event step simulation, RTT sweeps and lifetime studies.

One step: the user model draws an execution time T, the scheme proposes
capture instants, and the in-flight rule ``c_k = max(intended_k, c_{k-1} + rtt)``
turns them into actual captures.  The step ends with the first capture at or
after T; its result returns one RTT later.  The measured TTF (wait + rtt)
feeds both the user model and any model embedded in the scheme.

Random streams: every (scheme, level, rtt, rep) cell gets its own
``SeedSequence(master_seed, spawn_key=(crc32(key),))``, split into a timing
stream and a tag stream, so cells are independent, individually reproducible
and identical regardless of worker count.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, ModelConsistencyError, ParameterError
from .frames import FrameTagTable, FrameTraceEntry, generate_trace
from .optimizer import EnergyParams, step_energy
from .schemes import DEFAULT_SCHEMES, Scheme, SchemeKind, StepContext, build_scheme, missed_instant_rule
from .timing import CalibrationTable, NeuroticismLevel, TimingModel, Variant, make_reference_model

DEFAULT_RTTS = tuple(round(0.3 * k, 1) for k in range(1, 15))
METRICS = ("samples", "energy", "wait", "duration")
REFERENCES = (SchemeKind.ORACLE, SchemeKind.GREEDY, SchemeKind.CDF)
MAX_CAPTURES = 1_000_000


@dataclass(frozen=True)
class StepRecord:
    step: int
    exec_time: float
    wait: float
    ttf: float
    rtt: float
    samples: int
    energy: float
    duration: float
    tags: tuple[FrameTraceEntry, ...] | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    steps: int = 100
    reps: int = 100
    rtts: tuple[float, ...] = DEFAULT_RTTS
    tau_p: float = 0.25
    w0: float = 1.0
    r_min: float = 0.5
    phi: float = 1.5
    p0: float = 0.015
    pc: float = 0.045
    schemes: tuple[str, ...] = tuple(k.value for k in DEFAULT_SCHEMES)
    levels: tuple[str, ...] = ("low", "high")
    seed: int = 0
    variant: str = "empirical"
    emit_traces: bool = False
    # lifetime study
    lifetime_ttfs: tuple[float, ...] = tuple(np.linspace(0.0, 5.0, 25).tolist())
    lifetime_reps: int = 45
    lifetime_steps: int = 100

    def __post_init__(self):
        object.__setattr__(self, "rtts", tuple(float(r) for r in self.rtts))
        object.__setattr__(self, "schemes", tuple(SchemeKind.parse(s).value for s in self.schemes))
        object.__setattr__(self, "levels", tuple(NeuroticismLevel.parse(v).value for v in self.levels))
        object.__setattr__(self, "lifetime_ttfs", tuple(float(t) for t in self.lifetime_ttfs))
        Variant.parse(self.variant)
        for name, low in (("steps", 1), ("reps", 2), ("lifetime_reps", 2), ("lifetime_steps", 1)):
            if int(getattr(self, name)) < low:
                raise ConfigError(f"{name} must be >= {low}")
        if not self.rtts or min(self.rtts) <= 0:
            raise ConfigError("rtt grid must be non-empty and positive")
        bad = [r for r in self.rtts if not r - self.tau_p > 0]
        if bad:
            raise ConfigError(f"rtt values {bad} leave no communication delay (tau_p = {self.tau_p})")
        if not (self.w0 > 0 and self.r_min > 0 and self.phi > 0):
            raise ConfigError("w0, r_min and phi must be positive")
        if not self.pc > self.p0 > 0:
            raise ConfigError("need pc > p0 > 0")
        if any(t < 0 for t in self.lifetime_ttfs):
            raise ConfigError("lifetime TTFs must be non-negative")

    def energy_params(self, rtt: float) -> EnergyParams:
        return EnergyParams.from_rtt(rtt, tau_p=self.tau_p, p0=self.p0, pc=self.pc)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kw)

    def override(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# -- random streams ------------------------------------------------------------


def cell_key(*parts) -> str:
    return "/".join(f"{p:.6g}" if isinstance(p, float) else str(p) for p in parts)


def substreams(seed: int, *parts, n: int = 2) -> list[np.random.Generator]:
    """Independent generators for one cell: [timing, tags, ...]."""
    key = zlib.crc32(cell_key(*parts).encode())
    ss = np.random.SeedSequence(seed, spawn_key=(key,))
    return [np.random.default_rng(s) for s in ss.spawn(n)]


# -- step and task -------------------------------------------------------------


def run_step(
    human,
    scheme: Scheme,
    rtt: float,
    rng: np.random.Generator,
    measured_ttf: float,
    energy: EnergyParams | None = None,
    tag_table: FrameTagTable | None = None,
    tag_rng: np.random.Generator | None = None,
    step: int = 0,
) -> StepRecord:
    """Simulate one step after feeding ``measured_ttf`` (the previous step's TTF)."""
    if not rtt > 0:
        raise ParameterError("rtt must be positive")
    t_exec = human.advance(measured_ttf, rng)
    scheme.observe(measured_ttf)
    plan = scheme.plan(StepContext(rtt, t_exec))

    captures = []
    last = None
    while True:
        intended = plan.next_instant(last)
        if last is None:
            c = 0.0 if intended is None else intended
        else:
            # exhausted plans fall back to greedy
            c = missed_instant_rule(intended, last + rtt)
        captures.append(c)
        if c >= t_exec:
            break
        if len(captures) >= MAX_CAPTURES:
            raise ModelConsistencyError("step did not terminate")
        last = c

    wait = c - t_exec
    samples = len(captures)
    duration = t_exec + wait + rtt
    e = step_energy(samples, t_exec, wait, energy) if energy is not None else math.nan
    tags = None
    if tag_table is not None:
        tags = tuple(generate_trace(captures, t_exec, tag_table, tag_rng))
    return StepRecord(step, t_exec, wait, wait + rtt, rtt, samples, e, duration, tags)


def run_task(
    config: ExperimentConfig,
    table: CalibrationTable,
    scheme: str | SchemeKind,
    level: str | NeuroticismLevel,
    rtt: float,
    rep: int,
    tag_table: FrameTagTable | None = None,
) -> list[StepRecord]:
    """All steps of one repetition; model state persists across steps.

    The first step feeds TTF = rtt, which pads the fresh model histories.
    """
    kind = SchemeKind.parse(scheme)
    level = NeuroticismLevel.parse(level)
    rng, tag_rng = substreams(config.seed, kind.value, level.value, float(rtt), rep)
    human = TimingModel(table, level, config.variant)
    sch = build_scheme(kind, table, level, rtt, w0=config.w0, r_min=config.r_min,
                       phi=config.phi, tau_p=config.tau_p, p0=config.p0, pc=config.pc,
                       variant=config.variant)
    energy = config.energy_params(rtt)
    records = []
    ttf = rtt
    for step in range(config.steps):
        rec = run_step(human, sch, rtt, rng, ttf, energy, tag_table, tag_rng, step)
        records.append(rec)
        ttf = rec.ttf
    return records


RECORD_COLUMNS = ("exec_s", "wait_s", "ttf_s", "samples", "energy_j", "duration_s")


@dataclass
class CellResult:
    scheme: str
    level: str
    rtt: float
    data: np.ndarray  # (reps, steps, len(RECORD_COLUMNS))
    traces: list | None = None  # per rep, per step: tuple of FrameTraceEntry

    def rep_means(self) -> dict[str, np.ndarray]:
        cols = dict(zip(RECORD_COLUMNS, np.moveaxis(self.data, -1, 0)))
        return {
            "samples": cols["samples"].mean(axis=1),
            "energy": cols["energy_j"].mean(axis=1),
            "wait": cols["wait_s"].mean(axis=1),
            "duration": cols["duration_s"].mean(axis=1),
        }


def run_cell(config: ExperimentConfig, table: CalibrationTable, scheme: str, level: str,
             rtt: float, tag_table: FrameTagTable | None = None) -> CellResult:
    data = np.empty((config.reps, config.steps, len(RECORD_COLUMNS)))
    traces = [] if tag_table is not None else None
    for rep in range(config.reps):
        recs = run_task(config, table, scheme, level, rtt, rep, tag_table)
        data[rep] = [(r.exec_time, r.wait, r.ttf, r.samples, r.energy, r.duration) for r in recs]
        if traces is not None:
            traces.append([r.tags for r in recs])
    return CellResult(scheme, level, rtt, data, traces)


def _run_cell_args(args):
    return run_cell(*args)


# -- statistics ------------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    keys: tuple[tuple[str, object], ...]
    metric: str
    mean: float
    std: float
    n: int
    ci95_lo: float
    ci95_hi: float

    def key(self, name):
        return dict(self.keys)[name]


def t_interval(x: Sequence[float], level: float = 0.95) -> tuple[float, float, float, float]:
    """Mean, sample std and two-sided t confidence interval."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise ParameterError(f"need at least two observations per group, got {n}")
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    half = float(stats.t.ppf(0.5 + level / 2, n - 1)) * sd / math.sqrt(n)
    return mean, sd, mean - half, mean + half


def summarize(rows: Iterable[Mapping], keys: Sequence[str], metrics: Sequence[str]) -> list[SummaryRow]:
    """Group ``rows`` (mappings) by ``keys`` and summarize each metric.

    Groups come out in first-seen order.
    """
    groups: dict[tuple, list[Mapping]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for gkey, members in groups.items():
        for m in metrics:
            mean, sd, lo, hi = t_interval([r[m] for r in members])
            out.append(SummaryRow(tuple(zip(keys, gkey)), m, mean, sd, len(members), lo, hi))
    return out


@dataclass(frozen=True)
class PercentDiff:
    scheme: str
    reference: str
    keys: tuple[tuple[str, object], ...]
    metric: str
    pct: float
    ci95_lo: float
    ci95_hi: float


def percent_difference(x: Sequence[float], ref: Sequence[float], level: float = 0.95):
    """100 * (mean(x) - mean(ref)) / mean(ref) with a Welch t interval.

    The interval is the Welch interval of the difference in means scaled by
    the reference mean, treating the denominator as fixed.  Returns NaNs when
    the reference mean is zero.
    """
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    m_ref = float(ref.mean())
    if m_ref == 0:
        return math.nan, math.nan, math.nan
    diff = float(x.mean()) - m_ref
    va, vb = x.var(ddof=1) / x.size, ref.var(ddof=1) / ref.size
    se = math.sqrt(va + vb)
    if se == 0:
        half = 0.0
    else:
        dof = (va + vb) ** 2 / (va**2 / (x.size - 1) + vb**2 / (ref.size - 1))
        half = float(stats.t.ppf(0.5 + level / 2, dof)) * se
    scale = 100.0 / m_ref
    return diff * scale, (diff - half) * scale, (diff + half) * scale


# -- experiments -----------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cells: list[CellResult]
    summary: list[SummaryRow] = field(default_factory=list)
    diffs: list[PercentDiff] = field(default_factory=list)

    def cell(self, scheme, level, rtt) -> CellResult:
        for c in self.cells:
            if c.scheme == scheme and c.level == level and math.isclose(c.rtt, rtt):
                return c
        raise KeyError((scheme, level, rtt))

    def mean(self, scheme, level, rtt, metric) -> float:
        return float(self.cell(scheme, level, rtt).rep_means()[metric].mean())


def run_experiment(config: ExperimentConfig, table: CalibrationTable,
                   tag_table: FrameTagTable | None = None, workers: int = 1,
                   progress=None) -> ExperimentResult:
    """Full scheme x level x rtt x rep sweep with summaries and percent differences."""
    if config.emit_traces and tag_table is None:
        raise ConfigError("emit_traces needs a tag table")
    if not config.emit_traces:
        tag_table = None
    jobs = [(config, table, s, lv, rtt, tag_table)
            for s, lv, rtt in itertools.product(config.schemes, config.levels, config.rtts)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = []
            for cell in pool.map(_run_cell_args, jobs):
                cells.append(cell)
                if progress:
                    progress(len(cells), len(jobs))
    else:
        cells = []
        for job in jobs:
            cells.append(run_cell(*job))
            if progress:
                progress(len(cells), len(jobs))

    result = ExperimentResult(config, cells)
    rows = []
    for c in cells:
        means = c.rep_means()
        for rep in range(config.reps):
            row = {"scheme": c.scheme, "neuroticism": c.level, "rtt_s": c.rtt}
            row.update({m: float(means[m][rep]) for m in METRICS})
            rows.append(row)
    result.summary = summarize(rows, ("scheme", "neuroticism", "rtt_s"), METRICS)

    by_cell = {(c.scheme, c.level, c.rtt): c.rep_means() for c in cells}
    for (s, lv, rtt), means in by_cell.items():
        for ref in REFERENCES:
            if ref.value == s or (ref.value, lv, rtt) not in by_cell:
                continue
            ref_means = by_cell[(ref.value, lv, rtt)]
            for m in METRICS:
                pct, lo, hi = percent_difference(means[m], ref_means[m])
                result.diffs.append(PercentDiff(
                    s, ref.value, (("neuroticism", lv), ("rtt_s", rtt)), m, pct, lo, hi))
    return result


@dataclass
class LifetimeResult:
    config: ExperimentConfig
    rows: list[dict]  # model, ttf_s, rep, lifetime_s
    summary: list[SummaryRow]
    diffs: list[PercentDiff]

    def mean(self, model: str, ttf: float) -> float:
        vals = [r["lifetime_s"] for r in self.rows
                if r["model"] == model and math.isclose(r["ttf_s"], ttf)]
        return float(np.mean(vals))


REFERENCE_MODEL = "reference"


def lifetime_study(config: ExperimentConfig, table: CalibrationTable) -> LifetimeResult:
    """Task lifetimes under constant imposed TTFs; no sampling loop.

    Each step lasts exec + TTF.  Models are the realistic user model for each
    configured level and the TTF-blind reference fitted to the pooled corpus.
    """
    models = {lv: (lambda lv=lv: TimingModel(table, lv, config.variant)) for lv in config.levels}
    reference = make_reference_model(table)
    models[REFERENCE_MODEL] = lambda: reference
    rows = []
    for name, factory in models.items():
        for ttf in config.lifetime_ttfs:
            for rep in range(config.lifetime_reps):
                (rng,) = substreams(config.seed, "lifetime", name, ttf, rep, n=1)
                model = factory()
                total = math.fsum(model.advance(ttf, rng) + ttf for _ in range(config.lifetime_steps))
                rows.append({"model": name, "ttf_s": ttf, "rep": rep, "lifetime_s": total})
    summary = summarize(rows, ("model", "ttf_s"), ("lifetime_s",))
    diffs = []
    for name in config.levels:
        for ttf in config.lifetime_ttfs:
            x = [r["lifetime_s"] for r in rows if r["model"] == name and r["ttf_s"] == ttf]
            ref = [r["lifetime_s"] for r in rows if r["model"] == REFERENCE_MODEL and r["ttf_s"] == ttf]
            pct, lo, hi = percent_difference(x, ref)
            diffs.append(PercentDiff(name, REFERENCE_MODEL, (("ttf_s", ttf),), "lifetime_s", pct, lo, hi))
    return LifetimeResult(config, rows, summary, diffs)


# -- CSV -----------------------------------------------------------------------


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(value).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if v == 0:
            return "0"
        return format(v, ".6g")
    return str(value)


def write_csv(header: Sequence[str], rows: Iterable[Sequence], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])


def records_csv(result: ExperimentResult, stream) -> None:
    header = ("scheme", "neuroticism", "rtt_s", "rep", "step") + RECORD_COLUMNS

    def rows():
        for c in result.cells:
            for rep in range(c.data.shape[0]):
                for step in range(c.data.shape[1]):
                    vals = c.data[rep, step]
                    yield (c.scheme, c.level, c.rtt, rep, step, vals[0], vals[1], vals[2],
                           int(vals[3]), vals[4], vals[5])

    write_csv(header, rows(), stream)


def summary_csv(rows: Sequence[SummaryRow], stream) -> None:
    if not rows:
        raise ParameterError("no summary rows")
    names = [k for k, _ in rows[0].keys]
    write_csv(names + ["metric", "mean", "std", "n", "ci95_lo", "ci95_hi"],
              ([v for _, v in r.keys] + [r.metric, r.mean, r.std, r.n, r.ci95_lo, r.ci95_hi]
               for r in rows), stream)


def diffs_csv(rows: Sequence[PercentDiff], stream) -> None:
    if not rows:
        raise ParameterError("no percent-difference rows")
    names = [k for k, _ in rows[0].keys]
    write_csv(["scheme", "reference"] + names + ["metric", "pct_diff", "ci95_lo", "ci95_hi"],
              ([r.scheme, r.reference] + [v for _, v in r.keys] + [r.metric, r.pct, r.ci95_lo, r.ci95_hi]
               for r in rows), stream)


def lifetime_csv(result: LifetimeResult, stream) -> None:
    write_csv(("model", "ttf_s", "rep", "lifetime_s"),
              ((r["model"], r["ttf_s"], r["rep"], r["lifetime_s"]) for r in result.rows), stream)


def traces_csv(result: ExperimentResult, stream) -> None:
    header = ("scheme", "neuroticism", "rtt_s", "rep", "step", "capture_instant_s", "t_norm", "tag")

    def rows():
        for c in result.cells:
            for rep, steps in enumerate(c.traces or ()):
                for step, trace in enumerate(steps):
                    for e in trace:
                        yield (c.scheme, c.level, c.rtt, rep, step, e.capture_instant, e.t_norm, e.tag.value)

    write_csv(header, rows(), stream)


def to_text(writer, *args) -> str:
    buf = io.StringIO()
    writer(*args, buf)
    return buf.getvalue()
