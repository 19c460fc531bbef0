"""Verification protocols for the user timing model.

Each protocol warms a fresh model up, feeds it a target TTF pattern and
records the generated execution times over many repetitions.  Runs that are
compared with each other (target 0 s vs 5 s) reuse the same random stream per
repetition, so the comparison is made with common random numbers.  Different
model configurations (level, variant) get independent streams, so averaging
over configurations actually averages out noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .timing import CalibrationTable, NeuroticismLevel, TimingModel, Variant

WARMUP_STEPS = 25
WARMUP_RANGE = (0.0, 5.0)
LOW_TTF = 0.0
HIGH_TTF = 5.0


def _rep_rng(seed: int, rep: int, stream: tuple[int, ...] = ()) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(*stream, rep)))


def config_stream(level, variant) -> tuple[int, int]:
    """Stream key for one model configuration."""
    return (list(NeuroticismLevel).index(NeuroticismLevel.parse(level)),
            list(Variant).index(Variant.parse(variant)))


def warm_up(model: TimingModel, rng: np.random.Generator, steps: int = WARMUP_STEPS) -> None:
    """Feed ``steps`` TTFs drawn uniformly from [0, 5] s."""
    for ttf in rng.uniform(*WARMUP_RANGE, size=steps):
        model.push(float(ttf))


def exposure_run(
    table: CalibrationTable,
    level,
    ttf: float,
    steps: int = 12,
    reps: int = 600,
    seed: int = 0,
    variant=Variant.EMPIRICAL,
    stream: tuple[int, ...] = (),
) -> np.ndarray:
    """Execution times over ``steps`` steps at constant ``ttf`` after a random warm-up.

    Returns an array of shape (reps, steps).  Step 1 is the first draw after
    the target TTF is fed.
    """
    out = np.empty((reps, steps))
    for rep in range(reps):
        rng = _rep_rng(seed, rep, stream)
        model = TimingModel(table, level, variant)
        warm_up(model, rng)
        for k in range(steps):
            out[rep, k] = model.advance(ttf, rng)
    return out


def transition_run(
    table: CalibrationTable,
    level,
    origin: float,
    destination: float,
    reps: int = 600,
    seed: int = 0,
    variant=Variant.EMPIRICAL,
    stream: tuple[int, ...] = (),
) -> np.ndarray:
    """First draw after ``destination`` follows 25 feeds of ``origin``."""
    out = np.empty(reps)
    for rep in range(reps):
        rng = _rep_rng(seed, rep, stream)
        model = TimingModel(table, level, variant)
        for _ in range(WARMUP_STEPS):
            model.push(origin)
        out[rep] = model.advance(destination, rng)
    return out


@dataclass(frozen=True)
class ProtocolSummary:
    level: NeuroticismLevel
    gap: float  # (mean at 5 s - mean at 0 s) / mean at 0 s, first step
    low_change: float  # step 12 vs step 1 at 0 s
    high_change: float  # step 12 vs step 1 at 5 s


def summarize_level(table: CalibrationTable, level, reps: int = 600, seed: int = 0,
                    variant=Variant.EMPIRICAL, steps: int = 12) -> ProtocolSummary:
    level = NeuroticismLevel.parse(level)
    stream = config_stream(level, variant)
    low = exposure_run(table, level, LOW_TTF, steps, reps, seed, variant, stream).mean(axis=0)
    high = exposure_run(table, level, HIGH_TTF, steps, reps, seed, variant, stream).mean(axis=0)
    return ProtocolSummary(
        level,
        gap=(high[0] - low[0]) / low[0],
        low_change=(low[-1] - low[0]) / low[0],
        high_change=(high[-1] - high[0]) / high[0],
    )


def summarize_model(table: CalibrationTable, reps: int = 600, seed: int = 0,
                    variants=(Variant.EMPIRICAL, Variant.FITTED)) -> dict[NeuroticismLevel, ProtocolSummary]:
    """Per-level protocol results averaged over the given model variants."""
    out = {}
    for level in NeuroticismLevel:
        runs = [summarize_level(table, level, reps, seed, v) for v in variants]
        out[level] = ProtocolSummary(
            level,
            gap=float(np.mean([r.gap for r in runs])),
            low_change=float(np.mean([r.low_change for r in runs])),
            high_change=float(np.mean([r.high_change for r in runs])),
        )
    return out
