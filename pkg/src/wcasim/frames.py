"""Procedural frame-result-tag traces for the capture instants of a step."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FileFormatError, ParameterError

DEFAULT_BIN_COUNT = 25


class FrameTag(enum.Enum):
    SUCCESS = "SUCCESS"
    REPEAT = "REPEAT"
    LOW_CONFIDENCE = "LOW_CONFIDENCE"
    BLANK = "BLANK"
    TASK_ERROR = "TASK_ERROR"  # representable, never generated


# column order of every table row
ROW_TAGS = (FrameTag.REPEAT, FrameTag.LOW_CONFIDENCE, FrameTag.BLANK)


@dataclass(frozen=True)
class FrameTagTable:
    """Per-bin category weights over (REPEAT, LOW_CONFIDENCE, BLANK).

    Bin k covers t_norm in [k / bin_count, (k + 1) / bin_count).
    """

    rows: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        rows = tuple(tuple(float(v) for v in row) for row in self.rows)
        if not rows:
            raise ParameterError("tag table needs at least one row")
        for k, row in enumerate(rows):
            if len(row) != len(ROW_TAGS):
                raise ParameterError(f"row {k} has {len(row)} weights, expected {len(ROW_TAGS)}")
            if any(not math.isfinite(v) or v < 0 for v in row):
                raise ParameterError(f"row {k} has negative or non-finite weights")
            if abs(math.fsum(row) - 1.0) > 1e-9:
                raise ParameterError(f"row {k} sums to {math.fsum(row)!r}, expected 1")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "_cum", tuple(tuple(np.cumsum(r).tolist()) for r in rows))

    @property
    def bin_count(self) -> int:
        return len(self.rows)

    def bin_of(self, t_norm: float) -> int:
        # values just below 1.0 land in the last row
        return min(int(t_norm * self.bin_count), self.bin_count - 1)

    def row(self, t_norm: float) -> dict[FrameTag, float]:
        return dict(zip(ROW_TAGS, self.rows[self.bin_of(t_norm)]))


@dataclass(frozen=True)
class FrameTraceEntry:
    capture_instant: float
    t_norm: float
    tag: FrameTag


def normalized_instant(tau: float, t_exec: float) -> float:
    if not t_exec > 0:
        raise ParameterError(f"execution time must be positive, got {t_exec}")
    if not tau >= 0:
        raise ParameterError(f"capture instant must be non-negative, got {tau}")
    return tau / t_exec


def tag_at(t_norm: float, table: FrameTagTable, rng: np.random.Generator) -> FrameTag:
    if not t_norm >= 0:
        raise ParameterError(f"t_norm must be non-negative, got {t_norm}")
    if t_norm >= 1.0:
        return FrameTag.SUCCESS
    cum = table._cum[table.bin_of(t_norm)]
    u = rng.random() * cum[-1]
    for tag, edge in zip(ROW_TAGS, cum):
        if u < edge:
            return tag
    # u landed on the upper edge through rounding; take the last non-zero category
    for tag, w in zip(reversed(ROW_TAGS), reversed(table.rows[table.bin_of(t_norm)])):
        if w > 0:
            return tag
    raise AssertionError("unreachable: rows sum to one")


def generate_trace(
    instants: Sequence[float],
    t_exec: float,
    table: FrameTagTable,
    rng: np.random.Generator,
) -> list[FrameTraceEntry]:
    """Tag each capture instant, stopping after the first SUCCESS."""
    if any(b <= a for a, b in zip(instants, instants[1:])):
        raise ParameterError("capture instants must be strictly ascending")
    trace = []
    for tau in instants:
        t_norm = normalized_instant(tau, t_exec)
        tag = tag_at(t_norm, table, rng)
        trace.append(FrameTraceEntry(float(tau), t_norm, tag))
        if tag is FrameTag.SUCCESS:
            break
    return trace


def default_tag_table(bin_count: int = DEFAULT_BIN_COUNT) -> FrameTagTable:
    """Synthetic table shaped like the observed tag densities.

    REPEAT dominates right after the instruction and decays; BLANK grows as the
    user starts moving; LOW_CONFIDENCE holds a small constant share.
    """
    if bin_count < 1:
        raise ParameterError("bin_count must be positive")
    low_conf = 0.08
    x = (np.arange(bin_count) + 0.5) / bin_count
    repeat = (1.0 - low_conf) * 0.94 * np.exp(-4.0 * x)
    rows = [(float(r), low_conf, 1.0 - low_conf - float(r)) for r in repeat]
    return FrameTagTable(tuple(rows))


def parse_tag_table(text: str, path="<string>") -> FrameTagTable:
    """CSV with header ``bin,repeat,low_confidence,blank``; bins 0..n-1 in order."""
    reader = csv.reader(io.StringIO(text))
    rows = []
    header = None
    for record in reader:
        lineno = reader.line_num
        if not record or record[0].lstrip().startswith("#"):
            continue
        if header is None:
            header = [h.strip().lower() for h in record]
            if header != ["bin", "repeat", "low_confidence", "blank"]:
                raise FileFormatError(path, lineno, f"unexpected header {record}")
            continue
        if len(record) != 4:
            raise FileFormatError(path, lineno, f"expected 4 fields, got {len(record)}")
        try:
            k = int(record[0])
            weights = tuple(float(v) for v in record[1:])
        except ValueError as exc:
            raise FileFormatError(path, lineno, str(exc)) from None
        if k != len(rows):
            raise FileFormatError(path, lineno, f"expected bin {len(rows)}, got {k}")
        if any(w < 0 or not math.isfinite(w) for w in weights):
            raise FileFormatError(path, lineno, "weights must be finite and non-negative")
        if abs(math.fsum(weights) - 1.0) > 1e-9:
            raise FileFormatError(path, lineno, f"weights sum to {math.fsum(weights)!r}, expected 1")
        rows.append(weights)
    if not rows:
        raise FileFormatError(path, None, "no rows found")
    return FrameTagTable(tuple(rows))


def load_tag_table(path) -> FrameTagTable:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileFormatError(path, None, f"cannot read file: {exc.strerror}") from exc
    return parse_tag_table(text, path)


def dump_tag_table(table: FrameTagTable) -> str:
    out = ["bin,repeat,low_confidence,blank"]
    out += [f"{k},{r!r},{l!r},{b!r}" for k, (r, l, b) in enumerate(table.rows)]
    return "\n".join(out) + "\n"
