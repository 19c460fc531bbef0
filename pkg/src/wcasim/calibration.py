"""Calibration table files and the bundled synthetic default table.

File format (JSON lines, ``#`` comment lines and blank lines ignored)::

    {"horizon": 12, "decay": 0.7, "edges": [0.82, 1.53, 2.08, 2.67, 3.45, 4.13]}
    {"level": "low", "bin": 0, "mu": 3.1, "sigma": 0.5, "tau": 0.8, "samples": [...]}
    ...

The first record is the header; every following record is one cell. ``samples``
may be omitted for tables used only with the fitted variant.
"""

from __future__ import annotations

import functools
import json
import math
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FileFormatError, ParameterError
from .timing import (
    DEFAULT_DECAY,
    DEFAULT_HORIZON,
    BinTable,
    CalibrationCell,
    CalibrationTable,
    ExGaussianParams,
    NeuroticismLevel,
)

DEFAULT_TABLE_RESOURCE = "default_calibration.jsonl"


class CalibrationFileError(FileFormatError):
    """Carries every problem found, each tagged with its line number."""

    def __init__(self, path, issues):
        self.issues = list(issues)
        line, message = self.issues[0]
        super().__init__(path, line, message)

    def __str__(self):
        return "\n".join(
            f"{self.path}:{line}: {msg}" if line is not None else f"{self.path}: {msg}"
            for line, msg in self.issues
        )


def _records(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def parse_calibration(text: str, path="<string>") -> CalibrationTable:
    issues: list[tuple[int | None, str]] = []
    header = None
    cells: dict[tuple[NeuroticismLevel, int], CalibrationCell] = {}
    cell_lines: dict[tuple[NeuroticismLevel, int], int] = {}

    for lineno, line in _records(text):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            issues.append((lineno, f"invalid JSON: {exc.msg} (column {exc.colno})"))
            continue
        if not isinstance(rec, dict):
            issues.append((lineno, "record must be a JSON object"))
            continue

        if header is None:
            try:
                horizon = int(rec.get("horizon", DEFAULT_HORIZON))
                decay = float(rec.get("decay", DEFAULT_DECAY))
                bins = BinTable(tuple(rec["edges"]))
                if horizon < 1 or not decay > 0:
                    raise ParameterError("horizon must be >= 1 and decay > 0")
            except KeyError:
                issues.append((lineno, "header is missing 'edges'"))
                return _fail(path, issues)
            except (TypeError, ValueError) as exc:
                issues.append((lineno, f"bad header: {exc}"))
                return _fail(path, issues)
            header = (horizon, decay, bins)
            continue

        try:
            level = NeuroticismLevel.parse(rec["level"])
            k = int(rec["bin"])
            params = ExGaussianParams(float(rec["mu"]), float(rec["sigma"]), float(rec["tau"]))
            samples = tuple(float(s) for s in rec.get("samples", ()))
        except KeyError as exc:
            issues.append((lineno, f"cell record is missing {exc.args[0]!r}"))
            continue
        except (TypeError, ValueError) as exc:
            issues.append((lineno, f"bad cell record: {exc}"))
            continue
        if not 0 <= k < header[2].n_bins:
            issues.append((lineno, f"bin {k} outside 0..{header[2].n_bins - 1}"))
            continue
        if not all(math.isfinite(s) for s in samples):
            issues.append((lineno, "samples must be finite"))
            continue
        key = (level, k)
        if key in cells:
            issues.append((lineno, f"duplicate cell ({level.value}, {k}); "
                                   f"first defined on line {cell_lines[key]}"))
            continue
        cells[key] = CalibrationCell(params, samples)
        cell_lines[key] = lineno

    if header is None:
        issues.append((None, "no header record found"))
        return _fail(path, issues)

    table = CalibrationTable(cells, bins=header[2], horizon=header[0], decay=header[1])
    for key, msg in table.problems():
        issues.append((cell_lines.get(key), msg))
    if issues:
        return _fail(path, issues)
    return table


def _fail(path, issues):
    raise CalibrationFileError(path, issues)


def load_calibration(path) -> CalibrationTable:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileFormatError(path, None, f"cannot read file: {exc.strerror}") from exc
    return parse_calibration(text, path)


def dump_calibration(table: CalibrationTable, path=None, comment: str | None = None) -> str:
    lines = []
    if comment:
        lines.extend("# " + c for c in comment.splitlines())
    lines.append(json.dumps({
        "horizon": table.horizon, "decay": table.decay, "edges": list(table.bins.edges),
    }))
    for (level, k) in sorted(table.cells, key=lambda key: (key[0].value != "low", key[1])):
        cell = table.cells[(level, k)]
        lines.append(json.dumps({
            "level": level.value, "bin": k,
            "mu": cell.params.mu, "sigma": cell.params.sigma, "tau": cell.params.tau,
            "samples": [round(s, 6) for s in cell.samples],
        }))
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


@functools.lru_cache(maxsize=1)
def default_calibration() -> CalibrationTable:
    """The synthetic table shipped with the package (see scripts/make_default_calibration.py)."""
    ref = resources.files("wcasim.data").joinpath(DEFAULT_TABLE_RESOURCE)
    return parse_calibration(ref.read_text(encoding="utf-8"), f"wcasim/data/{DEFAULT_TABLE_RESOURCE}")


def synthesize_table(
    params: Mapping[tuple[NeuroticismLevel, int], ExGaussianParams],
    n_samples: int = 1000,
    seed: int = 0,
    bins: BinTable = BinTable(),
    horizon: int = DEFAULT_HORIZON,
    decay: float = DEFAULT_DECAY,
) -> CalibrationTable:
    """Build a table whose cells share one set of standard normal/exponential draws.

    Sample i of every cell is ``mu + sigma * z_i + tau * e_i``. Sharing the base
    draws keeps cells comonotone, so resampling the same index from two cells
    gives coupled execution times, which keeps protocol comparisons low-noise.
    Base draws that would make any cell non-positive are discarded, and the
    rest are moment-matched (z to mean 0 and sd 1, e to mean 1) so every cell's
    sample mean equals its exGaussian mean.
    """
    rng = np.random.default_rng(seed)
    mus = np.array([p.mu for p in params.values()])
    sigmas = np.array([p.sigma for p in params.values()])
    z_parts, e_parts, have = [], [], 0
    while have < n_samples:
        z = rng.standard_normal(n_samples)
        e = rng.standard_exponential(n_samples)
        ok = np.all(mus[:, None] + sigmas[:, None] * z[None, :] > 0, axis=0)
        z_parts.append(z[ok])
        e_parts.append(e[ok])
        have += int(ok.sum())
    z = np.concatenate(z_parts)[:n_samples]
    e = np.concatenate(e_parts)[:n_samples]
    z = (z - z.mean()) / z.std()
    e = e / e.mean()
    cells = {
        key: CalibrationCell(p, tuple(np.round(p.mu + p.sigma * z + p.tau * e, 6).tolist()))
        for key, p in params.items()
    }
    return CalibrationTable(cells, bins=bins, horizon=horizon, decay=decay).validate()
