"""Command-line front end: ``wcasim <subcommand> ...``.

Exit codes: 0 success, 1 a data file failed to load or validate,
2 invalid parameters or configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import default_calibration, load_calibration
from .errors import CalibrationError, ConfigError, FileFormatError, ParameterError, WcasimError
from .frames import default_tag_table, load_tag_table
from .optimizer import (
    EnergyParams,
    PenaltyWeights,
    Rayleigh,
    constrained_ratio,
    energy_weights,
    exact_moments,
    expected_samples_numeric,
    expected_wait_closed_form,
    expected_wait_numeric,
    optimal_rate,
    rayleigh_schedule,
    unit_mass_check,
)
from .schemes import DEFAULT_SCHEMES, SchemeKind
from .simulator import (
    ExperimentConfig,
    diffs_csv,
    lifetime_csv,
    lifetime_study,
    records_csv,
    run_experiment,
    run_task,
    summary_csv,
    traces_csv,
    write_csv,
)
from .timing import NeuroticismLevel

OUT_ENV = "WCASIM_OUT"
DEFAULT_OUT = "wcasim-out"

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


# -- configuration -------------------------------------------------------------


def load_config_file(path) -> dict:
    """Read a TOML config; returns {"simulation": {...}, "inputs": {...}}."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise FileFormatError(path, None, f"cannot read file: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise FileFormatError(path, getattr(exc, "lineno", None), str(exc)) from None
    unknown = sorted(set(data) - {"simulation", "inputs"})
    if unknown:
        raise ConfigError(f"{path}: unknown sections {unknown}")
    inputs = data.get("inputs", {})
    bad = sorted(set(inputs) - {"calibration", "tag_table"})
    if bad:
        raise ConfigError(f"{path}: unknown [inputs] keys {bad}")
    # relative input paths are resolved against the config file
    inputs = {k: str((path.parent / v).resolve()) if v else "" for k, v in inputs.items()}
    return {"simulation": data.get("simulation", {}), "inputs": inputs}


def _csv_floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_words(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def effective_config(args) -> tuple[ExperimentConfig, dict]:
    file_cfg = load_config_file(args.config) if args.config else {"simulation": {}, "inputs": {}}
    cfg = ExperimentConfig.from_mapping(file_cfg["simulation"])
    overrides = {
        "seed": args.seed,
        "reps": getattr(args, "reps", None),
        "steps": getattr(args, "steps", None),
        "rtts": getattr(args, "rtts", None),
        "levels": getattr(args, "levels", None),
        "schemes": getattr(args, "schemes", None),
        "variant": getattr(args, "variant", None),
    }
    if getattr(args, "emit_traces", False):
        overrides["emit_traces"] = True
    cfg = cfg.override(**overrides)
    if getattr(args, "include_periodic", False) and SchemeKind.PERIODIC.value not in cfg.schemes:
        cfg = replace(cfg, schemes=cfg.schemes + (SchemeKind.PERIODIC.value,))
    inputs = dict(file_cfg["inputs"])
    if getattr(args, "calibration", None):
        inputs["calibration"] = str(Path(args.calibration).resolve())
    if getattr(args, "tag_table", None):
        inputs["tag_table"] = str(Path(args.tag_table).resolve())
    return cfg, inputs


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_inputs(inputs: dict):
    table = load_calibration(inputs["calibration"]) if inputs.get("calibration") else default_calibration()
    tags = load_tag_table(inputs["tag_table"]) if inputs.get("tag_table") else default_tag_table()
    return table, tags


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, inputs: dict, outputs, extra=None):
    manifest = {
        "toolkit": "wcasim",
        "version": __version__,
        "command": command,
        "config": cfg.to_dict(),
        "inputs": {
            k: {"path": v, "sha256": _sha256(v)} if v else None
            for k, v in sorted(inputs.items())
        },
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(out: Path, name: str, writer, *args) -> str:
    with open(out / name, "w", newline="", encoding="utf-8") as fh:
        writer(*args, fh)
    return name


# -- subcommands -----------------------------------------------------------------


def _weights_from_args(args, sigma) -> tuple[PenaltyWeights, str]:
    given = [args.w0 is not None, args.ratio is not None,
             args.alpha is not None or args.beta is not None]
    if sum(given) > 1:
        raise ConfigError("give only one of --w0, --ratio, or --alpha/--beta")
    if args.w0 is not None:
        return PenaltyWeights.from_ratio(constrained_ratio(args.w0, sigma)), f"w0 = {args.w0:g} s"
    if args.ratio is not None:
        return PenaltyWeights.from_ratio(args.ratio), "given ratio"
    if args.alpha is not None or args.beta is not None:
        if args.alpha is None or args.beta is None:
            raise ConfigError("--alpha and --beta go together")
        return PenaltyWeights(args.alpha, args.beta), "given alpha, beta"
    raise ConfigError("one of --w0, --ratio, or --alpha/--beta is required")


def cmd_schedule(args) -> int:
    w, source = _weights_from_args(args, args.sigma)
    print(f"# Rayleigh sigma = {args.sigma:g} s, alpha/beta = {w.ratio:.6g} ({source})")
    sched = rayleigh_schedule(args.sigma, w, count=args.count)
    if not len(sched):
        print("# empty schedule")
        return 0
    mass = unit_mass_check(sched, optimal_rate(Rayleigh(args.sigma), w))
    print("n,t_n_s,unit_mass")
    for n, (t, m) in enumerate(zip(sched, mass), start=1):
        print(f"{n},{t:.4f},{m:.9f}")
    return 0


def cmd_optimize(args) -> int:
    sigma = args.sigma
    dist = Rayleigh(sigma)
    if args.energy:
        tau_c = args.tau_c if args.tau_c is not None else (
            args.rtt - args.tau_p if args.rtt is not None else None)
        if tau_c is None:
            raise ConfigError("energy mode needs --tau-c or --rtt")
        if not tau_c > 0:
            raise ConfigError(f"communication delay tau_c = {tau_c:g} s must be positive")
        try:
            ep = EnergyParams(p0=args.p0, pc=args.pc, tau_p=args.tau_p, tau_c=tau_c)
            w = energy_weights(ep, mean_exec=dist.mean)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        print(f"energy model: p0 = {ep.p0:g} W, pc = {ep.pc:g} W, tau_p = {ep.tau_p:g} s, tau_c = {tau_c:g} s")
    else:
        w, _ = _weights_from_args(args, sigma)
    rate = optimal_rate(dist, w)
    sched = rayleigh_schedule(sigma, w)
    e_s, e_w = exact_moments(sched, dist)
    rows = [
        ("sigma_s", sigma),
        ("alpha", w.alpha),
        ("beta", w.beta),
        ("alpha_over_beta", w.ratio),
        ("c", w.c),
        ("expected_wait_closed_form_s", expected_wait_closed_form(sigma, w)),
        ("expected_wait_numeric_s", expected_wait_numeric(dist, rate)),
        ("expected_samples_numeric", expected_samples_numeric(dist, rate)),
        ("schedule_instants", len(sched)),
        ("exact_expected_samples", e_s),
        ("exact_expected_wait_s", e_w),
        ("exact_penalty", w.alpha * e_s + w.beta * e_w),
    ]
    for k, v in rows:
        print(f"{k} = {v:.6g}" if isinstance(v, float) else f"{k} = {v}")
    return 0


def _progress(done, total):
    if sys.stderr.isatty():
        print(f"\r{done}/{total} cells", end="" if done < total else "\n", file=sys.stderr)


def cmd_simulate(args) -> int:
    cfg, inputs = effective_config(args)
    table, tags = load_inputs(inputs)
    out = _out_dir(args)
    workers = args.workers or os.cpu_count() or 1
    result = run_experiment(cfg, table, tags, workers=workers, progress=_progress)
    written = []
    if not args.no_records:
        written.append(_write(out, "records.csv", records_csv, result))
    written.append(_write(out, "summary.csv", summary_csv, result.summary))
    if result.diffs:
        written.append(_write(out, "diffs.csv", diffs_csv, result.diffs))
    if cfg.emit_traces:
        written.append(_write(out, "traces.csv", traces_csv, result))
    write_manifest(out, "simulate", cfg, inputs, written)
    print(f"wrote {', '.join(written)} and manifest.json to {out}")
    return 0


def cmd_lifetime(args) -> int:
    cfg, inputs = effective_config(args)
    cfg = cfg.override(lifetime_reps=args.lifetime_reps, lifetime_steps=args.lifetime_steps)
    table, _ = load_inputs(inputs)
    out = _out_dir(args)
    result = lifetime_study(cfg, table)
    written = [
        _write(out, "lifetime.csv", lifetime_csv, result),
        _write(out, "lifetime_summary.csv", summary_csv, result.summary),
        _write(out, "lifetime_diffs.csv", diffs_csv, result.diffs),
    ]
    write_manifest(out, "lifetime", cfg, inputs, written)
    print(f"wrote {', '.join(written)} and manifest.json to {out}")
    return 0


def cmd_trace(args) -> int:
    cfg, inputs = effective_config(args)
    table, tags = load_inputs(inputs)
    level = NeuroticismLevel.parse(args.level)
    if args.rtt - cfg.tau_p <= 0:
        raise ConfigError(f"rtt {args.rtt:g} must exceed tau_p {cfg.tau_p:g}")
    recs = run_task(cfg, table, args.scheme, level, args.rtt, 0, tags)
    out = _out_dir(args)
    rows = ((r.step, e.capture_instant, e.t_norm, e.tag.value) for r in recs for e in r.tags)
    name = _write(out, "trace.csv", write_csv, ("step", "capture_instant_s", "t_norm", "tag"), rows)
    write_manifest(out, "trace", cfg, inputs, [name],
                   {"trace": {"scheme": SchemeKind.parse(args.scheme).value,
                              "level": level.value, "rtt": args.rtt}})
    print(f"wrote {name} and manifest.json to {out}")
    return 0


def cmd_calibrate(args) -> int:
    table = load_calibration(args.path)
    print(f"{args.path}: horizon {table.horizon}, decay {table.decay:g}, "
          f"edges {', '.join(f'{e:g}' for e in table.bins.edges)}")
    print("level,bin,mu,sigma,tau,mean_s,n_samples,sample_mean_s")
    for level in NeuroticismLevel:
        for k in range(table.bins.n_bins):
            c = table.cell(level, k)
            smean = f"{np.mean(c.samples):.4f}" if c.samples else "nan"
            p = c.params
            print(f"{level.value},{k},{p.mu:.4f},{p.sigma:.4f},{p.tau:.4f},{c.mean:.4f},"
                  f"{len(c.samples)},{smean}")
    print("monotone means: ok")
    return 0


# -- parser ------------------------------------------------------------------------


def _add_weight_args(p):
    p.add_argument("--sigma", type=float, required=True, help="Rayleigh scale, seconds")
    p.add_argument("--w0", type=float, help="target expected wait, seconds")
    p.add_argument("--ratio", type=float, help="alpha/beta")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)


def _add_run_args(p, seed_only=False):
    p.add_argument("--config", help="TOML configuration file (see configs/default.toml)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--calibration", help="calibration table file (JSONL)")
    p.add_argument("--variant", choices=("empirical", "fitted"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wcasim", description="Step-timing emulation and aperiodic sampling toolkit.")
    ap.add_argument("--version", action="version", version=f"wcasim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="closed-form Rayleigh sampling instants")
    _add_weight_args(p)
    p.add_argument("--count", type=int, help="number of instants (default: until 1e-6 mass remains)")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("optimize", help="penalty weights and expected samples/wait")
    _add_weight_args(p)
    p.add_argument("--energy", action="store_true", help="derive alpha, beta from the energy model")
    p.add_argument("--rtt", type=float)
    p.add_argument("--tau-c", type=float)
    p.add_argument("--tau-p", type=float, default=0.25)
    p.add_argument("--p0", type=float, default=0.015)
    p.add_argument("--pc", type=float, default=0.045)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="RTT sweep over schemes and neuroticism levels")
    _add_run_args(p)
    p.add_argument("--workers", type=int, help="worker processes (default: CPU count)")
    p.add_argument("--reps", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--rtts", type=_csv_floats, help="comma-separated RTTs, seconds")
    p.add_argument("--levels", type=_csv_words)
    p.add_argument("--schemes", type=_csv_words,
                   help=f"comma-separated; default {','.join(k.value for k in DEFAULT_SCHEMES)}")
    p.add_argument("--include-periodic", action="store_true")
    p.add_argument("--emit-traces", action="store_true")
    p.add_argument("--tag-table", help="frame tag table file (CSV)")
    p.add_argument("--no-records", action="store_true", help="skip the per-step records CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("lifetime", help="task lifetimes under constant TTF")
    _add_run_args(p)
    p.add_argument("--reps", type=int, dest="lifetime_reps")
    p.add_argument("--steps", type=int, dest="lifetime_steps")
    p.set_defaults(func=cmd_lifetime)

    p = sub.add_parser("trace", help="frame-tag trace for one synthetic task")
    _add_run_args(p)
    p.add_argument("--scheme", default="aperiodic-samples")
    p.add_argument("--level", default="low")
    p.add_argument("--rtt", type=float, default=0.3)
    p.add_argument("--steps", type=int)
    p.add_argument("--tag-table", help="frame tag table file (CSV)")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("calibrate", help="validate a calibration file and print its cells")
    p.add_argument("path")
    p.set_defaults(func=cmd_calibrate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (FileFormatError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except WcasimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
