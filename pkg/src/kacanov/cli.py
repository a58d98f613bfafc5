"""Experiment runner.

Usage::

    kacanov run --config exp.json
    kacanov summarize --csv out.csv
    kacanov lemma-check [--nmax N]

The config is a single JSON object with the keys ``experiment``, ``p``,
``schedule.kind`` (``"fixed"`` or ``"algebraic"``), ``schedule.eps_minus``,
``schedule.eps_plus``, ``schedule.alpha``, ``schedule.beta``, ``mesh_n``,
``max_iter``, ``min_decrement``, ``K1``, ``q``, ``cg_tol`` and ``output``.
The schedule keys may also be given as a nested ``"schedule"`` object.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fem2d, radial
from .iterate import (
    COLUMNS,
    Algebraic,
    Fixed,
    IterationFailed,
    StoppingRule,
    check_algebraic_lemma,
    converged_surrogate,
    default_q,
    fit_rate,
    run,
)
from .orlicz import Exponent, RelaxInterval

log = logging.getLogger("kacanov")

EXPERIMENTS = ("peak", "peak-scalar", "square", "square-f0", "lshape", "rate-study", "lemma-check")
CONFIG_KEYS = {
    "experiment",
    "p",
    "schedule.kind",
    "schedule.eps_minus",
    "schedule.eps_plus",
    "schedule.alpha",
    "schedule.beta",
    "mesh_n",
    "max_iter",
    "min_decrement",
    "K1",
    "q",
    "cg_tol",
    "output",
}
LEMMA_GAMMAS = [0.1 * k for k in range(1, 51)]
# wide interval whose converged surrogate stands in for J(u) in the rate study
RATE_STUDY_EPS = RelaxInterval(1e-6, 1e6)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    p: float
    schedule: object
    mesh_n: int = 32
    max_iter: int = 20
    min_decrement: float = 0.0
    K1: float = 1.0
    q: Optional[float] = None
    cg_tol: float = 1e-10
    output: str = "trace.csv"

    @property
    def stopping(self):
        return StoppingRule(self.max_iter, self.min_decrement)


def _flatten(raw):
    flat = {}
    for key, val in raw.items():
        if key == "schedule" and isinstance(val, dict):
            for k, v in val.items():
                flat[f"schedule.{k}"] = v
        else:
            flat[key] = val
    return flat


def _number(flat, key, default=None, kind=float):
    if key not in flat or flat[key] is None:
        if default is None:
            raise ConfigError(f"missing required key '{key}'")
        return default
    val = flat[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"'{key}' must be a number, got {val!r}")
    if kind is int:
        if int(val) != val:
            raise ConfigError(f"'{key}' must be an integer, got {val!r}")
        return int(val)
    return float(val)


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a config mapping; raises :class:`ConfigError` naming the
    violated constraint."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    flat = _flatten(raw)
    unknown = sorted(set(flat) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    name = flat.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"'experiment' must be one of {', '.join(EXPERIMENTS)}, got {name!r}")

    if name == "lemma-check":
        return ExperimentConfig(name, 2.0, None, max_iter=_number(flat, "max_iter", 10_000, int))

    p = _number(flat, "p")
    try:
        Exponent.unchecked(p) if name == "peak-scalar" else Exponent(p)
    except ValueError as exc:
        raise ConfigError(f"'p': {exc}") from None

    kind = flat.get("schedule.kind")
    if kind == "fixed":
        try:
            schedule = Fixed(
                RelaxInterval(
                    _number(flat, "schedule.eps_minus"), _number(flat, "schedule.eps_plus")
                )
            )
        except ValueError as exc:
            raise ConfigError(f"'schedule': {exc}") from None
    elif kind == "algebraic":
        try:
            schedule = Algebraic(_number(flat, "schedule.alpha"), _number(flat, "schedule.beta"))
        except ValueError as exc:
            raise ConfigError(f"'schedule': {exc}") from None
        if p > 2:
            raise ConfigError("'schedule.kind': algebraic schedules need p <= 2")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                schedule.validate(p)
            except ValueError as exc:
                raise ConfigError(f"'schedule.alpha' + 'schedule.beta': {exc}") from None
        if p < 2 and math.isclose(schedule.alpha + schedule.beta, 1 / (2 - p), rel_tol=1e-12):
            log.warning("alpha + beta equals the bound 1/(2-p)")
    else:
        raise ConfigError(f"'schedule.kind' must be 'fixed' or 'algebraic', got {kind!r}")

    default_mesh = 1024 if name == "peak" else 32
    cfg = ExperimentConfig(
        experiment=name,
        p=p,
        schedule=schedule,
        mesh_n=_number(flat, "mesh_n", default_mesh, int),
        max_iter=_number(flat, "max_iter", 20, int),
        min_decrement=_number(flat, "min_decrement", 0.0),
        K1=_number(flat, "K1", 1.0),
        q=_number(flat, "q", default_q(p)),
        cg_tol=_number(flat, "cg_tol", 1e-10),
        output=flat.get("output", "trace.csv"),
    )
    if cfg.mesh_n < 1:
        raise ConfigError("'mesh_n' must be at least 1")
    if name in ("lshape", "rate-study") and cfg.mesh_n % 2:
        raise ConfigError("'mesh_n' must be even for the L-shape")
    if cfg.max_iter < 1:
        raise ConfigError("'max_iter' must be at least 1")
    if cfg.min_decrement < 0:
        raise ConfigError("'min_decrement' must be non-negative")
    if cfg.K1 < 0:
        raise ConfigError("'K1' must be non-negative")
    if not cfg.q > p:
        raise ConfigError(f"'q' must exceed p = {p}, got {cfg.q}")
    if not 0 < cfg.cg_tol < 1:
        raise ConfigError(f"'cg_tol' must lie in (0, 1), got {cfg.cg_tol}")
    if not isinstance(cfg.output, str) or not cfg.output:
        raise ConfigError("'output' must be a non-empty path")
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return parse_config(raw)


# ---------------------------------------------------------------- build


def build_problem(cfg: ExperimentConfig):
    """Problem instance and reference energy (``None`` if unavailable)."""
    one = fem2d.Density(lambda x, y: 1.0)
    name = cfg.experiment
    if name == "peak":
        prob = radial.RadialPeakProblem(radial.RadialMesh.uniform(cfg.mesh_n), cfg.p)
        return prob, prob.reference_energy
    if name == "peak-scalar":
        prob = radial.ScalarPeakProblem(cfg.p)
        return prob, prob.reference_energy
    if name == "square-f0":
        prob = fem2d.FEMProblem(fem2d.unit_square_mesh(cfg.mesh_n), fem2d.Density(lambda x, y: 0.0), cfg.p)
        return prob, 0.0
    if name == "square":
        prob = fem2d.FEMProblem(fem2d.unit_square_mesh(cfg.mesh_n), one, cfg.p)
    else:
        prob = fem2d.FEMProblem(fem2d.l_shape_mesh(cfg.mesh_n), one, cfg.p)

    if name == "rate-study":
        _, ref = converged_surrogate(prob, RATE_STUDY_EPS, cg_tol=min(cfg.cg_tol, 1e-12))
        return prob, ref
    if isinstance(cfg.schedule, Fixed):
        _, ref = converged_surrogate(prob, cfg.schedule.eps, cg_tol=min(cfg.cg_tol, 1e-12))
        return prob, ref
    return prob, None


# ------------------------------------------------------------------ csv


def format_value(val):
    if val is None:
        return ""
    if isinstance(val, (int, np.integer)):
        return str(int(val))
    val = float(val)
    if math.isnan(val):
        return ""
    return format(val, ".17g")


class TraceWriter:
    """Append rows to a CSV file, flushing after each one."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(COLUMNS)
        self._fh.flush()

    def __call__(self, row):
        self._writer.writerow([format_value(getattr(row, c)) for c in COLUMNS])
        self._fh.flush()

    def close(self):
        self._fh.close()


def run_experiment(cfg: ExperimentConfig, out=None) -> int:
    """Run one configured experiment and write its CSV trace.

    Returns the process exit status (0 on success, 1 on solver failure).
    """
    out = sys.stdout if out is None else out
    if cfg.experiment == "lemma-check":
        return lemma_check(cfg.max_iter, out=out)

    prob, ref = build_problem(cfg)
    writer = TraceWriter(cfg.output)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            trace = run(
                prob,
                cfg.schedule,
                cfg.stopping,
                cg_tol=cfg.cg_tol,
                reference_energy=ref,
                K1=cfg.K1,
                q=cfg.q,
                on_row=writer,
            )
    except IterationFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        writer.close()
    print(f"{cfg.experiment}: {len(trace)} rows written to {cfg.output}", file=out)
    return 0


# ------------------------------------------------------------ summarize


def read_trace(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        if header != COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(rec)}")
            try:
                rows.append([float(v) if v != "" else math.nan for v in rec])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return {c: np.array(col) for c, col in zip(COLUMNS, zip(*rows))}


def summarize(path) -> str:
    """Text report: fitted rate, tail ratio, final gap and CG work."""
    data = read_trace(path)
    n = data["n"]
    gaps = data["gap_ref"]
    fixed = np.all(data["eps_minus"] == data["eps_minus"][0]) and np.all(
        data["eps_plus"] == data["eps_plus"][0]
    )
    lines = [f"rows: {len(n)}", f"schedule: {'fixed' if fixed else 'varying'}"]

    if np.all(np.isnan(gaps)):
        lines.append("gap: no reference energy in trace")
    else:
        lines.append(f"final gap: {gaps[~np.isnan(gaps)][-1]:.6e}")
        first = gaps[n >= 1]
        if first.size and np.all(np.isfinite(first)):
            spread = np.ptp(first) / max(abs(first).max(), np.finfo(float).tiny)
            if spread < 1e-12:
                lines.append(f"gap constant per step: {first[0]:.12e}")
        mode = "exponential" if fixed else "algebraic"
        try:
            fit = fit_rate(gaps[n >= 1], n[n >= 1], mode=mode)
        except ValueError as exc:
            lines.append(f"rate fit: unavailable ({exc})")
        else:
            if mode == "exponential":
                lines.append(
                    f"rate fit ({mode}): log-slope {fit.exponent:.6g}, "
                    f"factor {math.exp(fit.exponent):.6g}, R^2 {fit.r_squared:.6f}"
                )
            else:
                lines.append(f"rate fit ({mode}): exponent {fit.exponent:.6g}, R^2 {fit.r_squared:.6f}")
            tail = fit.ratios[-5:]
            lines.append(f"tail ratio: {float(np.median(tail)):.6g}")
    iters = data["cg_iters"]
    lines.append(f"total CG iterations: {int(np.nansum(iters))}")
    return "\n".join(lines)


def lemma_check(n_max=10_000, out=None) -> int:
    out = sys.stdout if out is None else out
    report = check_algebraic_lemma(LEMMA_GAMMAS, n_max)
    g, n = report.argmin
    print(f"gammas: 0.1..5.0 (50 values), n = 1..{n_max}", file=out)
    print(f"minimum slack: {report.min_slack:.6e} at gamma={g:g}, n={n}", file=out)
    print(f"violations: {len(report.violations)}", file=out)
    return 0 if report.ok else 1


# ------------------------------------------------------------------ main


def build_parser():
    parser = argparse.ArgumentParser(prog="kacanov", description="Relaxed Kacanov iteration experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_sum = sub.add_parser("summarize", help="summarize a CSV trace")
    p_sum.add_argument("--csv", required=True)
    p_lem = sub.add_parser("lemma-check", help="scan the algebraic difference inequality")
    p_lem.add_argument("--nmax", type=int, default=10_000)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "run":
        try:
            cfg = load_config(args.config)
        except (ConfigError, OSError) as exc:
            print(f"error: invalid config: {exc}", file=sys.stderr)
            return 2
        return run_experiment(cfg)
    if args.command == "summarize":
        try:
            print(summarize(args.csv))
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return 0
    if args.nmax < 1:
        print("error: --nmax must be at least 1", file=sys.stderr)
        return 2
    return lemma_check(args.nmax)


if __name__ == "__main__":
    sys.exit(main())
