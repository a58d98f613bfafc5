"""Outer relaxed Kacanov loop, relaxation schedules and trace diagnostics.

A *problem* is any object exposing

- ``p``, ``area`` and ``reference_energy`` (``None`` if unknown),
- ``zero_field()``, ``gradient_norms(v)``, ``gradients(v)``, ``cell_measures()``,
- ``solve(weights, cg_tol, max_iter) -> (v, iters, residual)``,
- ``energy(v)``, ``energy_eps(v, eps)``, ``energy_va(v, weights)``.

:class:`kacanov.fem2d.FEMProblem`, :class:`kacanov.radial.RadialPeakProblem`
and :class:`kacanov.radial.ScalarPeakProblem` implement it.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .orlicz import RelaxInterval, A_eps, V_eps, truncate, _p
from .sparse import NonConvergence

log = logging.getLogger(__name__)

__all__ = [
    "Fixed",
    "Algebraic",
    "schedule_interval",
    "StoppingRule",
    "TraceRow",
    "IterationTrace",
    "IterationFailed",
    "kacanov_step",
    "run",
    "converged_surrogate",
    "rho",
    "compute_G",
    "default_q",
    "fit_rate",
    "RateFit",
    "lemma_constant",
    "check_algebraic_lemma",
    "LemmaReport",
    "rho_decay_slack",
    "sandwich_diagnostics",
]


# ------------------------------------------------------------ schedules


@dataclass(frozen=True)
class Fixed:
    eps: RelaxInterval


@dataclass(frozen=True)
class Algebraic:
    """Intervals ``[(n+1)^-alpha, (n+1)^beta]``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")

    def validate(self, p):
        """Check ``alpha + beta <= 1/(2 - p)``; warns at equality."""
        p = _p(p)
        if p >= 2.0:
            return
        bound = 1.0 / (2.0 - p)
        total = self.alpha + self.beta
        if total > bound * (1 + 1e-12):
            raise ValueError(
                f"algebraic schedule needs alpha + beta <= 1/(2-p) = {bound:.6g}, got {total:.6g}"
            )
        if math.isclose(total, bound, rel_tol=1e-12):
            warnings.warn("alpha + beta sits exactly on the bound 1/(2-p)", stacklevel=2)


def schedule_interval(schedule, n: int) -> RelaxInterval:
    if n < 0:
        raise ValueError("n must be non-negative")
    if isinstance(schedule, Fixed):
        return schedule.eps
    if isinstance(schedule, Algebraic):
        k = float(n + 1)
        return RelaxInterval(k ** (-schedule.alpha), k**schedule.beta)
    raise TypeError(f"unknown schedule {schedule!r}")


@dataclass(frozen=True)
class StoppingRule:
    max_iter: int = 20
    min_decrement: float = 0.0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.min_decrement < 0:
            raise ValueError("min_decrement must be non-negative")


# ---------------------------------------------------------------- trace


@dataclass
class TraceRow:
    """Quantities of iterate ``v_n``; step columns describe ``v_n -> v_{n+1}``
    and stay ``None`` on the last row."""

    n: int
    eps_minus: float
    eps_plus: float
    J_eps_vn: float
    J_vn: float
    decrement: Optional[float] = None
    delta_measured: Optional[float] = None
    rho_n: Optional[float] = None
    G_n: Optional[float] = None
    gap_ref: Optional[float] = None
    cg_iters: Optional[int] = None
    cg_residual: Optional[float] = None

    @property
    def eps(self):
        return RelaxInterval(self.eps_minus, self.eps_plus)


COLUMNS = [f.name for f in fields(TraceRow)]


@dataclass
class IterationTrace:
    rows: list = field(default_factory=list)
    fields_: list = field(default_factory=list, repr=False)
    reference_energy: Optional[float] = None
    error: Optional[Exception] = None

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def column(self, name):
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.rows])

    @property
    def final_field(self):
        return self.fields_[-1] if self.fields_ else None


class IterationFailed(RuntimeError):
    """Inner solver failure; ``trace`` holds the rows computed so far."""

    def __init__(self, trace, cause):
        super().__init__(f"Kacanov iteration aborted at step {len(trace.rows) - 1}: {cause}")
        self.trace = trace
        self.cause = cause


# ------------------------------------------------------------ iteration


def kacanov_step(problem, v, eps: RelaxInterval, cg_tol=1e-10, max_iter=None):
    """Freeze the weight at ``truncate(|grad v|)`` and solve the linear problem.

    Returns ``(v_next, weights, cg_iters, cg_residual)``.
    """
    weights = truncate(problem.gradient_norms(v), eps)
    v_next, iters, res = problem.solve(np.atleast_1d(weights), cg_tol=cg_tol, max_iter=max_iter)
    return v_next, weights, iters, res


def default_q(p, d=2):
    """Gradient integrability ``p d / (d - 1)`` used for ``rho_n``."""
    return _p(p) * d / (d - 1)


def rho(eps: RelaxInterval, p, q) -> float:
    """Relaxation error proxy ``eps_minus^p + eps_plus^-(q-p)``."""
    p = _p(p)
    if q <= p:
        raise ValueError(f"q must exceed p, got q={q}, p={p}")
    return eps.eps_minus**p + eps.eps_plus ** (-(q - p))


def compute_G(row: TraceRow, K1: float, q: float, p) -> float:
    """``J_eps_n(v_n) + K1 rho_n``."""
    if K1 < 0:
        raise ValueError("K1 must be non-negative")
    return row.J_eps_vn + K1 * rho(row.eps, p, q)


def run(
    problem,
    schedule,
    stopping: StoppingRule = StoppingRule(),
    v0=None,
    cg_tol=1e-10,
    cg_max_iter=None,
    reference_energy=None,
    K1=1.0,
    q=None,
    keep_fields=False,
    on_row=None,
):
    """Run the relaxed Kacanov iteration.

    Parameters
    ----------
    problem
        See the module docstring.
    schedule : Fixed or Algebraic
    stopping : StoppingRule
        ``min_decrement`` is honoured for :class:`Fixed` schedules only.
    v0 : array_like, optional
        Start field, zero by default.
    reference_energy : float, optional
        Energy the gap column is measured against; falls back to
        ``problem.reference_energy``.
    K1, q : float
        Weights of ``G_n``; ``q`` defaults to ``2p``.
    keep_fields : bool
        Store every iterate in ``trace.fields_`` (otherwise only the last).
    on_row : callable, optional
        Called with each finished :class:`TraceRow`.

    Raises
    ------
    IterationFailed
        If an inner solve does not converge.
    """
    p = problem.p
    if isinstance(schedule, Algebraic):
        schedule.validate(p)
    q = default_q(p) if q is None else q
    if q <= p:
        raise ValueError(f"q must exceed p, got q={q}, p={p}")
    ref = problem.reference_energy if reference_energy is None else reference_energy
    trace = IterationTrace(reference_energy=ref)

    v = problem.zero_field() if v0 is None else np.array(v0, dtype=float)
    fields_ = [v] if keep_fields else None

    def make_row(n, v):
        eps = schedule_interval(schedule, n)
        row = TraceRow(n, eps.eps_minus, eps.eps_plus, problem.energy_eps(v, eps), problem.energy(v))
        row.rho_n = rho(eps, p, q)
        row.G_n = compute_G(row, K1, q, p)
        if ref is not None:
            row.gap_ref = row.J_eps_vn - ref
        return row

    row = make_row(0, v)
    for n in range(stopping.max_iter):
        eps = row.eps
        try:
            v_next, _, iters, res = kacanov_step(problem, v, eps, cg_tol, cg_max_iter)
        except NonConvergence as exc:
            trace.rows.append(row)
            trace.fields_ = fields_ or [v]
            trace.error = exc
            if on_row:
                on_row(row)
            raise IterationFailed(trace, exc) from exc
        row.decrement = row.J_eps_vn - problem.energy_eps(v_next, eps)
        row.cg_iters, row.cg_residual = iters, res
        if row.gap_ref is not None and row.gap_ref > 0:
            row.delta_measured = row.decrement / row.gap_ref
        trace.rows.append(row)
        if on_row:
            on_row(row)
        v = v_next
        if keep_fields:
            fields_.append(v)
        row = make_row(n + 1, v)
        if isinstance(schedule, Fixed) and row_decrement_below(trace.rows[-1], stopping):
            break
    trace.rows.append(row)
    if on_row:
        on_row(row)
    trace.fields_ = fields_ if keep_fields else [v]
    return trace


def row_decrement_below(row, stopping):
    return stopping.min_decrement > 0 and row.decrement < stopping.min_decrement


def converged_surrogate(problem, eps: RelaxInterval, tol=1e-13, max_iter=2000, cg_tol=1e-12):
    """Minimizer of ``J_eps`` by fixed-interval iteration until the
    decrement drops below ``tol``. Returns ``(u_eps, J_eps(u_eps))``."""
    trace = run(
        problem,
        Fixed(eps),
        StoppingRule(max_iter=max_iter, min_decrement=tol),
        cg_tol=cg_tol,
    )
    last = trace.rows[-2]
    if last.decrement >= tol:
        raise RuntimeError(f"surrogate not converged after {max_iter} steps")
    return trace.final_field, trace.rows[-1].J_eps_vn


# ------------------------------------------------------------ analysis


@dataclass
class RateFit:
    mode: str
    exponent: float
    intercept: float
    r_squared: float
    ratios: np.ndarray
    steps: np.ndarray


def fit_rate(gaps, steps=None, mode="algebraic", min_points=5):
    """Least-squares fit of ``log(gap)`` against ``log(n)`` (algebraic) or ``n``
    (exponential).

    The exponent is the slope of the fit; in exponential mode ``exp(slope)``
    is the mean reduction factor. Rows with a non-positive or missing gap are
    dropped.
    """
    gaps = np.asarray(gaps, dtype=float)
    steps = np.arange(len(gaps), dtype=float) if steps is None else np.asarray(steps, dtype=float)
    ok = np.isfinite(gaps) & (gaps > 0)
    if mode == "algebraic":
        ok &= steps > 0
    elif mode != "exponential":
        raise ValueError(f"unknown fit mode {mode!r}")
    if ok.sum() < min_points:
        raise ValueError(f"need at least {min_points} positive gaps, got {int(ok.sum())}")
    g, n = gaps[ok], steps[ok]
    x = np.log(n) if mode == "algebraic" else n
    y = np.log(g)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(mode, float(slope), float(intercept), float(r2), g[1:] / g[:-1], n)


def lemma_constant(gamma: float) -> float:
    """``min(gamma/2, 1 - 2^-gamma)``."""
    # same expression as the n = 1 term of the scan, so equality cases cancel exactly
    return min(0.5 * gamma, float(-np.expm1(-gamma * np.log1p(1.0))))


@dataclass
class LemmaReport:
    min_slack: float
    argmin: tuple
    violations: list

    @property
    def ok(self):
        return not self.violations


def check_algebraic_lemma(gammas, n_max=10_000) -> LemmaReport:
    """Scan ``n^-g - (n+1)^-g - n^(-g-1) min(g/2, 1-2^-g)`` for ``n = 1..n_max``.

    The slack is reported relative to ``n^(-g-1)`` so that it stays
    comparable across ``n``; negative values are violations.
    """
    n = np.arange(1, n_max + 1, dtype=float)
    best = (math.inf, None)
    violations = []
    for g in gammas:
        if g <= 0:
            raise ValueError("gamma must be positive")
        # n^-g - (n+1)^-g = n^-g * (1 - (1 + 1/n)^-g), written to avoid cancellation
        diff_scaled = -n * np.expm1(-g * np.log1p(1.0 / n))
        slack = diff_scaled - lemma_constant(g)
        i = int(np.argmin(slack))
        if slack[i] < best[0]:
            best = (float(slack[i]), (float(g), int(n[i])))
        bad = np.flatnonzero(slack < 0)
        violations += [(float(g), int(n[j]), float(slack[j])) for j in bad]
    return LemmaReport(best[0], best[1], violations)


def rho_decay_slack(schedule: Algebraic, p, q, n_max=1000):
    """Minimum over ``n`` of ``(rho_n - rho_{n+1}) (n+1) / rho_n - 1/c2``.

    ``c2`` is the reciprocal of the smaller lemma constant of the two
    exponents ``alpha p`` and ``(q - p) beta``.
    """
    p = _p(p)
    c2_inv = min(lemma_constant(schedule.alpha * p), lemma_constant((q - p) * schedule.beta))
    vals = np.array([rho(schedule_interval(schedule, n), p, q) for n in range(n_max + 1)])
    k = np.arange(1, n_max + 1, dtype=float)
    ratio = (vals[:-1] - vals[1:]) * k / vals[:-1]
    return float(np.min(ratio - c2_inv)), c2_inv


def sandwich_diagnostics(problem, v, u_eps, eps: RelaxInterval):
    """The three quantities bounding the energy gap from above and below.

    Returns ``(energy_gap, A_form, V_form)`` with
    ``energy_gap = J_eps(v) - J_eps(u_eps)``,
    ``A_form = int (A(grad v) - A(grad u_eps)) . grad(v - u_eps)`` and
    ``V_form = int |V(grad v) - V(grad u_eps)|^2``.
    """
    p = problem.p
    gv, gu = problem.gradients(v), problem.gradients(u_eps)
    w = problem.cell_measures()
    gap = problem.energy_eps(v, eps) - problem.energy_eps(u_eps, eps)
    a_form = float(w @ np.sum((A_eps(gv, eps, p) - A_eps(gu, eps, p)) * (gv - gu), axis=1))
    v_form = float(w @ np.sum((V_eps(gv, eps, p) - V_eps(gu, eps, p)) ** 2, axis=1))
    return gap, a_form, v_form
