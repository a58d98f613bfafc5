"""Radially symmetric P1 discretization of the unit disk and the peak example.

The minimizer of the peak problem is ``u(r) = 1 - r``, which lies in the
radial P1 space on every mesh. With ``v_0 = 0`` each Kacanov iterate is a
scalar multiple ``alpha_n * u``, so the discrete iteration can be checked
against the scalar recursion and its closed-form energy gap.
"""

from __future__ import annotations

import math

import numpy as np

from .orlicz import Exponent, RelaxInterval, kappa, _p
from .sparse import SymSparseMatrix, cg_solve

__all__ = [
    "DISK_AREA",
    "RadialMesh",
    "PeakState",
    "radial_assemble",
    "radial_peak_load",
    "radial_energy_J",
    "radial_energy_Jeps",
    "peak_step",
    "peak_alpha",
    "peak_energy_gap_exact",
    "peak_reference_energy",
    "RadialPeakProblem",
    "ScalarPeakProblem",
]

DISK_AREA = math.pi


class RadialMesh:
    """Node radii ``0 = r_0 < ... < r_m = 1``."""

    def __init__(self, radii):
        r = np.asarray(radii, dtype=float)
        if r.ndim != 1 or len(r) < 2:
            raise ValueError("need at least two radii")
        if r[0] != 0.0 or r[-1] != 1.0:
            raise ValueError("radii must start at 0 and end at 1")
        if np.any(np.diff(r) <= 0):
            raise ValueError("radii must be strictly increasing")
        self.radii = r
        self.h = np.diff(r)
        # int r dr over each interval
        self.moments = 0.5 * (r[1:] ** 2 - r[:-1] ** 2)

    @classmethod
    def uniform(cls, m: int) -> "RadialMesh":
        if int(m) != m or m < 1:
            raise ValueError(f"number of intervals must be a positive integer, got {m}")
        return cls(np.linspace(0.0, 1.0, int(m) + 1))

    @property
    def m(self):
        return len(self.h)

    def slopes(self, field):
        field = np.asarray(field, dtype=float)
        if field.shape != self.radii.shape:
            raise ValueError("field must have one value per radius node")
        return np.diff(field) / self.h

    def interpolate(self, fn):
        values = np.asarray(fn(self.radii), dtype=float)
        values = np.broadcast_to(values, self.radii.shape).copy()
        values[-1] = 0.0
        return values


def radial_assemble(mesh: RadialMesh, weights, p) -> SymSparseMatrix:
    """Tridiagonal matrix of ``2 pi int w^(p-2) v' xi' r dr`` on nodes
    ``r_0 .. r_{m-1}`` (the Dirichlet node ``r_m = 1`` is removed)."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (mesh.m,) or np.any(w <= 0):
        raise ValueError("need one positive weight per interval")
    k = 2.0 * math.pi * w ** (_p(p) - 2) * mesh.moments / mesh.h**2
    m = mesh.m
    diag = np.zeros(m + 1)
    diag[:-1] += k
    diag[1:] += k
    off = -k[:-1]
    i = np.arange(m)
    rows = np.concatenate([i, i[:-1], i[1:]])
    cols = np.concatenate([i, i[1:], i[:-1]])
    vals = np.concatenate([diag[:m], off, off])
    return SymSparseMatrix.from_coo(rows, cols, vals, m, check=False)


def radial_peak_load(mesh: RadialMesh) -> np.ndarray:
    """``-2 pi int xi_i' r dr`` for the free nodes ``r_0 .. r_{m-1}``."""
    flux = 2.0 * math.pi * mesh.moments / mesh.h
    b = np.zeros(mesh.m + 1)
    b[:-1] += flux
    b[1:] -= flux
    return b[:-1]


def _pair(mesh, field):
    return float(radial_peak_load(mesh) @ np.asarray(field, dtype=float)[:-1])


def radial_energy_J(mesh: RadialMesh, field, p) -> float:
    p = _p(p)
    s = np.abs(mesh.slopes(field))
    return float(2.0 * math.pi * (mesh.moments @ (s**p / p))) - _pair(mesh, field)


def radial_energy_Jeps(mesh: RadialMesh, field, eps: RelaxInterval, p) -> float:
    s = np.abs(mesh.slopes(field))
    return float(2.0 * math.pi * (mesh.moments @ kappa(s, eps, p))) - _pair(mesh, field)


# --------------------------------------------------------- scalar model


class PeakState:
    """Coefficient ``alpha_n`` of the iterate ``v_n = alpha_n (1 - r)``."""

    __slots__ = ("alpha", "n")

    def __init__(self, alpha=0.0, n=0):
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.alpha = float(alpha)
        self.n = int(n)

    def __repr__(self):
        return f"PeakState(alpha={self.alpha!r}, n={self.n})"


def peak_step(state: PeakState, eps: RelaxInterval, p) -> PeakState:
    """One Kacanov step of the peak example: ``alpha -> truncate(alpha)^(2-p)``."""
    # plain floats: this is a scalar recursion and numpy overhead dominates
    a = min(max(state.alpha, eps.eps_minus), eps.eps_plus)
    return PeakState(a ** (2.0 - _p(p)), state.n + 1)


def peak_alpha(n: int, eps: RelaxInterval, p) -> float:
    """Iterate the scalar recursion ``n`` times from ``alpha_0 = 0``."""
    state = PeakState()
    for _ in range(n):
        state = peak_step(state, eps, p)
    return state.alpha


def peak_reference_energy(p) -> float:
    """``J(u) = (1/p - 1) pi`` for ``u = 1 - r``."""
    return (1.0 / _p(p) - 1.0) * DISK_AREA


def peak_energy_gap_exact(n, eps: RelaxInterval, p) -> float:
    """Closed-form ``J_eps(v_n) - J(u)`` for the peak iteration from ``v_0 = 0``.

    Valid for ``eps_minus <= 1 <= eps_plus``. For ``n = 0`` the iterate is
    zero and the gap is ``pi (kappa(0) - 1/p + 1)``.
    """
    p = _p(p)
    if not (eps.eps_minus <= 1.0 <= eps.eps_plus):
        raise ValueError("closed form needs eps_minus <= 1 <= eps_plus")
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return DISK_AREA * (kappa(0.0, eps, p) - 1.0 / p + 1.0)
    x = (2.0 - p) ** n * math.log(eps.eps_minus)
    return DISK_AREA / p * _expm1_defect(x, p)


def _expm1_defect(x, p):
    """``expm1(p x) - p expm1(x)`` without cancellation for small ``|x|``."""
    if abs(x) > 0.5:
        return math.expm1(p * x) - p * math.expm1(x)
    # sum_{k>=2} (p^k - p) x^k / k!
    total, term, pk = 0.0, x, p
    for k in range(2, 40):
        term *= x / k
        pk *= p
        total += (pk - p) * term
        if abs((pk - p) * term) <= 1e-17 * abs(total):
            break
    return total


# ------------------------------------------------------------- problems


class RadialPeakProblem:
    """Peak problem on the unit disk in the radial P1 discretization."""

    def __init__(self, mesh: RadialMesh, p):
        self.mesh = mesh
        self.p = _p(p)
        self.rhs = radial_peak_load(mesh)
        self.reference_energy = peak_reference_energy(self.p)
        self._measures = 2.0 * math.pi * mesh.moments

    area = DISK_AREA

    def zero_field(self):
        return np.zeros(self.mesh.m + 1)

    def gradient_norms(self, field):
        return np.abs(self.mesh.slopes(field))

    def gradients(self, field):
        return self.mesh.slopes(field)[:, None]

    def cell_measures(self):
        return self._measures

    def solve(self, weights, cg_tol=1e-10, max_iter=None):
        A = radial_assemble(self.mesh, weights, self.p)
        x, iters, res = cg_solve(A, self.rhs, rel_tol=cg_tol, max_iter=max_iter)
        return np.append(x, 0.0), iters, res

    def energy(self, field):
        return radial_energy_J(self.mesh, field, self.p)

    def energy_eps(self, field, eps):
        return radial_energy_Jeps(self.mesh, field, eps, self.p)

    def energy_va(self, field, weights):
        p = self.p
        w = np.asarray(weights, dtype=float)
        t = self.gradient_norms(field)
        dens = 0.5 * w ** (p - 2) * t**2 + (1.0 / p - 0.5) * w**p
        return float(self._measures @ dens) - _pair(self.mesh, field)


class ScalarPeakProblem:
    """The peak example reduced to its coefficient: the field is ``[alpha]``.

    Accepts any ``p > 1``, so it also covers the non-convergent ``p >= 3``
    regime.
    """

    def __init__(self, p):
        self.p = _p(p) if isinstance(p, Exponent) else Exponent.unchecked(p).p
        self.reference_energy = peak_reference_energy(self.p)
        self._measures = np.array([DISK_AREA])

    area = DISK_AREA

    def zero_field(self):
        return np.zeros(1)

    def gradient_norms(self, field):
        return np.abs(np.asarray(field, dtype=float))

    def gradients(self, field):
        return np.asarray(field, dtype=float)[:, None]

    def cell_measures(self):
        return self._measures

    def solve(self, weights, cg_tol=1e-10, max_iter=None):
        w = np.asarray(weights, dtype=float)
        return w ** (2.0 - self.p), 0, 0.0

    def energy(self, field):
        a = float(field[0])
        return DISK_AREA * (abs(a) ** self.p / self.p - a)

    def energy_eps(self, field, eps):
        a = float(field[0])
        return DISK_AREA * (kappa(abs(a), eps, self.p) - a)

    def energy_va(self, field, weights):
        a, w, p = float(field[0]), float(weights[0]), self.p
        return DISK_AREA * (0.5 * w ** (p - 2) * a * a + (1.0 / p - 0.5) * w**p - a)
