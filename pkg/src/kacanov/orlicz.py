"""Relaxed energy kernel: truncation, the integrand kappa, the N-function phi
and the flux maps A and V.

All functions accept scalars or numpy arrays for the magnitude argument and
return objects of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Exponent",
    "RelaxInterval",
    "truncate",
    "kappa",
    "phi",
    "phi_prime",
    "A_eps",
    "V_eps",
]


@dataclass(frozen=True)
class Exponent:
    """Growth exponent ``p`` of the energy, restricted to ``1 < p <= 2``.

    Use :meth:`unchecked` to build an exponent outside that range (only the
    scalar peak recursion makes sense for ``p > 2``).
    """

    p: float
    checked: bool = True

    def __post_init__(self):
        p = float(self.p)
        object.__setattr__(self, "p", p)
        if not np.isfinite(p) or p <= 1.0:
            raise ValueError(f"exponent p must satisfy p > 1, got {p}")
        if self.checked and p > 2.0:
            raise ValueError(f"exponent p must satisfy 1 < p <= 2, got {p}")

    @classmethod
    def unchecked(cls, p: float) -> "Exponent":
        return cls(p, checked=False)

    def __float__(self):
        return self.p


@dataclass(frozen=True)
class RelaxInterval:
    """Truncation interval ``[eps_minus, eps_plus]`` for the gradient weight."""

    eps_minus: float
    eps_plus: float

    def __post_init__(self):
        lo, hi = float(self.eps_minus), float(self.eps_plus)
        object.__setattr__(self, "eps_minus", lo)
        object.__setattr__(self, "eps_plus", hi)
        if not (lo > 0.0 and hi > 0.0):
            raise ValueError(f"interval bounds must be positive, got [{lo}, {hi}]")
        if lo > hi:
            raise ValueError(f"eps_minus must not exceed eps_plus, got [{lo}, {hi}]")

    def contains(self, other: "RelaxInterval") -> bool:
        """True if ``other`` is a subinterval of this one."""
        return self.eps_minus <= other.eps_minus and self.eps_plus >= other.eps_plus

    @property
    def ratio(self) -> float:
        return self.eps_plus / self.eps_minus


def _p(p) -> float:
    return p.p if isinstance(p, Exponent) else float(p)


def _nonneg(t):
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("argument must be non-negative")
    return arr


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def truncate(a, eps: RelaxInterval):
    """Closest point projection of ``a`` onto ``eps``."""
    a = _nonneg(a)
    return _out(np.minimum(np.maximum(a, eps.eps_minus), eps.eps_plus))


def kappa(t, eps: RelaxInterval, p):
    """Relaxed energy density.

    Quadratic below ``eps_minus`` and above ``eps_plus``, ``t**p / p`` in
    between; continuous with continuous first derivative.
    """
    p = _p(p)
    t = _nonneg(t)
    lo, hi = eps.eps_minus, eps.eps_plus
    c = 1.0 / p - 0.5
    # breakpoints belong to the power-law branch
    below = 0.5 * lo ** (p - 2) * t**2 + c * lo**p
    above = 0.5 * hi ** (p - 2) * t**2 + c * hi**p
    middle = t**p / p
    return _out(np.where(t < lo, below, np.where(t > hi, above, middle)))


def phi(t, eps: RelaxInterval, p):
    """N-function ``kappa(t) - kappa(0)``.

    Evaluated branch by branch; the lower branch is the pure quadratic, so no
    cancellation occurs for small ``t``.
    """
    p = _p(p)
    t = _nonneg(t)
    lo, hi = eps.eps_minus, eps.eps_plus
    c = 1.0 / p - 0.5
    k0 = c * lo**p
    below = 0.5 * lo ** (p - 2) * t**2
    above = 0.5 * hi ** (p - 2) * t**2 + (c * hi**p - k0)
    middle = t**p / p - k0
    return _out(np.where(t < lo, below, np.where(t > hi, above, middle)))


def phi_prime(t, eps: RelaxInterval, p):
    p = _p(p)
    t = _nonneg(t)
    return _out(np.asarray(truncate(t, eps)) ** (p - 2) * t)


def _flux(P, eps, p, power):
    P = np.asarray(P, dtype=float)
    norm = np.linalg.norm(P, axis=-1, keepdims=True)
    coef = np.asarray(truncate(norm, eps)) ** ((_p(p) - 2) * power)
    out = coef * P
    # zero vector handled explicitly
    return np.where(norm > 0, out, 0.0)


def A_eps(P, eps: RelaxInterval, p):
    """Relaxed flux ``phi'(|P|)/|P| * P``; vectors along the last axis."""
    return _flux(P, eps, p, 1.0)


def V_eps(P, eps: RelaxInterval, p):
    """Square-root companion ``sqrt(phi'(|P|)/|P|) * P`` of :func:`A_eps`."""
    return _flux(P, eps, p, 0.5)
