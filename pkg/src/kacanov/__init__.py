"""Relaxed Kacanov iteration for the p-Poisson problem, 1 < p <= 2."""

from .orlicz import Exponent, RelaxInterval, truncate, kappa, phi, phi_prime, A_eps, V_eps
from .sparse import SymSparseMatrix, NonConvergence, matvec, cg_solve
from .iterate import Fixed, Algebraic, StoppingRule, run, schedule_interval, fit_rate

__version__ = "0.1.0"
