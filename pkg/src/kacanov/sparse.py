"""Symmetric sparse storage and a Jacobi preconditioned conjugate gradient."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = ["SymSparseMatrix", "NonConvergence", "matvec", "cg_solve"]


class NonConvergence(RuntimeError):
    """Raised when CG exhausts its iteration budget."""

    def __init__(self, iters, residual):
        super().__init__(
            f"CG did not converge in {iters} iterations (relative residual {residual:.3e})"
        )
        self.iters = iters
        self.residual = residual


class SymSparseMatrix:
    """Square symmetric matrix in compressed row storage.

    Parameters
    ----------
    matrix : scipy sparse matrix or array_like
        Converted to CSR with sorted indices and summed duplicates.
    check : bool
        Verify symmetry to 1e-12 relative tolerance.
    """

    def __init__(self, matrix, check=True):
        csr = sp.csr_matrix(matrix, dtype=float)
        csr.sum_duplicates()
        csr.sort_indices()
        if csr.shape[0] != csr.shape[1]:
            raise ValueError(f"matrix must be square, got shape {csr.shape}")
        self._csr = csr
        if check:
            asym = abs(csr - csr.T)
            scale = abs(csr).max() if csr.nnz else 0.0
            if asym.nnz and asym.max() > 1e-12 * scale:
                raise ValueError("matrix is not symmetric")

    @classmethod
    def from_coo(cls, rows, cols, vals, n, check=True):
        return cls(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)), check=check)

    @property
    def n(self):
        return self._csr.shape[0]

    @property
    def indptr(self):
        return self._csr.indptr

    @property
    def indices(self):
        return self._csr.indices

    @property
    def data(self):
        return self._csr.data

    def diagonal(self):
        return self._csr.diagonal()

    def tocsr(self):
        return self._csr

    def toarray(self):
        return self._csr.toarray()

    def __matmul__(self, x):
        return matvec(self, x)

    def __repr__(self):
        return f"SymSparseMatrix(n={self.n}, nnz={self._csr.nnz})"


def matvec(A: SymSparseMatrix, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (A.n,):
        raise ValueError(f"dimension mismatch: matrix {A.n}, vector {x.shape}")
    return A.tocsr() @ x


# residual accepted as rounding-limited once below this many ulps of |A||x| + |b|
FLOOR_ULPS = 4.0
MAX_RESTARTS = 5
# iterations allowed after a restart before a rounding-limited iterate is accepted
RESTART_PATIENCE = 25


def attainable_residual(A: SymSparseMatrix, x, b):
    """Size of the residual that rounding alone produces for ``x``."""
    M = A.tocsr()
    scale = abs(M) @ np.abs(x) + np.abs(b)
    return FLOOR_ULPS * np.finfo(float).eps * np.linalg.norm(scale)


def cg_solve(A: SymSparseMatrix, b, rel_tol=1e-10, max_iter=None, precondition=True, callback=None):
    """Solve ``A x = b`` for SPD ``A``.

    Stops once the true residual satisfies ``||b - A x|| <= rel_tol ||b||``.
    A tolerance below what double precision can resolve for this system is
    met at the rounding floor instead (see :func:`attainable_residual`); the
    returned residual is always the true one.

    ``callback(x)``, if given, is called after every iteration.

    Returns
    -------
    x : ndarray
    iters : int
    residual : float
        Relative 2-norm residual of the returned ``x``.

    Raises
    ------
    NonConvergence
        If ``max_iter`` iterations do not reach ``rel_tol``.
    """
    b = np.asarray(b, dtype=float)
    n = A.n
    if b.shape != (n,):
        raise ValueError(f"dimension mismatch: matrix {n}, vector {b.shape}")
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    if max_iter is None:
        max_iter = max(10 * n, 100)
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")

    M = A.tocsr()
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0, 0.0
    target = rel_tol * bnorm

    if precondition:
        diag = M.diagonal()
        if np.any(diag <= 0):
            raise ValueError("Jacobi preconditioner needs a positive diagonal")
        inv_diag = 1.0 / diag
    else:
        inv_diag = np.ones(n)

    r = b.copy()
    z = inv_diag * r
    d = z.copy()
    rz = r @ z
    it = 0
    restarts = 0
    restart_it = 0
    best = (np.inf, None)
    floor = np.inf
    while it < max_iter:
        if restarts and it - restart_it > RESTART_PATIENCE and best[0] <= floor:
            break
        Ad = M @ d
        step = rz / (d @ Ad)
        x += step * d
        r -= step * Ad
        it += 1
        if callback is not None:
            callback(x)
        if np.linalg.norm(r) <= target:
            # the recursive residual drifts from the true one; confirm
            r = b - M @ x
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                return x, it, rnorm / bnorm
            if rnorm < best[0]:
                best = (rnorm, x.copy())
                floor = attainable_residual(A, x, b)
            if restarts == MAX_RESTARTS:
                break
            restarts += 1
            restart_it = it
            z = inv_diag * r
            d = z.copy()
            rz = r @ z
            continue
        z = inv_diag * r
        rz_new = r @ z
        d *= rz_new / rz
        d += z
        rz = rz_new
    rnorm, xbest = best
    if xbest is not None and rnorm <= floor:
        return xbest, it, rnorm / bnorm
    r = b - M @ x
    raise NonConvergence(it, np.linalg.norm(r) / bnorm)
