"""P1 finite elements on triangulations of planar domains.

Meshes are generated deterministically (unit square, L-shape). Gradients of
P1 functions are constant per triangle, so every energy evaluated here is
exact for the discrete field; only the load pairing uses quadrature
(one point at the barycenter).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .orlicz import RelaxInterval, kappa, truncate, _p
from .sparse import SymSparseMatrix, cg_solve

__all__ = [
    "TriMesh",
    "Density",
    "DivergenceForm",
    "unit_square_mesh",
    "l_shape_mesh",
    "write_mesh",
    "element_gradient",
    "element_gradients",
    "compute_weights",
    "assemble_weighted_stiffness",
    "assemble_load",
    "energy_J",
    "energy_Jeps",
    "energy_Jva",
    "FEMProblem",
]


class TriMesh:
    """Triangulation with vertex coordinates, triangles and boundary flags.

    Element areas and the gradients of the barycentric basis functions are
    computed once at construction.
    """

    def __init__(self, vertices, triangles, boundary=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (N, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must have shape (M, 3)")

        x = self.vertices[self.triangles]  # (M, 3, 2)
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0):
            raise ValueError("triangles must have positive signed area")
        self.areas = 0.5 * det

        # rows of the inverse Jacobian are the gradients of lambda_1, lambda_2
        g1 = np.stack([e2[:, 1], -e2[:, 0]], axis=1) / det[:, None]
        g2 = np.stack([-e1[:, 1], e1[:, 0]], axis=1) / det[:, None]
        self.basis_gradients = np.stack([-g1 - g2, g1, g2], axis=1)  # (M, 3, 2)

        edge_flags = self._boundary_from_edges()
        if boundary is None:
            boundary = edge_flags
        else:
            boundary = np.asarray(boundary, dtype=bool)
            if not np.array_equal(boundary, edge_flags):
                raise ValueError("boundary flags disagree with the edge structure")
        self.boundary = boundary

    def _boundary_from_edges(self):
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges.sort(axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise ValueError("an edge is shared by more than two triangles")
        flags = np.zeros(len(self.vertices), dtype=bool)
        flags[uniq[counts == 1].ravel()] = True
        return flags

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def area(self):
        return float(self.areas.sum())

    @property
    def interior(self):
        return ~self.boundary

    def barycenters(self):
        return self.vertices[self.triangles].mean(axis=1)


def _grid_triangles(idx, cells):
    """Split each cell (i, j) of a vertex index grid into two triangles.

    Diagonals alternate in a checkerboard pattern.
    """
    tris = []
    for i, j in cells:
        a, b = idx[j, i], idx[j, i + 1]
        c, d = idx[j + 1, i + 1], idx[j + 1, i]
        if (i + j) % 2 == 0:
            tris += [(a, b, c), (a, c, d)]
        else:
            tris += [(a, b, d), (b, c, d)]
    return np.array(tris, dtype=np.int64)


def unit_square_mesh(n: int) -> TriMesh:
    """Uniform mesh of the unit square with ``n`` cells per side."""
    if int(n) != n or n < 1:
        raise ValueError(f"mesh resolution must be a positive integer, got {n}")
    n = int(n)
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    cells = [(i, j) for j in range(n) for i in range(n)]
    return TriMesh(vertices, _grid_triangles(idx, cells))


def l_shape_mesh(n: int) -> TriMesh:
    """Mesh of ``[-1, 1]^2`` minus ``[0, 1] x [-1, 0]``, ``n`` cells per side.

    ``n`` must be even so that the reentrant corner is a vertex.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"mesh resolution must be a positive integer, got {n}")
    n = int(n)
    if n % 2:
        raise ValueError(f"L-shape resolution must be even, got {n}")
    half = n // 2
    cells = [(i, j) for j in range(n) for i in range(n) if not (i >= half and j < half)]
    full_idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    tris = _grid_triangles(full_idx, cells)

    used = np.unique(tris)
    renumber = np.full((n + 1) ** 2, -1, dtype=np.int64)
    renumber[used] = np.arange(len(used))
    s = np.linspace(-1.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)
    coords = np.column_stack([X.ravel(), Y.ravel()])[used]
    return TriMesh(coords, renumber[tris])


def write_mesh(mesh: TriMesh, path) -> None:
    """Write the plain-text node/element format (zero-based indices)."""
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_vertices} triangles {mesh.n_triangles}\n")
        for (x, y), b in zip(mesh.vertices, mesh.boundary):
            fh.write(f"{float(x)!r} {float(y)!r} {int(b)}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


# ---------------------------------------------------------------- loads


@dataclass(frozen=True)
class Density:
    """Load ``<f, xi> = int g xi dx``; ``g(x, y)`` evaluated on arrays."""

    g: Callable


@dataclass(frozen=True)
class DivergenceForm:
    """Load ``<f, xi> = int F . grad(xi) dx``; ``F(x, y)`` returns ``(Fx, Fy)``."""

    F: Callable


def _evaluate(fn, x, y, shape):
    vals = np.broadcast_to(np.asarray(fn(x, y), dtype=float), shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("load function is not finite at a quadrature point")
    return vals


def assemble_load(mesh: TriMesh, load) -> np.ndarray:
    """Load vector over all basis functions, boundary ones included."""
    bc = mesh.barycenters()
    x, y = bc[:, 0], bc[:, 1]
    b = np.zeros(mesh.n_vertices)
    if isinstance(load, Density):
        g = _evaluate(load.g, x, y, x.shape)
        local = np.repeat((g * mesh.areas / 3.0)[:, None], 3, axis=1)
    elif isinstance(load, DivergenceForm):
        F = _evaluate(load.F, x, y, (2,) + x.shape).T  # (M, 2)
        local = np.einsum("tkd,td->tk", mesh.basis_gradients, F) * mesh.areas[:, None]
    else:
        raise TypeError(f"unsupported load specification {load!r}")
    np.add.at(b, mesh.triangles.ravel(), local.ravel())
    return b


# ------------------------------------------------------------ gradients


def element_gradients(mesh: TriMesh, field) -> np.ndarray:
    """Constant gradient of the P1 interpolant on every triangle, shape (M, 2)."""
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.n_vertices,):
        raise ValueError("field must have one value per vertex")
    return np.einsum("tk,tkd->td", field[mesh.triangles], mesh.basis_gradients)


def element_gradient(mesh: TriMesh, field, t: int) -> np.ndarray:
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle index {t} out of range")
    field = np.asarray(field, dtype=float)
    return field[mesh.triangles[t]] @ mesh.basis_gradients[t]


def _grad_norms(mesh, field):
    return np.linalg.norm(element_gradients(mesh, field), axis=1)


def compute_weights(mesh: TriMesh, field, eps: RelaxInterval) -> np.ndarray:
    """Per-triangle weight ``eps_minus v |grad v| ^ eps_plus``."""
    return truncate(_grad_norms(mesh, field), eps)


# ------------------------------------------------------------- assembly


def assemble_weighted_stiffness(mesh: TriMesh, weights, p, dirichlet=True) -> SymSparseMatrix:
    """Stiffness matrix of ``int w^(p-2) grad u . grad v``.

    With ``dirichlet`` set, rows and columns of boundary vertices are
    replaced by those of the identity.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (mesh.n_triangles,) or np.any(w <= 0):
        raise ValueError("need one positive weight per triangle")
    coef = w ** (_p(p) - 2) * mesh.areas
    G = mesh.basis_gradients
    local = np.einsum("t,tid,tjd->tij", coef, G, G)

    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    vals = local.ravel()
    if not dirichlet:
        return SymSparseMatrix.from_coo(rows, cols, vals, mesh.n_vertices, check=False)
    bnd = mesh.boundary
    keep = ~(bnd[rows] | bnd[cols])
    bidx = np.flatnonzero(bnd)
    rows = np.concatenate([rows[keep], bidx])
    cols = np.concatenate([cols[keep], bidx])
    vals = np.concatenate([vals[keep], np.ones(len(bidx))])
    return SymSparseMatrix.from_coo(rows, cols, vals, mesh.n_vertices, check=False)


# ------------------------------------------------------------- energies


def _pairing(mesh, field, load):
    if load is None:
        return 0.0
    b = load if isinstance(load, np.ndarray) else assemble_load(mesh, load)
    return float(b @ np.asarray(field, dtype=float))


def energy_J(mesh: TriMesh, field, p, load=None) -> float:
    """``sum_T |T| |grad v|^p / p - <f, v>``; ``inf`` if not finite."""
    p = _p(p)
    val = float(mesh.areas @ (_grad_norms(mesh, field) ** p / p)) - _pairing(mesh, field, load)
    return val if np.isfinite(val) else float("inf")


def energy_Jeps(mesh: TriMesh, field, eps: RelaxInterval, p, load=None) -> float:
    return float(mesh.areas @ kappa(_grad_norms(mesh, field), eps, p)) - _pairing(
        mesh, field, load
    )


def energy_Jva(mesh: TriMesh, field, weights, p, load=None) -> float:
    """Energy with the weight frozen: ``sum_T |T| (w^(p-2) t^2 / 2 + (1/p - 1/2) w^p)``."""
    p = _p(p)
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    t = _grad_norms(mesh, field)
    dens = 0.5 * w ** (p - 2) * t**2 + (1.0 / p - 0.5) * w**p
    return float(mesh.areas @ dens) - _pairing(mesh, field, load)


# -------------------------------------------------------------- problem


class FEMProblem:
    """p-Poisson problem on a triangulation, with zero Dirichlet data.

    Parameters
    ----------
    mesh : TriMesh
    load : Density or DivergenceForm
    p : Exponent or float
    reference_energy : float, optional
        Known value of the discrete minimum ``J(u)``.
    """

    def __init__(self, mesh: TriMesh, load, p, reference_energy=None):
        self.mesh = mesh
        self.p = _p(p)
        self.load = load
        self.load_vector = assemble_load(mesh, load)
        self.rhs = np.where(mesh.boundary, 0.0, self.load_vector)
        self.reference_energy = reference_energy

    @property
    def area(self):
        return self.mesh.area

    def zero_field(self):
        return np.zeros(self.mesh.n_vertices)

    def gradient_norms(self, field):
        return _grad_norms(self.mesh, field)

    def cell_measures(self):
        return self.mesh.areas

    def gradients(self, field):
        return element_gradients(self.mesh, field)

    def solve(self, weights, cg_tol=1e-10, max_iter=None):
        """Solve the linear problem with frozen weights; returns ``(v, iters, residual)``."""
        A = assemble_weighted_stiffness(self.mesh, weights, self.p)
        return cg_solve(A, self.rhs, rel_tol=cg_tol, max_iter=max_iter)

    def energy(self, field):
        return energy_J(self.mesh, field, self.p, self.load_vector)

    def energy_eps(self, field, eps):
        return energy_Jeps(self.mesh, field, eps, self.p, self.load_vector)

    def energy_va(self, field, weights):
        return energy_Jva(self.mesh, field, weights, self.p, self.load_vector)
