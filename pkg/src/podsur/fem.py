"""P1 finite elements for ``-div(kappa grad u) + beta u = f`` with Dirichlet data.

The inflow edge ``x = 0`` carries ``u = q_in``; every other boundary node is
held at zero. The discrete system is ``(kappa S + beta M) u = f`` where ``S``
and ``M`` are the global stiffness and mass matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, NodeClass

__all__ = [
    "ParameterSample",
    "AssemblyError",
    "ConvergenceError",
    "AssembledSystem",
    "SolveInfo",
    "SOURCES",
    "get_source",
    "element_stiffness",
    "element_mass",
    "assemble_matrices",
    "assemble",
    "impose_dirichlet",
    "pcg",
    "solve",
    "solve_instance",
    "FemProblem",
    "export_field",
]


class ParameterSample(NamedTuple):
    """One PDE instance: diffusivity, reaction rate, inflow concentration."""

    kappa: float
    beta: float
    q_in: float


class AssemblyError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


Source = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _sinsin(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def _zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


SOURCES: dict[str, Source] = {
    "sinsin": _sinsin,
    "zero": _zero,
}


def get_source(source) -> Source:
    """Resolve a source identifier (or pass a callable through)."""
    if callable(source):
        return source
    try:
        return SOURCES[source]
    except KeyError:
        raise KeyError(f"unknown source {source!r}; known: {sorted(SOURCES)}") from None


def element_stiffness(area: float, grads: np.ndarray) -> np.ndarray:
    """Local ``3x3`` stiffness: ``area * grads @ grads.T``."""
    return area * grads @ grads.T


_MASS_PATTERN = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])


def element_mass(area: float) -> np.ndarray:
    """Exact local P1 mass matrix ``area / 12 * [[2,1,1],[1,2,1],[1,1,2]]``."""
    return area / 12.0 * _MASS_PATTERN


def _to_csr(rows, cols, vals, n) -> sp.csr_matrix:
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_matrices(mesh: Mesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Global stiffness and mass matrices of ``mesh`` in CSR form."""
    tri = mesh.triangles
    areas = mesh.areas
    grads = mesh.gradients
    ke = areas[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)
    me = areas[:, None, None] / 12.0 * _MASS_PATTERN
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    S = _to_csr(rows, cols, ke.ravel(), n)
    M = _to_csr(rows, cols, me.ravel(), n)
    # guard: A == A.T bitwise regardless of duplicate summation order
    S = _to_csr_sym(S)
    M = _to_csr_sym(M)
    return S, M


def _to_csr_sym(A: sp.csr_matrix) -> sp.csr_matrix:
    B = ((A + A.T) * 0.5).tocsr()
    B.sort_indices()
    return B


def _evaluate_source(mesh: Mesh, source) -> np.ndarray:
    fn = get_source(source)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    vals = np.asarray(fn(x, y), dtype=float)
    if vals.shape == ():
        vals = np.full(mesh.n_nodes, float(vals))
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        i = int(bad[0])
        raise AssemblyError(f"source is not finite at node {i} ({x[i]!r}, {y[i]!r})")
    return vals


def _check_coefficients(kappa, beta):
    if not (math.isfinite(kappa) and kappa > 0):
        raise ValueError(f"kappa must be positive and finite, got {kappa}")
    if not (math.isfinite(beta) and beta >= 0):
        raise ValueError(f"beta must be non-negative and finite, got {beta}")


def assemble(mesh: Mesh, kappa: float, beta: float, source="sinsin"):
    """Assemble stiffness ``S``, mass ``M`` and load ``f = M @ source(nodes)``.

    ``kappa`` and ``beta`` are only validated here; they enter the operator
    in :func:`impose_dirichlet`.
    """
    _check_coefficients(kappa, beta)
    S, M = assemble_matrices(mesh)
    f = M @ _evaluate_source(mesh, source)
    return S, M, f


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """Constrained operator ``A`` and right-hand side ready for CG.

    Dirichlet rows and columns of ``A`` are identity; ``rhs`` holds the
    prescribed values there and the lifted load elsewhere.
    """

    A: sp.csr_matrix
    rhs: np.ndarray
    dirichlet_nodes: np.ndarray
    dirichlet_values: np.ndarray
    free_dofs: np.ndarray

    @property
    def n(self) -> int:
        return self.rhs.shape[0]

    @property
    def dirichlet(self) -> dict[int, float]:
        return dict(zip(self.dirichlet_nodes.tolist(), self.dirichlet_values.tolist()))


def impose_dirichlet(S, M, f, mesh: Mesh, kappa: float, beta: float, q_in: float) -> AssembledSystem:
    """Form ``kappa S + beta M`` and eliminate boundary nodes symmetrically."""
    _check_coefficients(kappa, beta)
    if not math.isfinite(q_in):
        raise ValueError(f"q_in must be finite, got {q_in}")
    n = mesh.n_nodes
    A = (kappa * S + beta * M).tocsr()

    fixed = mesh.node_class != NodeClass.INTERIOR
    g = np.zeros(n)
    g[mesh.node_class == NodeClass.INFLOW] = q_in
    rhs = np.asarray(f, dtype=float) - A @ g
    rhs[fixed] = g[fixed]

    keep = sp.diags((~fixed).astype(float))
    Ac = (keep @ A @ keep + sp.diags(fixed.astype(float))).tocsr()
    Ac.sort_indices()
    dn = np.flatnonzero(fixed)
    return AssembledSystem(Ac, rhs, dn, g[dn], np.flatnonzero(~fixed))


class SolveInfo(NamedTuple):
    iterations: int
    residual: float
    rhs_norm: float


def pcg(A, b, x0, tol=1e-10, max_iter=None, mask=None):
    """Jacobi-preconditioned conjugate gradients.

    Stops when ``||b - A x|| <= tol * ||b||`` measured on the entries selected
    by ``mask`` (all entries if ``None``).

    Returns
    -------
    x : ndarray
    info : SolveInfo

    Raises
    ------
    ConvergenceError
        If the tolerance is not met within ``max_iter`` iterations.
    """
    n = b.shape[0]
    if max_iter is None:
        max_iter = 20 * n
    x = np.array(x0, dtype=float)
    inv_diag = 1.0 / A.diagonal()
    sel = slice(None) if mask is None else mask

    r = b - A @ x
    b_norm = float(np.linalg.norm(b[sel]))
    target = tol * b_norm
    res = float(np.linalg.norm(r[sel]))
    if res <= target or b_norm == 0.0 and res == 0.0:
        return x, SolveInfo(0, res, b_norm)

    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            raise ConvergenceError(
                f"operator is not positive definite (p'Ap = {pAp:.3e})", res, it
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = float(np.linalg.norm(r[sel]))
        if res <= target:
            return x, SolveInfo(it, res, b_norm)
        z = inv_diag * r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise ConvergenceError(
        f"CG did not converge in {max_iter} iterations "
        f"(residual {res:.3e}, target {target:.3e})",
        res,
        max_iter,
    )


def solve(system: AssembledSystem, tol: float = 1e-10, max_iter: int | None = None,
          return_info: bool = False):
    """Solve the constrained system; Dirichlet values are written back exactly."""
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    if max_iter is None:
        max_iter = 20 * system.n
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    x0 = np.zeros(system.n)
    x0[system.dirichlet_nodes] = system.dirichlet_values
    mask = np.ones(system.n, dtype=bool)
    mask[system.dirichlet_nodes] = False
    u, info = pcg(system.A, system.rhs, x0, tol, max_iter, mask)
    u[system.dirichlet_nodes] = system.dirichlet_values
    return (u, info) if return_info else u


def solve_instance(mesh: Mesh, mu, source="sinsin", tol: float = 1e-10,
                   max_iter: int | None = None) -> np.ndarray:
    """Assemble, constrain and solve one instance from scratch."""
    kappa, beta, q_in = (float(v) for v in mu)
    S, M, f = assemble(mesh, kappa, beta, source)
    system = impose_dirichlet(S, M, f, mesh, kappa, beta, q_in)
    return solve(system, tol, max_iter)


class FemProblem:
    """Mesh plus source with the parameter-independent matrices cached.

    ``problem.solve(mu)`` is bit-identical to ``solve_instance(mesh, mu, source)``
    because assembly is deterministic; it only skips repeating it.
    """

    def __init__(self, mesh: Mesh, source="sinsin", tol: float = 1e-10,
                 max_iter: int | None = None):
        self.mesh = mesh
        self.source = source
        self.tol = tol
        self.max_iter = max_iter
        self.S, self.M = assemble_matrices(mesh)
        self.f = self.M @ _evaluate_source(mesh, source)

    def system(self, mu) -> AssembledSystem:
        kappa, beta, q_in = (float(v) for v in mu)
        return impose_dirichlet(self.S, self.M, self.f, self.mesh, kappa, beta, q_in)

    def solve(self, mu) -> np.ndarray:
        return solve(self.system(mu), self.tol, self.max_iter)


def export_field(mesh: Mesh, u: np.ndarray, path) -> None:
    """CSV with header ``x,y,u``, one row per node in mesh order."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise ValueError(f"field has shape {u.shape}, mesh has {mesh.n_nodes} nodes")
    with open(path, "w") as fh:
        fh.write("x,y,u\n")
        for (x, y), v in zip(mesh.nodes.tolist(), u.tolist()):
            fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")
