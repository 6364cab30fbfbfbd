"""Structured triangulations of a rectangle ``[0, lx] x [0, ly]``."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NodeClass",
    "Mesh",
    "build_structured_mesh",
    "classify_boundary",
    "element_geometry",
    "triangle_geometry",
    "export_mesh",
]


class NodeClass(enum.IntEnum):
    INTERIOR = 0
    INFLOW = 1
    WALL = 2


CORNER_POLICIES = ("inflow", "wall")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform grid of ``nx`` by ``ny`` cells, each split into two triangles.

    Nodes are numbered row-major with x running fastest, i.e. node ``(i, j)``
    has index ``j * (nx + 1) + i``. Arrays are read-only after construction.
    """

    lx: float
    ly: float
    nx: int
    ny: int
    nodes: np.ndarray
    triangles: np.ndarray
    node_class: np.ndarray
    corner_policy: str = "inflow"
    _areas: np.ndarray | None = field(default=None, repr=False)
    _grads: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def h(self) -> float:
        """Largest element diameter (the cell diagonal)."""
        return float(np.hypot(self.lx / self.nx, self.ly / self.ny))

    @property
    def inflow_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_class == NodeClass.INFLOW)

    @property
    def wall_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_class == NodeClass.WALL)

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_class != NodeClass.INTERIOR)

    @property
    def areas(self) -> np.ndarray:
        if self._areas is None:
            self._compute_geometry()
        return self._areas

    @property
    def gradients(self) -> np.ndarray:
        """Barycentric basis gradients, shape ``(n_triangles, 3, 2)``."""
        if self._grads is None:
            self._compute_geometry()
        return self._grads

    def _compute_geometry(self):
        areas, grads = _batch_geometry(self.nodes[self.triangles])
        if np.any(areas <= 0.0):
            bad = int(np.flatnonzero(areas <= 0.0)[0])
            raise ValueError(f"triangle {bad} is degenerate or clockwise")
        areas.setflags(write=False)
        grads.setflags(write=False)
        object.__setattr__(self, "_areas", areas)
        object.__setattr__(self, "_grads", grads)

    def describe(self) -> dict:
        return {
            "lx": self.lx,
            "ly": self.ly,
            "nx": self.nx,
            "ny": self.ny,
            "corner_policy": self.corner_policy,
        }


def _batch_geometry(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # pts: (T, 3, 2). Gradient of the barycentric coordinate for vertex i is
    # the inward normal of the opposite edge divided by twice the area.
    x, y = pts[..., 0], pts[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    grads = np.empty(pts.shape, dtype=float)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = y[:, j] - y[:, k]
        grads[:, i, 1] = x[:, k] - x[:, j]
    with np.errstate(divide="ignore", invalid="ignore"):
        grads /= det[:, None, None]
    return 0.5 * det, grads


def triangle_geometry(points) -> tuple[float, np.ndarray]:
    """Area and P1 basis gradients of a single counter-clockwise triangle.

    Parameters
    ----------
    points : (3, 2) array_like
        Vertex coordinates.

    Returns
    -------
    area : float
    grads : (3, 2) ndarray
        Row ``i`` is the (constant) gradient of the hat function of vertex ``i``.
    """
    pts = np.asarray(points, dtype=float).reshape(1, 3, 2)
    area, grads = _batch_geometry(pts)
    scale = max(float(np.ptp(pts[0, :, 0])), float(np.ptp(pts[0, :, 1])), 1.0)
    if not area[0] > 1e-14 * scale * scale:
        raise ValueError("degenerate or clockwise triangle")
    return float(area[0]), grads[0]


def classify_boundary(mesh_or_nodes, lx=None, ly=None, corner_policy="inflow") -> np.ndarray:
    """Label nodes as interior, inflow (``x = 0``) or wall (rest of the boundary).

    Accepts either a :class:`Mesh` or a raw ``(n, 2)`` coordinate array with
    the domain lengths. With ``corner_policy="inflow"`` the two corners on
    ``x = 0`` are inflow nodes; with ``"wall"`` they are wall nodes.
    """
    if isinstance(mesh_or_nodes, Mesh):
        nodes = mesh_or_nodes.nodes
        lx, ly = mesh_or_nodes.lx, mesh_or_nodes.ly
        corner_policy = mesh_or_nodes.corner_policy
    else:
        nodes = np.asarray(mesh_or_nodes, dtype=float)
    if corner_policy not in CORNER_POLICIES:
        raise ValueError(f"corner_policy must be one of {CORNER_POLICIES}")
    x, y = nodes[:, 0], nodes[:, 1]
    tol = 1e-12 * max(lx, ly)
    left = np.abs(x) <= tol
    other = (np.abs(x - lx) <= tol) | (np.abs(y) <= tol) | (np.abs(y - ly) <= tol)
    labels = np.full(len(nodes), NodeClass.INTERIOR, dtype=np.int8)
    labels[other] = NodeClass.WALL
    if corner_policy == "inflow":
        labels[left] = NodeClass.INFLOW
    else:
        labels[left & ~other] = NodeClass.INFLOW
    return labels


def build_structured_mesh(lx: float, ly: float, nx: int, ny: int, corner_policy: str = "inflow") -> Mesh:
    """Triangulate ``[0, lx] x [0, ly]`` with ``nx * ny`` cells.

    Every cell is cut along its lower-left to upper-right diagonal, giving
    ``(nx + 1) * (ny + 1)`` nodes and ``2 * nx * ny`` counter-clockwise
    triangles.
    """
    if not (np.isfinite(lx) and np.isfinite(ly)) or lx <= 0 or ly <= 0:
        raise ValueError(f"domain lengths must be positive, got lx={lx}, ly={ly}")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    lx, ly = float(lx), float(ly)

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # shape (ny+1, nx+1), x fastest when raveled
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    n0 = idx[:-1, :-1].ravel()
    n1 = idx[:-1, 1:].ravel()
    n2 = idx[1:, 1:].ravel()
    n3 = idx[1:, :-1].ravel()
    lower = np.column_stack([n0, n1, n2])
    upper = np.column_stack([n0, n2, n3])
    # interleave so the two halves of a cell are adjacent
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    labels = classify_boundary(nodes, lx, ly, corner_policy)
    for arr in (nodes, triangles, labels):
        arr.setflags(write=False)
    mesh = Mesh(lx, ly, nx, ny, nodes, triangles, labels, corner_policy)
    mesh._compute_geometry()
    return mesh


def element_geometry(mesh: Mesh, t: int) -> tuple[float, np.ndarray]:
    """Area and basis gradients ``(3, 2)`` of triangle ``t``."""
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle index {t} out of range [0, {mesh.n_triangles})")
    return float(mesh.areas[t]), mesh.gradients[t].copy()


def export_mesh(mesh: Mesh, path) -> None:
    """Write a plain-text listing: node count, ``x y`` lines, triangle count, ``i j k`` lines."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_nodes}\n")
        for x, y in mesh.nodes:
            fh.write(f"{x!r} {y!r}\n")
        fh.write(f"{mesh.n_triangles}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
