"""Proper orthogonal decomposition by the method of snapshots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .container import DimensionError, FormatError, read_container, write_container

__all__ = [
    "PodBasis",
    "compute_pod",
    "select_rank",
    "cumulative_energy",
    "project",
    "reconstruct",
    "save_basis",
    "load_basis",
    "export_singular_values",
]

MAGIC = b"PODB"
DEFAULT_ETA = 0.999
RANK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Leading left singular vectors of a snapshot matrix.

    Attributes
    ----------
    modes : (N, m) ndarray
        Orthonormal columns.
    singular_values : (r,) ndarray
        All numerically nonzero singular values, descending.
    m : int
        Retained rank.
    energy_threshold : float
    captured_energy : float
        Fraction of squared singular values carried by the first ``m`` modes.
    mean : (N,) ndarray or None
        Snapshot mean, only for centered decompositions.
    """

    modes: np.ndarray
    singular_values: np.ndarray
    m: int
    energy_threshold: float
    captured_energy: float
    mean: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.modes.shape[0]

    @property
    def rank(self) -> int:
        return self.singular_values.shape[0]

    def truncate(self, m: int) -> "PodBasis":
        """Same decomposition with ``m`` retained modes (``m`` <= stored modes)."""
        if not 1 <= m <= self.modes.shape[1]:
            raise ValueError(f"m must be in [1, {self.modes.shape[1]}]")
        energy = cumulative_energy(self.singular_values)[m - 1]
        return PodBasis(self.modes[:, :m], self.singular_values, m,
                        self.energy_threshold, float(energy), self.mean)


def cumulative_energy(singular_values) -> np.ndarray:
    s = np.asarray(singular_values, dtype=float)
    s2 = (s / np.abs(s).max()) ** 2  # rescaled so tiny values do not underflow
    return np.cumsum(s2) / s2.sum()


def select_rank(singular_values, eta: float = DEFAULT_ETA) -> int:
    """Smallest ``m`` whose leading squared singular values reach fraction ``eta``."""
    s = np.asarray(singular_values, dtype=float)
    if not 0 < eta <= 1:
        raise ValueError(f"energy threshold must lie in (0, 1], got {eta}")
    if s.ndim != 1 or s.size == 0:
        raise ValueError("singular values must be a non-empty 1-d sequence")
    if np.any(s < 0) or np.any(np.diff(s) > 0):
        raise ValueError("singular values must be non-negative and sorted descending")
    if s[0] == 0:
        raise ValueError("all singular values are zero")
    energy = cumulative_energy(s)
    m = int(np.searchsorted(energy, eta, side="left")) + 1
    return min(m, s.size)


def _fix_signs(modes: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(modes), axis=0)
    signs = np.sign(modes[idx, np.arange(modes.shape[1])])
    signs[signs == 0] = 1.0
    return modes * signs


def compute_pod(U, eta: float = DEFAULT_ETA, center: bool = False,
                max_modes: int | None = None, refine: bool = True) -> PodBasis:
    """POD basis of the columns of ``U`` via the Gram matrix ``U.T @ U``.

    Eigenpairs ``(lam_i, v_i)`` of the Gram matrix give ``sigma_i = sqrt(lam_i)``
    and modes ``U v_i / sigma_i``. With ``refine`` (the default) the snapshot
    span is then orthonormalized and the small ``n_s x n_s`` projected matrix
    is decomposed directly, which recovers the trailing singular values to
    working precision. Singular values below ``1e-12 * sigma_1`` count as
    numerical rank deficiency and are dropped.

    Parameters
    ----------
    U : (N, n_s) array_like
    eta : float
        Energy fraction in ``(0, 1]``.
    center : bool
        Subtract the column mean first (stored on the basis).
    max_modes : int, optional
        Keep at least this many modes in ``modes`` (when available) so the
        basis can later be truncated to a different rank.
    refine : bool
        Apply the Rayleigh-Ritz refinement. Without it the raw Gram
        eigenvalues are used and those below ``n_s * eps * lam_1`` are dropped.
    """
    if not 0 < eta <= 1:
        raise ValueError(f"energy threshold must lie in (0, 1], got {eta}")
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.size == 0:
        raise ValueError("snapshot matrix must be a non-empty 2-d array")
    mean = None
    if center:
        mean = U.mean(axis=1)
        U = U - mean[:, None]
    if not np.any(U):
        raise ValueError("snapshot matrix is identically zero")

    G = U.T @ U
    lam, V = la.eigh(G)
    lam, V = lam[::-1], V[:, ::-1]
    if refine:
        # Rayleigh-Ritz on span(U V): the Gram eigenvalues carry absolute
        # errors ~ eps * lam_1, which swamps the small singular values
        Q, _ = la.qr(U @ V, mode="economic")
        W, sigma, _ = la.svd(Q.T @ U)
        r = int(np.count_nonzero(sigma > sigma[0] * RANK_TOL))
        sigma = sigma[:r]
        basis_vectors = Q @ W[:, :r]
    else:
        cutoff = lam[0] * max(G.shape[0], 1) * np.finfo(float).eps
        r = int(np.count_nonzero(lam > cutoff))
        sigma = np.sqrt(lam[:r])
        basis_vectors = None

    m = select_rank(sigma, eta)
    keep = min(r, max(m, max_modes or 0))
    if basis_vectors is None:
        modes = (U @ V[:, :keep]) / sigma[:keep]
    else:
        modes = basis_vectors[:, :keep]
    modes = _fix_signs(modes)
    energy = cumulative_energy(sigma)
    return PodBasis(modes, sigma, m, float(eta), float(energy[m - 1]), mean)


def project(basis: PodBasis, u) -> np.ndarray:
    """POD coefficients of ``u``; a 2-d ``u`` is treated column-wise."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != basis.n_nodes:
        raise ValueError(f"field has {u.shape[0]} entries, basis has {basis.n_nodes}")
    if basis.mean is not None:
        u = u - (basis.mean if u.ndim == 1 else basis.mean[:, None])
    return basis.modes[:, :basis.m].T @ u


def reconstruct(basis: PodBasis, a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape[0] != basis.m:
        raise ValueError(f"got {a.shape[0]} coefficients, basis rank is {basis.m}")
    u = basis.modes[:, :basis.m] @ a
    if basis.mean is not None:
        u += basis.mean if u.ndim == 1 else basis.mean[:, None]
    return u


def save_basis(basis: PodBasis, path) -> None:
    header = {
        "N": basis.n_nodes,
        "m": basis.m,
        "r": basis.rank,
        "n_modes": basis.modes.shape[1],
        "eta": basis.energy_threshold,
        "captured_energy": basis.captured_energy,
        "centered": basis.mean is not None,
    }
    blocks = [("sigma", basis.singular_values), ("modes", basis.modes)]
    if basis.mean is not None:
        blocks.append(("mean", basis.mean))
    write_container(path, MAGIC, header, blocks)


def load_basis(path, n_nodes: int | None = None) -> PodBasis:
    header, arrays = read_container(path, MAGIC)
    try:
        N, m, r = int(header["N"]), int(header["m"]), int(header["r"])
        sigma, modes = arrays["sigma"], arrays["modes"]
        mean = arrays.get("mean") if header["centered"] else None
        eta, captured = float(header["eta"]), float(header["captured_energy"])
    except KeyError as exc:
        raise FormatError(f"{path}: missing field {exc}") from None
    if sigma.shape != (r,) or modes.shape[0] != N or not m <= modes.shape[1] <= r:
        raise FormatError(f"{path}: header (N={N}, m={m}, r={r}) disagrees with payload")
    if n_nodes is not None and n_nodes != N:
        raise DimensionError(f"{path}: basis has N={N} nodes, expected {n_nodes}")
    return PodBasis(modes, sigma, m, eta, captured, mean)


def export_singular_values(basis: PodBasis, path) -> None:
    """CSV ``index,sigma,cumulative_energy`` (1-based index)."""
    energy = cumulative_energy(basis.singular_values)
    with open(path, "w") as fh:
        fh.write("index,sigma,cumulative_energy\n")
        for i, (s, e) in enumerate(zip(basis.singular_values.tolist(), energy.tolist()), 1):
            fh.write(f"{i},{s:.17g},{e:.17g}\n")
