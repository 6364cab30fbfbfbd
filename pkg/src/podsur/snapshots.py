"""Parameter sampling and snapshot matrix generation."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .container import DimensionError, FormatError, read_container, write_container
from .fem import FemProblem, ParameterSample
from .mesh import Mesh, build_structured_mesh

__all__ = [
    "ParameterRanges",
    "SnapshotSet",
    "SnapshotError",
    "sample_parameters",
    "generate_snapshots",
    "save_snapshots",
    "load_snapshots",
    "export_parameters_csv",
]

log = logging.getLogger(__name__)

MAGIC = b"PODS"


@dataclass(frozen=True)
class ParameterRanges:
    kappa: tuple[float, float] = (1e-3, 1e-1)
    beta: tuple[float, float] = (0.0, 1.0)
    q_in: tuple[float, float] = (0.1, 1.0)

    def __post_init__(self):
        for name in ("kappa", "beta", "q_in"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ValueError(f"invalid {name} range [{lo}, {hi}]")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.kappa[0] <= 0:
            raise ValueError("kappa range must be strictly positive")
        if self.beta[0] < 0:
            raise ValueError("beta range must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.kappa, self.beta, self.q_in])

    def contains(self, mu) -> bool:
        lo, hi = self.as_array().T
        mu = np.asarray(mu, dtype=float)
        return bool(np.all((mu >= lo) & (mu <= hi)))


def sample_parameters(n: int, ranges: ParameterRanges | None = None, seed: int = 0,
                      kappa_scale: str = "linear") -> list[ParameterSample]:
    """Draw ``n`` independent uniform parameter triples.

    With ``kappa_scale="log"`` the diffusivity is uniform in ``log10``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if ranges is None:
        ranges = ParameterRanges()
    if kappa_scale not in ("linear", "log"):
        raise ValueError(f"kappa_scale must be 'linear' or 'log', got {kappa_scale!r}")
    rng = np.random.default_rng(seed)
    u = rng.random((n, 3))
    lo, hi = ranges.as_array().T
    if kappa_scale == "log":
        lk = np.log10(ranges.kappa)
        kappa = 10.0 ** (lk[0] + u[:, 0] * (lk[1] - lk[0]))
        kappa = np.clip(kappa, *ranges.kappa)
    else:
        kappa = lo[0] + u[:, 0] * (hi[0] - lo[0])
    beta = lo[1] + u[:, 1] * (hi[1] - lo[1])
    q_in = lo[2] + u[:, 2] * (hi[2] - lo[2])
    return [ParameterSample(float(k), float(b), float(q)) for k, b, q in zip(kappa, beta, q_in)]


@dataclass(eq=False)
class SnapshotSet:
    """Snapshot matrix ``U`` (one column per parameter triple) and provenance."""

    params: np.ndarray  # (n_s, 3): kappa, beta, q_in
    U: np.ndarray  # (N, n_s)
    mesh_meta: dict = field(default_factory=dict)
    source: str = "sinsin"
    seed: int = 0
    ranges: ParameterRanges = field(default_factory=ParameterRanges)

    @property
    def n_nodes(self) -> int:
        return self.U.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.U.shape[1]

    @property
    def samples(self) -> list[ParameterSample]:
        return [ParameterSample(*row) for row in self.params.tolist()]

    def __eq__(self, other):
        if not isinstance(other, SnapshotSet):
            return NotImplemented
        return (
            np.array_equal(self.params, other.params)
            and np.array_equal(self.U, other.U)
            and self.mesh_meta == other.mesh_meta
            and self.source == other.source
            and self.seed == other.seed
            and self.ranges == other.ranges
        )


class SnapshotError(RuntimeError):
    def __init__(self, index, mu, cause):
        super().__init__(f"snapshot {index} failed for mu={tuple(mu)}: {cause}")
        self.index = index
        self.mu = tuple(mu)


_worker_problem = None


def _init_worker(mesh_meta, source, tol):
    global _worker_problem
    mesh = build_structured_mesh(mesh_meta["lx"], mesh_meta["ly"], mesh_meta["nx"],
                                 mesh_meta["ny"], mesh_meta.get("corner_policy", "inflow"))
    _worker_problem = FemProblem(mesh, source, tol)


def _worker_solve(args):
    index, mu = args
    try:
        return index, _worker_problem.solve(mu), None
    except Exception as exc:  # reported with the sample index by the parent
        return index, None, repr(exc)


def generate_snapshots(mesh: Mesh, samples, source: str = "sinsin", seed: int = 0,
                       ranges: ParameterRanges | None = None, workers: int = 1,
                       tol: float = 1e-10) -> SnapshotSet:
    """Solve the FEM problem for every sample; column ``j`` belongs to ``samples[j]``.

    With ``workers > 1`` solves run in a process pool. Each result lands in
    its preassigned column, so the output does not depend on scheduling.
    """
    params = np.array([tuple(s) for s in samples], dtype=float).reshape(-1, 3)
    U = np.empty((mesh.n_nodes, len(params)))
    if workers > 1 and len(params) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(mesh.describe(), source, tol)) as pool:
            for j, col, err in pool.map(_worker_solve, enumerate(params.tolist()), chunksize=8):
                if err is not None:
                    raise SnapshotError(j, params[j], err)
                U[:, j] = col
    else:
        problem = FemProblem(mesh, source, tol)
        for j, mu in enumerate(params.tolist()):
            try:
                U[:, j] = problem.solve(mu)
            except Exception as exc:
                raise SnapshotError(j, mu, exc) from exc
            if (j + 1) % 50 == 0:
                log.info("solved %d/%d snapshots", j + 1, len(params))
    return SnapshotSet(params, U, mesh.describe(), source, seed, ranges or ParameterRanges())


def save_snapshots(snapshots: SnapshotSet, path) -> None:
    header = {
        "N": snapshots.n_nodes,
        "n_s": snapshots.n_snapshots,
        "mesh": snapshots.mesh_meta,
        "source": snapshots.source,
        "seed": snapshots.seed,
        "ranges": {k: list(getattr(snapshots.ranges, k)) for k in ("kappa", "beta", "q_in")},
    }
    write_container(path, MAGIC, header, [("U", snapshots.U), ("params", snapshots.params)])


def load_snapshots(path, mesh: Mesh | None = None) -> SnapshotSet:
    """Read a ``PODS`` container; if ``mesh`` is given its node count must match."""
    header, arrays = read_container(path, MAGIC)
    try:
        U, params = arrays["U"], arrays["params"]
        N, n_s = int(header["N"]), int(header["n_s"])
        ranges = ParameterRanges(**{k: tuple(v) for k, v in header["ranges"].items()})
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing field {exc}") from None
    if U.shape != (N, n_s) or params.shape != (n_s, 3):
        raise FormatError(f"{path}: header says N={N}, n_s={n_s} but payload is {U.shape}")
    if mesh is not None and mesh.n_nodes != N:
        raise DimensionError(f"{path}: snapshots have N={N} nodes, mesh has {mesh.n_nodes}")
    return SnapshotSet(params, U, header["mesh"], header["source"], header["seed"], ranges)


def export_parameters_csv(snapshots: SnapshotSet, path) -> None:
    with open(path, "w") as fh:
        fh.write("kappa,beta,qin\n")
        for k, b, q in snapshots.params.tolist():
            fh.write(f"{k:.17g},{b:.17g},{q:.17g}\n")
