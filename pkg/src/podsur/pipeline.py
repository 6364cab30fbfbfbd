"""End-to-end workflow: snapshots, POD, training, evaluation, benchmark."""

from __future__ import annotations

import json
import logging
import math
import os
import platform
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig, config_hash, file_hash, to_dict
from .fem import solve_instance
from .mesh import Mesh, build_structured_mesh
from .pod import compute_pod, export_singular_values, load_basis, project, reconstruct, save_basis
from .snapshots import ParameterRanges, generate_snapshots, load_snapshots, sample_parameters, save_snapshots
from .surrogate import export_history, init_model, load_model, predict_field, save_model, train_lm

__all__ = [
    "UndefinedReferenceError",
    "StepError",
    "relative_l2_error",
    "EvalReport",
    "BenchReport",
    "evaluate",
    "benchmark",
    "export_report",
    "export_eval_csv",
    "read_eval_csv",
    "export_summary",
    "build_mesh",
    "run_pipeline",
    "run_step",
    "STEPS",
    "ARTIFACTS",
]

log = logging.getLogger(__name__)

HIST_BINS = 20

ARTIFACTS = {
    "snapshots": "snapshots.pods",
    "basis": "basis.podb",
    "model": "model.podm",
    "eval": "eval_report.csv",
    "bench": "bench_report.txt",
    "sigma": "singular_values.csv",
    "history": "train_history.csv",
    "bench_trials": "bench_trials.csv",
    "manifest": "manifest.txt",
}


class UndefinedReferenceError(ZeroDivisionError):
    pass


class StepError(RuntimeError):
    def __init__(self, step, cause):
        super().__init__(f"step '{step}' failed: {cause}")
        self.step = step
        self.cause = cause


def relative_l2_error(u_pred, u_ref) -> float:
    """``||u_pred - u_ref|| / ||u_ref||`` in the Euclidean nodal norm."""
    u_pred = np.asarray(u_pred, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    if u_pred.shape != u_ref.shape:
        raise ValueError(f"shape mismatch {u_pred.shape} vs {u_ref.shape}")
    ref = float(np.linalg.norm(u_ref))
    if ref == 0.0:
        raise UndefinedReferenceError("reference field is identically zero")
    return float(np.linalg.norm(u_pred - u_ref)) / ref


@dataclass
class EvalReport:
    """Per-sample surrogate errors against FEM, plus derived statistics.

    ``errors_vs_pod`` compares the surrogate with the POD projection of the
    FEM field, and ``projection_errors`` is the truncation error of that
    projection alone.
    """

    params: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    errors: np.ndarray = field(default_factory=lambda: np.empty(0))
    errors_vs_pod: np.ndarray = field(default_factory=lambda: np.empty(0))
    projection_errors: np.ndarray = field(default_factory=lambda: np.empty(0))
    excluded: list = field(default_factory=list)

    @property
    def n_test(self) -> int:
        return int(self.errors.size)

    @property
    def defined(self) -> bool:
        return self.n_test > 0

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors)) if self.defined else math.nan

    @property
    def median(self) -> float:
        return float(np.median(self.errors)) if self.defined else math.nan

    @property
    def max(self) -> float:
        return float(np.max(self.errors)) if self.defined else math.nan

    def histogram(self, bins: int = HIST_BINS):
        if not self.defined:
            return np.linspace(0.0, 1.0, bins + 1), np.zeros(bins, dtype=int)
        top = self.max if self.max > 0 else 1.0
        counts, edges = np.histogram(self.errors, bins=bins, range=(0.0, top))
        return edges, counts

    @property
    def best(self):
        return tuple(self.params[int(np.argmin(self.errors))]) if self.defined else None

    @property
    def worst(self):
        return tuple(self.params[int(np.argmax(self.errors))]) if self.defined else None


@dataclass
class BenchReport:
    fem_seconds: np.ndarray
    nn_seconds: np.ndarray
    params: np.ndarray
    hardware: str = ""

    @property
    def n_trials(self) -> int:
        return int(self.fem_seconds.size)

    @property
    def avg_fem_seconds(self) -> float:
        return float(np.mean(self.fem_seconds))

    @property
    def avg_nn_seconds(self) -> float:
        return float(np.mean(self.nn_seconds))

    @property
    def speedup(self) -> float:
        return self.avg_fem_seconds / self.avg_nn_seconds


def evaluate(model, basis, mesh: Mesh, test_samples, source="sinsin", tol: float = 1e-10) -> EvalReport:
    """Compare surrogate fields with fresh FEM solves for every test sample."""
    params = np.array([tuple(s) for s in test_samples], dtype=float).reshape(-1, 3)
    rows, errs, errs_pod, proj_errs, excluded = [], [], [], [], []
    for i, mu in enumerate(params):
        u_ref = solve_instance(mesh, mu, source, tol)
        u_nn = predict_field(model, basis, mu)
        u_pod = reconstruct(basis, project(basis, u_ref))
        try:
            e = relative_l2_error(u_nn, u_ref)
        except UndefinedReferenceError:
            warnings.warn(f"test sample {i} {tuple(mu)} has a zero reference field; excluded")
            excluded.append(i)
            continue
        rows.append(mu)
        errs.append(e)
        proj_errs.append(relative_l2_error(u_pod, u_ref))
        pod_norm = float(np.linalg.norm(u_pod))
        errs_pod.append(relative_l2_error(u_nn, u_pod) if pod_norm > 0 else math.nan)
    return EvalReport(
        np.array(rows, dtype=float).reshape(-1, 3),
        np.array(errs),
        np.array(errs_pod),
        np.array(proj_errs),
        excluded,
    )


def hardware_note() -> str:
    cpu = platform.processor()
    arch = platform.machine() if cpu in ("", platform.machine()) else f"{platform.machine()} {cpu}"
    return f"{arch}, {os.cpu_count()} cores, python {platform.python_version()}"


def benchmark(model, basis, mesh: Mesh, n_trials: int = 20, seed: int = 0, source="sinsin",
              ranges: ParameterRanges | None = None, tol: float = 1e-10) -> BenchReport:
    """Time full FEM solves against surrogate predictions on random parameters.

    The FEM timing covers assembly, boundary conditions and the solve; the
    surrogate timing covers the network evaluation and reconstruction. One
    warm-up trial runs first and is discarded.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    samples = np.array(sample_parameters(n_trials + 1, ranges, seed), dtype=float)
    clock = time.perf_counter
    fem_t, nn_t = [], []
    for i, mu in enumerate(samples):
        t0 = clock()
        solve_instance(mesh, mu, source, tol)
        t1 = clock()
        predict_field(model, basis, mu)
        t2 = clock()
        if i > 0:
            fem_t.append(t1 - t0)
            nn_t.append(t2 - t1)
    return BenchReport(np.array(fem_t), np.array(nn_t), samples[1:], hardware_note())


def export_eval_csv(report: EvalReport, path) -> None:
    """Per-sample errors, then a ``# histogram`` section (omitted when empty)."""
    with open(path, "w") as fh:
        fh.write("index,kappa,beta,qin,rel_error,rel_error_vs_pod,projection_error\n")
        for i in range(report.n_test):
            k, b, q = report.params[i]
            fh.write(
                f"{i},{k:.17g},{b:.17g},{q:.17g},{report.errors[i]:.17g},"
                f"{report.errors_vs_pod[i]:.17g},{report.projection_errors[i]:.17g}\n"
            )
        if report.defined:
            edges, counts = report.histogram()
            fh.write("# histogram\n")
            fh.write("bin_left,bin_right,count\n")
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                fh.write(f"{lo:.17g},{hi:.17g},{int(c)}\n")


def read_eval_csv(path) -> EvalReport:
    rows = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            if line.startswith("#"):
                break
            rows.append([float(v) for v in line.strip().split(",")])
    arr = np.array(rows, dtype=float).reshape(-1, 7)
    return EvalReport(arr[:, 1:4], arr[:, 4], arr[:, 5], arr[:, 6])


def _pct(x):
    return "undefined" if not math.isfinite(x) else f"{100.0 * x:.2f} %"


def export_summary(path, bench: BenchReport | None = None, ev: EvalReport | None = None) -> None:
    """Plain-text summary with the runtime and error rows of a FEM vs NN comparison."""
    lines = []
    if bench is not None:
        lines += [
            f"Average FEM time\t{bench.avg_fem_seconds:.6f} seconds",
            f"Average NN time\t{bench.avg_nn_seconds:.6f} seconds",
            f"Speed-up factor (FEM/NN)\t{bench.speedup:.1f}x",
        ]
    if ev is not None:
        lines += [
            f"Mean relative error\t{_pct(ev.mean)}",
            f"Median relative error\t{_pct(ev.median)}",
            f"Max relative error\t{_pct(ev.max)}",
        ]
    lines.append("")
    if bench is not None:
        lines.append(f"trials\t{bench.n_trials}")
        lines.append(f"hardware\t{bench.hardware}")
    if ev is not None:
        lines.append(f"test samples\t{ev.n_test}")
        if ev.defined:
            lines.append(f"mean error vs POD projection\t{_pct(float(np.nanmean(ev.errors_vs_pod)))}")
            lines.append(f"mean POD truncation error\t{_pct(float(np.mean(ev.projection_errors)))}")
            lines.append("best (kappa, beta, q_in)\t" + ", ".join(f"{v:.4g}" for v in ev.best))
            lines.append("worst (kappa, beta, q_in)\t" + ", ".join(f"{v:.4g}" for v in ev.worst))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def export_bench_trials(bench: BenchReport, path) -> None:
    with open(path, "w") as fh:
        fh.write("trial,kappa,beta,qin,fem_seconds,nn_seconds\n")
        for i, ((k, b, q), tf, tn) in enumerate(zip(bench.params, bench.fem_seconds, bench.nn_seconds)):
            fh.write(f"{i},{k:.17g},{b:.17g},{q:.17g},{tf:.9g},{tn:.9g}\n")


def export_report(report, path, format: str = "csv", ev: EvalReport | None = None) -> None:
    """Write an :class:`EvalReport` as CSV, or any report as a text summary.

    ``format="summary"`` accepts a :class:`BenchReport` (optionally with the
    matching ``ev``) or an :class:`EvalReport`.
    """
    if format == "csv":
        if isinstance(report, EvalReport):
            export_eval_csv(report, path)
        elif isinstance(report, BenchReport):
            export_bench_trials(report, path)
        else:
            raise TypeError(f"cannot export {type(report).__name__} as csv")
    elif format == "summary":
        if isinstance(report, BenchReport):
            export_summary(path, report, ev)
        elif isinstance(report, EvalReport):
            export_summary(path, None, report)
        else:
            raise TypeError(f"cannot summarize {type(report).__name__}")
    else:
        raise ValueError(f"unknown format {format!r}")


# --- orchestration ---------------------------------------------------------

def build_mesh(cfg: PipelineConfig) -> Mesh:
    d = cfg.domain
    return build_structured_mesh(d.lx, d.ly, d.nx, d.ny, d.corner_policy)


def _fem_fields(cfg):
    return {"domain": cfg.domain, "source": cfg.source, "fem_tol": cfg.fem_tol}


STEPS = ("generate", "pod", "train", "evaluate", "benchmark")

# config fields each step depends on, and upstream artifacts it reads
_STEP_CONFIG = {
    "generate": lambda c: {**_fem_fields(c), "ranges": c.ranges, "kappa_scale": c.kappa_scale,
                           "n_snapshots": c.n_snapshots, "sampling_seed": c.sampling_seed},
    "pod": lambda c: {"eta": c.eta, "center": c.center},
    "train": lambda c: {"hidden": c.hidden, "log_kappa": c.log_kappa, "train": c.train,
                        "init_seed": c.init_seed},
    "evaluate": lambda c: {**_fem_fields(c), "ranges": c.ranges, "kappa_scale": c.kappa_scale,
                           "n_test": c.n_test, "test_seed": c.test_seed},
    "benchmark": lambda c: {**_fem_fields(c), "ranges": c.ranges, "n_bench": c.n_bench,
                            "bench_seed": c.bench_seed},
}
_STEP_INPUTS = {
    "generate": (),
    "pod": ("snapshots",),
    "train": ("snapshots", "basis"),
    "evaluate": ("basis", "model"),
    "benchmark": ("basis", "model", "eval"),
}
_OPTIONAL_INPUTS = {"eval"}  # benchmark folds the eval summary in when present
_STEP_OUTPUTS = {
    "generate": ("snapshots",),
    "pod": ("basis", "sigma"),
    "train": ("model", "history"),
    "evaluate": ("eval",),
    "benchmark": ("bench", "bench_trials"),
}


class Manifest:
    """``manifest.txt``: config echo plus per-step keys and artifact hashes (TOML)."""

    def __init__(self, path):
        self.path = Path(path)
        self.config = {}
        self.steps: dict[str, dict] = {}
        if self.path.exists():
            import tomli

            with open(self.path, "rb") as fh:
                data = tomli.load(fh)
            self.config = json.loads(data.get("config", "{}"))
            self.steps = data.get("steps", {})

    def save(self, cfg: PipelineConfig):
        complete = all(self.steps.get(s, {}).get("status") == "done" for s in STEPS)
        lines = [
            "# podsur run manifest",
            f"config_hash = {json.dumps(config_hash(cfg))}",
            f"config = {json.dumps(json.dumps(to_dict(cfg), sort_keys=True))}",
            f"complete = {'true' if complete else 'false'}",
            "",
        ]
        for step in STEPS:
            if step not in self.steps:
                continue
            lines.append(f"[steps.{step}]")
            for k, v in self.steps[step].items():
                lines.append(f"{json.dumps(k)} = {json.dumps(v)}")
            lines.append("")
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text("\n".join(lines))
        tmp.replace(self.path)


def _step_key(step, cfg, out: Path) -> str:
    inputs = {}
    for name in _STEP_INPUTS[step]:
        p = out / ARTIFACTS[name]
        if name in _OPTIONAL_INPUTS and not p.exists():
            inputs[name] = None
        else:
            inputs[name] = file_hash(p)
    return config_hash({"step": step, "config": to_dict(_STEP_CONFIG[step](cfg)), "inputs": inputs})


def _is_current(manifest: Manifest, step, key, out: Path) -> bool:
    entry = manifest.steps.get(step)
    if not entry or entry.get("status") != "done" or entry.get("key") != key:
        return False
    for name in _STEP_OUTPUTS[step]:
        p = out / ARTIFACTS[name]
        if not p.exists() or entry.get(ARTIFACTS[name]) != file_hash(p):
            return False
    return True


def _execute(step, cfg: PipelineConfig, out: Path):
    path = {k: out / v for k, v in ARTIFACTS.items()}
    if step == "generate":
        mesh = build_mesh(cfg)
        samples = sample_parameters(cfg.n_snapshots, cfg.ranges, cfg.sampling_seed, cfg.kappa_scale)
        snaps = generate_snapshots(mesh, samples, cfg.source, cfg.sampling_seed, cfg.ranges,
                                   cfg.workers, cfg.fem_tol)
        save_snapshots(snaps, path["snapshots"])
    elif step == "pod":
        snaps = load_snapshots(path["snapshots"])
        basis = compute_pod(snaps.U, cfg.eta, center=cfg.center)
        save_basis(basis, path["basis"])
        export_singular_values(basis, path["sigma"])
        log.info("POD rank m=%d captures %.6f of the energy", basis.m, basis.captured_energy)
    elif step == "train":
        snaps = load_snapshots(path["snapshots"])
        basis = load_basis(path["basis"], snaps.n_nodes)
        coeffs = project(basis, snaps.U).T
        model = init_model((3, *cfg.hidden, basis.m), cfg.init_seed)
        model, history = train_lm(model, snaps.params, coeffs, cfg.train, cfg.log_kappa)
        save_model(model, path["model"])
        export_history(history, path["history"])
    elif step == "evaluate":
        mesh = build_mesh(cfg)
        basis = load_basis(path["basis"], mesh.n_nodes)
        model = load_model(path["model"])
        samples = sample_parameters(cfg.n_test, cfg.ranges, cfg.test_seed, cfg.kappa_scale)
        report = evaluate(model, basis, mesh, samples, cfg.source, cfg.fem_tol)
        export_eval_csv(report, path["eval"])
        log.info("mean relative error %.4f over %d samples", report.mean, report.n_test)
    elif step == "benchmark":
        mesh = build_mesh(cfg)
        basis = load_basis(path["basis"], mesh.n_nodes)
        model = load_model(path["model"])
        bench = benchmark(model, basis, mesh, cfg.n_bench, cfg.bench_seed, cfg.source,
                          cfg.ranges, cfg.fem_tol)
        ev = read_eval_csv(path["eval"]) if path["eval"].exists() else None
        export_summary(path["bench"], bench, ev)
        export_bench_trials(bench, path["bench_trials"])
        log.info("speed-up %.1fx over %d trials", bench.speedup, bench.n_trials)
    else:
        raise ValueError(f"unknown step {step!r}")


def run_step(step: str, cfg: PipelineConfig, force: bool = True) -> str:
    """Run one step; returns ``"ran"`` or ``"skipped"``.

    Raises
    ------
    StepError
        Wrapping whatever the step raised; the manifest records the failure.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out / ARTIFACTS["manifest"])
    try:
        key = _step_key(step, cfg, out)
    except FileNotFoundError as exc:
        raise StepError(step, f"missing input artifact {exc.filename}") from exc
    if not force and _is_current(manifest, step, key, out):
        log.info("step %s: up to date, skipped", step)
        return "skipped"
    manifest.steps[step] = {"status": "running", "key": key}
    manifest.save(cfg)
    t0 = time.perf_counter()
    try:
        _execute(step, cfg, out)
    except Exception as exc:
        manifest.steps[step] = {"status": "failed", "key": key, "error": repr(exc)}
        manifest.save(cfg)
        raise StepError(step, exc) from exc
    entry = {"status": "done", "key": key, "seconds": round(time.perf_counter() - t0, 3)}
    for name in _STEP_OUTPUTS[step]:
        entry[ARTIFACTS[name]] = file_hash(out / ARTIFACTS[name])
    manifest.steps[step] = entry
    manifest.save(cfg)
    log.info("step %s: done in %.1fs", step, entry["seconds"])
    return "ran"


def run_pipeline(cfg: PipelineConfig) -> dict[str, str]:
    """Run all five steps in order, skipping those whose key and outputs are unchanged."""
    return {step: run_step(step, cfg, force=False) for step in STEPS}
