"""Feedforward tanh network trained with Levenberg-Marquardt.

The network maps a parameter triple to POD coefficients. Inputs and targets
are min-max scaled to ``[-1, 1]`` with statistics taken from the training
split; training minimizes the mean squared error in the scaled target space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from .container import FormatError, read_container, write_container
from .pod import PodBasis, reconstruct

__all__ = [
    "MinMaxScaler",
    "MlpModel",
    "TrainConfig",
    "TrainHistory",
    "TrainingError",
    "ConfigurationError",
    "init_model",
    "forward",
    "network_jacobian",
    "lm_step",
    "train_lm",
    "train_test_split",
    "predict_field",
    "save_model",
    "load_model",
    "export_history",
]

log = logging.getLogger(__name__)

MAGIC = b"PODM"
ACTIVATIONS = {"tanh": 1, "identity": 0}


class TrainingError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MinMaxScaler:
    """Per-feature affine map of ``[lo, hi]`` onto ``[-1, 1]``.

    Features with ``hi == lo`` carry no information and map to 0. When
    ``log_features`` marks a column, the map is applied to ``log10`` of it.
    """

    lo: np.ndarray
    hi: np.ndarray
    log_features: np.ndarray | None = None

    @classmethod
    def fit(cls, X, log_features=None) -> "MinMaxScaler":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lf = None
        if log_features is not None and np.any(log_features):
            lf = np.asarray(log_features, dtype=bool)
            X = _apply_log(X, lf)
        return cls(X.min(axis=0), X.max(axis=0), lf)

    @property
    def _span(self):
        return self.hi - self.lo

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.log_features is not None:
            X = _apply_log(X, self.log_features)
        span = self._span
        ok = span > 0
        out = np.zeros(np.broadcast(X, self.lo).shape)
        out[..., ok] = 2.0 * (X[..., ok] - self.lo[ok]) / span[ok] - 1.0
        return out

    def inverse(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        X = self.lo + 0.5 * (Z + 1.0) * self._span
        if self.log_features is not None:
            X = np.array(X, copy=True)
            X[..., self.log_features] = 10.0 ** X[..., self.log_features]
        return X

    @property
    def scale(self) -> np.ndarray:
        """d(original) / d(scaled) per feature (linear features only)."""
        return 0.5 * self._span


def _apply_log(X, mask):
    X = np.array(X, dtype=float, copy=True)
    X[..., mask] = np.log10(X[..., mask])
    return X


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 1000
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_max: float = 1e10
    val_fraction: float = 0.2
    patience: int = 6
    seed: int = 0
    grad_tol: float = 1e-10

    def __post_init__(self):
        if not 0 <= self.val_fraction <= 0.5:
            raise ValueError("val_fraction must lie in [0, 0.5]")
        if self.lambda_up <= 1 or self.lambda_down <= 1:
            raise ValueError("damping factors must exceed 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if not self.lambda0 > 0 or not self.lambda_max > 0:
            raise ValueError("damping parameters must be positive")


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Dense network ``[n_in, h_1, ..., n_out]``: tanh hidden layers, linear output.

    ``weights[l]`` has shape ``(layer_sizes[l+1], layer_sizes[l])``.
    """

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    input_norm: MinMaxScaler | None = None
    target_norm: MinMaxScaler | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def theta(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def with_theta(self, theta) -> "MlpModel":
        theta = np.asarray(theta, dtype=float)
        Ws, bs, k = [], [], 0
        for W, b in zip(self.weights, self.biases):
            Ws.append(theta[k:k + W.size].reshape(W.shape))
            k += W.size
            bs.append(theta[k:k + b.size].copy())
            k += b.size
        if k != theta.size:
            raise ValueError(f"parameter vector has {theta.size} entries, model needs {k}")
        return replace(self, weights=tuple(Ws), biases=tuple(bs))

    def extrapolates(self, mu) -> np.ndarray | bool:
        """True where ``mu`` lies outside the input box seen in training."""
        if self.input_norm is None:
            return False
        z = self.input_norm.transform(mu)
        out = np.any(np.abs(z) > 1.0 + 1e-12, axis=-1)
        return bool(out) if out.ndim == 0 else out

    def __eq__(self, other):
        if not isinstance(other, MlpModel):
            return NotImplemented
        same_norm = all(
            _norm_equal(a, b) for a, b in
            ((self.input_norm, other.input_norm), (self.target_norm, other.target_norm))
        )
        return (
            self.layer_sizes == other.layer_sizes
            and np.array_equal(self.theta(), other.theta())
            and same_norm
            and self.meta == other.meta
        )


def _norm_equal(a, b):
    if a is None or b is None:
        return a is b
    la_, lb_ = a.log_features, b.log_features
    return (
        np.array_equal(a.lo, b.lo)
        and np.array_equal(a.hi, b.hi)
        and (la_ is None) == (lb_ is None)
        and (la_ is None or np.array_equal(la_, lb_))
    )


def init_model(layer_sizes, seed: int = 0) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes) or any(s != v for s, v in zip(sizes, layer_sizes)):
        raise ValueError(f"invalid layer sizes {layer_sizes!r}")
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        s = math.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpModel(sizes, tuple(Ws), tuple(bs), meta={"init_seed": int(seed)})


def _forward_scaled(model: MlpModel, Z: np.ndarray, keep: bool = False):
    """Network on already-scaled inputs ``Z`` of shape ``(n, n_in)``."""
    h = Z
    acts = [h]
    last = len(model.weights) - 1
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ W.T + b
        if l < last:
            h = np.tanh(h)
        acts.append(h)
    return (h, acts) if keep else h


def forward(model: MlpModel, mu) -> np.ndarray:
    """Predicted coefficients for one triple ``(3,)`` or a batch ``(n, 3)``.

    Inputs outside the training box are evaluated as-is; use
    :meth:`MlpModel.extrapolates` to detect them.
    """
    X = np.asarray(mu, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"expected {model.layer_sizes[0]} inputs, got {X.shape[1]}")
    Z = model.input_norm.transform(X) if model.input_norm is not None else X
    Y = _forward_scaled(model, Z)
    if model.target_norm is not None:
        Y = model.target_norm.inverse(Y)
    return Y[0] if single else Y


def network_jacobian(model: MlpModel, Z: np.ndarray):
    """Outputs and their derivatives with respect to all parameters.

    Parameters
    ----------
    Z : (n, n_in) ndarray
        Scaled inputs.

    Returns
    -------
    Y : (n, n_out) ndarray
    J : (n * n_out, n_params) ndarray
        Row ``i * n_out + k`` holds ``d Y[i, k] / d theta`` with ``theta``
        ordered as in :meth:`MlpModel.theta`.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Y, acts = _forward_scaled(model, Z, keep=True)
    n, m = Y.shape
    J = np.empty((n, m, model.n_params))

    offsets = []
    k = 0
    for W, b in zip(model.weights, model.biases):
        offsets.append(k)
        k += W.size + b.size

    # G[i, k, :] = d Y[i, k] / d (pre-activation of the current layer)
    G = np.broadcast_to(np.eye(m), (n, m, m))
    for l in range(len(model.weights) - 1, -1, -1):
        W = model.weights[l]
        h_prev = acts[l]
        o = offsets[l]
        J[:, :, o:o + W.size] = (G[:, :, :, None] * h_prev[:, None, None, :]).reshape(n, m, W.size)
        J[:, :, o + W.size:o + W.size + W.shape[0]] = G
        if l > 0:
            G = (G @ W) * (1.0 - h_prev * h_prev)[:, None, :]
    return Y, J.reshape(n * m, -1)


def lm_step(J: np.ndarray, r: np.ndarray, lam: float, mode: str = "auto") -> np.ndarray:
    """Solve ``(J^T J + lam I) delta = J^T r``.

    ``mode="dual"`` uses the equivalent ``delta = J^T (J J^T + lam I)^{-1} r``,
    which is cheaper when there are fewer residuals than parameters;
    ``"auto"`` picks the smaller system.
    """
    if mode == "auto":
        mode = "dual" if J.shape[0] < J.shape[1] else "primal"
    if mode == "primal":
        H = J.T @ J
        H[np.diag_indices_from(H)] += lam
        return la.cho_solve(la.cho_factor(H), J.T @ r)
    if mode == "dual":
        K = J @ J.T
        K[np.diag_indices_from(K)] += lam
        return J.T @ la.cho_solve(la.cho_factor(K), r)
    raise ValueError(f"unknown mode {mode!r}")


class _DampedSolver:
    """Caches ``J^T J`` or ``J J^T`` for one epoch while ``lam`` varies."""

    def __init__(self, J, r):
        self.J, self.r = J, r
        self.dual = J.shape[0] < J.shape[1]
        self.H = J @ J.T if self.dual else J.T @ J
        self.rhs = r if self.dual else J.T @ r

    def step(self, lam):
        H = self.H.copy()
        H[np.diag_indices_from(H)] += lam
        x = la.cho_solve(la.cho_factor(H), self.rhs)
        return self.J.T @ x if self.dual else x


@dataclass
class TrainHistory:
    epoch: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    stop_reason: str = ""

    def record(self, epoch, lam, train_mse, val_mse, accepted):
        self.epoch.append(int(epoch))
        self.lam.append(float(lam))
        self.train_mse.append(float(train_mse))
        self.val_mse.append(float(val_mse))
        self.accepted.append(bool(accepted))

    def accepted_train_mse(self) -> list[float]:
        return [m for m, a in zip(self.train_mse, self.accepted) if a]


def train_test_split(n: int, val_fraction: float, seed: int):
    """Random index split; returns ``(train_idx, val_idx)``, both sorted."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(round(val_fraction * n))
    if n - n_val < 1:
        n_val = n - 1
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _mse(model, Z, T):
    return float(np.mean((T - _forward_scaled(model, Z)) ** 2))


def train_lm(model: MlpModel, mu, a, config: TrainConfig = TrainConfig(),
             log_kappa: bool = False) -> tuple[MlpModel, TrainHistory]:
    """Fit ``model`` to pairs ``(mu[i], a[i])`` with Levenberg-Marquardt.

    Each epoch linearizes the stacked residual of all training samples and
    coefficients, then tries damped Gauss-Newton steps, raising the damping
    after every rejected step, until one lowers the training MSE. A held-out
    validation split drives early stopping; the weights with the best
    validation MSE are returned.

    Parameters
    ----------
    model : MlpModel
        Initial weights; any normalization on it is replaced.
    mu : (n, n_in) array_like
    a : (n, n_out) array_like
    config : TrainConfig
    log_kappa : bool
        Scale the first input feature in ``log10``.

    Returns
    -------
    model : MlpModel
        Trained network carrying its normalization and training metadata.
    history : TrainHistory
        One row per attempted step.

    Raises
    ------
    TrainingError
        If the damped normal equations cannot be factorized even at
        ``lambda_max``.
    """
    X = np.atleast_2d(np.asarray(mu, dtype=float))
    A = np.asarray(a, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if X.shape[0] != A.shape[0]:
        raise ValueError("inputs and targets have different sample counts")
    if X.shape[1] != model.layer_sizes[0] or A.shape[1] != model.layer_sizes[-1]:
        raise ConfigurationError(
            f"data has {X.shape[1]} inputs / {A.shape[1]} outputs, "
            f"model expects {model.layer_sizes[0]} / {model.layer_sizes[-1]}"
        )

    train_idx, val_idx = train_test_split(X.shape[0], config.val_fraction, config.seed)
    log_features = None
    if log_kappa:
        log_features = np.zeros(X.shape[1], dtype=bool)
        log_features[0] = True
    in_norm = MinMaxScaler.fit(X[train_idx], log_features)
    out_norm = MinMaxScaler.fit(A[train_idx])
    Zt, Tt = in_norm.transform(X[train_idx]), out_norm.transform(A[train_idx])
    Zv, Tv = in_norm.transform(X[val_idx]), out_norm.transform(A[val_idx])
    has_val = len(val_idx) > 0

    net = replace(model, input_norm=in_norm, target_norm=out_norm)
    theta = net.theta()
    lam = config.lambda0
    history = TrainHistory()
    train_mse = _mse(net, Zt, Tt)
    val_mse = _mse(net, Zv, Tv) if has_val else float("nan")
    history.record(0, lam, train_mse, val_mse, True)
    best_theta, best_val = theta, val_mse
    fails = 0
    epochs_run = 0
    reason = "max_epochs"

    for epoch in range(1, config.max_epochs + 1):
        Y, J = network_jacobian(net, Zt)
        r = (Tt - Y).ravel()
        grad = J.T @ r
        if float(np.linalg.norm(grad)) < config.grad_tol:
            reason = "gradient"
            break
        solver = _DampedSolver(J, r)
        accepted = False
        while True:
            try:
                delta = solver.step(lam)
            except la.LinAlgError:
                if lam >= config.lambda_max:
                    history.stop_reason = "singular"
                    raise TrainingError(
                        f"damped normal equations singular at lambda={lam:.3e}", history
                    ) from None
                lam *= config.lambda_up
                continue
            trial = net.with_theta(theta + delta)
            trial_mse = _mse(trial, Zt, Tt)
            if np.isfinite(trial_mse) and trial_mse < train_mse:
                accepted = True
                break
            history.record(epoch, lam, trial_mse, val_mse, False)
            lam *= config.lambda_up
            if lam > config.lambda_max:
                break
        epochs_run = epoch
        if not accepted:
            reason = "lambda_max"
            break

        theta, net, train_mse = trial.theta(), trial, trial_mse
        lam = lam / config.lambda_down
        if has_val:
            val_mse = _mse(net, Zv, Tv)
        history.record(epoch, lam, train_mse, val_mse, True)
        if has_val:
            if val_mse < best_val:
                best_theta, best_val, fails = theta, val_mse, 0
            else:
                fails += 1
                if fails >= config.patience:
                    reason = "early_stop"
                    break
        else:
            best_theta = theta

    history.stop_reason = reason
    net = net.with_theta(best_theta)
    meta = dict(model.meta)
    meta.update(
        split_seed=int(config.seed),
        epochs=int(epochs_run),
        stop_reason=reason,
        train_mse=_mse(net, Zt, Tt),
        val_mse=_mse(net, Zv, Tv) if has_val else None,
        n_train=int(len(train_idx)),
        n_val=int(len(val_idx)),
    )
    log.info("training stopped after %d epochs (%s), train mse %.3e", epochs_run, reason, meta["train_mse"])
    return replace(net, meta=meta), history


def predict_field(model: MlpModel, basis: PodBasis, mu) -> np.ndarray:
    """Surrogate field: basis reconstruction of the predicted coefficients."""
    if model.n_outputs != basis.m:
        raise ConfigurationError(
            f"model predicts {model.n_outputs} coefficients but the basis has rank {basis.m}"
        )
    return reconstruct(basis, forward(model, mu).T)


def save_model(model: MlpModel, path) -> None:
    def norm_header(nm):
        if nm is None:
            return None
        lf = None if nm.log_features is None else [bool(v) for v in nm.log_features]
        return {"log_features": lf}

    header = {
        "layer_sizes": list(model.layer_sizes),
        "activations": [ACTIVATIONS["tanh"]] * (len(model.layer_sizes) - 2) + [ACTIVATIONS["identity"]],
        "input_norm": norm_header(model.input_norm),
        "target_norm": norm_header(model.target_norm),
        "meta": model.meta,
    }
    blocks = []
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        blocks += [(f"W{l}", W), (f"b{l}", b)]
    for name, nm in (("input", model.input_norm), ("target", model.target_norm)):
        if nm is not None:
            blocks += [(f"{name}_lo", nm.lo), (f"{name}_hi", nm.hi)]
    write_container(path, MAGIC, header, blocks)


def load_model(path) -> MlpModel:
    header, arrays = read_container(path, MAGIC)
    try:
        sizes = tuple(int(s) for s in header["layer_sizes"])
        Ws = tuple(arrays[f"W{l}"] for l in range(len(sizes) - 1))
        bs = tuple(arrays[f"b{l}"] for l in range(len(sizes) - 1))
        norms = {}
        for name in ("input", "target"):
            h = header[f"{name}_norm"]
            if h is None:
                norms[name] = None
                continue
            lf = None if h["log_features"] is None else np.array(h["log_features"], dtype=bool)
            norms[name] = MinMaxScaler(arrays[f"{name}_lo"], arrays[f"{name}_hi"], lf)
    except KeyError as exc:
        raise FormatError(f"{path}: missing field {exc}") from None
    for l, (W, b) in enumerate(zip(Ws, bs)):
        if W.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
            raise FormatError(f"{path}: layer {l} has shape {W.shape}, expected {(sizes[l + 1], sizes[l])}")
    return MlpModel(sizes, Ws, bs, norms["input"], norms["target"], header["meta"])


def export_history(history: TrainHistory, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,lambda,train_mse,val_mse,accepted\n")
        for row in zip(history.epoch, history.lam, history.train_mse, history.val_mse, history.accepted):
            e, lam, tr, va, acc = row
            fh.write(f"{e},{lam:.17g},{tr:.17g},{va:.17g},{int(acc)}\n")
