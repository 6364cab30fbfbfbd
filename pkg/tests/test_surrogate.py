import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from podsur.container import FormatError
from podsur.pod import compute_pod, reconstruct
from podsur.surrogate import (
    ConfigurationError,
    MinMaxScaler,
    MlpModel,
    TrainConfig,
    export_history,
    forward,
    init_model,
    lm_step,
    load_model,
    network_jacobian,
    predict_field,
    save_model,
    train_lm,
    train_test_split,
)

LO = np.array([1e-3, 0.0, 0.1])
HI = np.array([1e-1, 1.0, 1.0])


def linear_data(n=200, m=4, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.uniform(LO[i], HI[i], n) for i in range(3)])
    W = rng.standard_normal((m, 3))
    c = rng.standard_normal(m)
    return X, X @ W.T + c


def fd_jacobian(model, Z, h=1e-6):
    theta = model.theta()
    cols = []
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        yp = forward(model.with_theta(theta + e), Z).ravel()
        ym = forward(model.with_theta(theta - e), Z).ravel()
        cols.append((yp - ym) / (2 * h))
    return np.column_stack(cols)


def test_init_shapes_and_seed():
    model = init_model([3, 2, 1], seed=0)
    assert [W.shape for W in model.weights] == [(2, 3), (1, 2)]
    assert [b.shape for b in model.biases] == [(2,), (1,)]
    assert model.n_params == 11
    assert not any(b.any() for b in model.biases)
    limit = np.sqrt(6 / 5)
    assert np.abs(model.weights[0]).max() <= limit
    assert init_model([3, 2, 1], seed=0) == model
    assert init_model([3, 2, 1], seed=1) != model


@pytest.mark.parametrize("sizes", [[3], [3, 0, 1], [3, 2.5, 1]])
def test_init_rejects_bad_sizes(sizes):
    with pytest.raises(ValueError):
        init_model(sizes)


def test_zero_weights_give_bias():
    model = init_model([3, 4, 2])
    bias = np.array([0.25, -1.5])
    model = MlpModel(
        model.layer_sizes,
        tuple(np.zeros_like(W) for W in model.weights),
        (np.zeros(4), bias),
    )
    np.testing.assert_array_equal(forward(model, [0.05, 0.5, 0.5]), bias)
    np.testing.assert_array_equal(forward(model, np.ones((5, 3))), np.tile(bias, (5, 1)))


def test_identity_layer():
    model = MlpModel((3, 3), (np.eye(3),), (np.zeros(3),))
    x = np.array([0.1, -0.2, 0.3])
    np.testing.assert_array_equal(forward(model, x), x)
    with pytest.raises(ValueError):
        forward(model, [1.0, 2.0])


def test_theta_round_trip():
    model = init_model([3, 5, 4, 2], seed=3)
    theta = model.theta()
    assert theta.size == model.n_params
    assert model.with_theta(theta) == model
    with pytest.raises(ValueError):
        model.with_theta(theta[:-1])


@pytest.mark.parametrize("sizes, seed", [([3, 4, 2], 0), ([3, 10, 10, 3], 1), ([2, 7, 1], 2)])
def test_jacobian_matches_finite_differences(sizes, seed):
    model = init_model(sizes, seed)
    rng = np.random.default_rng(seed)
    # non-zero biases so every parameter block is exercised
    model = model.with_theta(model.theta() + 0.3 * rng.standard_normal(model.n_params))
    Z = rng.uniform(-1, 1, (6, sizes[0]))
    Y, J = network_jacobian(model, Z)
    np.testing.assert_allclose(Y, forward(model, Z))
    Jfd = fd_jacobian(model, Z)
    rel = np.abs(J - Jfd).max() / np.abs(Jfd).max()
    assert rel < 1e-5


@pytest.mark.parametrize("shape", [(5, 12), (12, 5), (7, 7)])
def test_dual_and_primal_steps_agree(shape):
    rng = np.random.default_rng(sum(shape))
    J = rng.standard_normal(shape)
    r = rng.standard_normal(shape[0])
    for lam in (1e-3, 1.0, 1e3):
        d1 = lm_step(J, r, lam, "primal")
        d2 = lm_step(J, r, lam, "dual")
        assert np.abs(d1 - d2).max() <= 1e-8 * max(1.0, np.abs(d1).max())
        # the step solves the damped normal equations
        np.testing.assert_allclose((J.T @ J + lam * np.eye(shape[1])) @ d1, J.T @ r, atol=1e-9)
    with pytest.raises(ValueError):
        lm_step(J, r, 1.0, "cholesky")


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=6),
    st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
)
def test_scaler_round_trip(data, probe):
    X = np.array(data).reshape(2, 3)
    scaler = MinMaxScaler.fit(X)
    Z = scaler.transform(X)
    assert np.all(np.abs(Z) <= 1 + 1e-12)
    ok = scaler.hi > scaler.lo
    x = np.array(probe)
    back = scaler.inverse(scaler.transform(x))
    np.testing.assert_allclose(back[ok], x[ok], rtol=1e-9, atol=1e-9 * (np.abs(X).max() + 1))


def test_scaler_degenerate_feature_maps_to_zero():
    X = np.array([[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]])
    scaler = MinMaxScaler.fit(X)
    Z = scaler.transform(X)
    assert np.all(Z[:, 1] == 0.0)
    np.testing.assert_array_equal(Z[:, 0], [-1.0, 1.0, 0.0])
    np.testing.assert_array_equal(scaler.inverse(Z), X)


def test_log_scaler():
    X = np.array([[1e-3, 0.0], [1e-1, 1.0], [1e-2, 0.5]])
    scaler = MinMaxScaler.fit(X, log_features=[True, False])
    np.testing.assert_allclose(scaler.transform(X)[:, 0], [-1.0, 1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(scaler.inverse(scaler.transform(X)), X, rtol=1e-14)


def test_split_is_deterministic_and_disjoint():
    tr, va = train_test_split(50, 0.2, 7)
    assert len(va) == 10 and len(tr) == 40
    assert not set(tr) & set(va)
    tr2, va2 = train_test_split(50, 0.2, 7)
    np.testing.assert_array_equal(tr, tr2)
    np.testing.assert_array_equal(va, va2)
    assert len(train_test_split(1, 0.5, 0)[0]) == 1


def test_linear_data_fits_and_mse_decreases():
    X, A = linear_data()
    model, history = train_lm(init_model([3, 8, 4], 0), X, A, TrainConfig(max_epochs=200, val_fraction=0.0))
    assert model.meta["epochs"] <= 200
    assert model.meta["train_mse"] < 1e-8
    accepted = history.accepted_train_mse()
    assert np.all(np.diff(accepted) < 0)


def test_single_sample_is_memorized():
    X = np.array([[0.05, 0.5, 0.5]])
    A = np.array([[1.0, -2.0, 0.5]])
    model, _ = train_lm(init_model([3, 5, 3], 1), X, A, TrainConfig(max_epochs=100, val_fraction=0.0))
    # one sample: every feature is degenerate, the net must learn the constant
    assert np.mean((forward(model, X) - A) ** 2) < 1e-10


def test_early_stopping_returns_best_validation_weights():
    rng = np.random.default_rng(0)
    X = rng.uniform(LO, HI, (40, 3))
    A = np.sin(20 * X[:, :1]) + 0.3 * rng.standard_normal((40, 1))  # noisy: overfits quickly
    cfg = TrainConfig(max_epochs=500, patience=3, val_fraction=0.25, seed=0)
    model, history = train_lm(init_model([3, 10, 10, 1], 0), X, A, cfg)
    assert model.meta["stop_reason"] == "early_stop"
    assert history.stop_reason == "early_stop"
    val = [v for v, a in zip(history.val_mse, history.accepted) if a]
    assert model.meta["val_mse"] == pytest.approx(min(val), rel=1e-12)
    assert model.meta["n_train"] == 30 and model.meta["n_val"] == 10


def test_training_is_deterministic():
    X, A = linear_data(60, 2, seed=3)
    cfg = TrainConfig(max_epochs=20)
    m1, _ = train_lm(init_model([3, 6, 2], 4), X, A, cfg)
    m2, _ = train_lm(init_model([3, 6, 2], 4), X, A, cfg)
    assert m1 == m2


def test_zero_epochs_returns_initial_weights():
    X, A = linear_data(20, 2)
    init = init_model([3, 4, 2], 0)
    model, history = train_lm(init, X, A, TrainConfig(max_epochs=0))
    np.testing.assert_array_equal(model.theta(), init.theta())
    assert model.meta["stop_reason"] == "max_epochs"


def test_training_rejects_mismatched_data():
    X, A = linear_data(20, 2)
    with pytest.raises(ConfigurationError):
        train_lm(init_model([3, 4, 3], 0), X, A)
    with pytest.raises(ValueError):
        train_lm(init_model([3, 4, 2], 0), X, A[:5])


@pytest.mark.parametrize("kw", [dict(val_fraction=0.9), dict(lambda_up=1.0), dict(patience=0), dict(lambda0=0.0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_extrapolation_flag():
    X, A = linear_data(30, 2)
    model, _ = train_lm(init_model([3, 4, 2], 0), X, A, TrainConfig(max_epochs=2, val_fraction=0.0))
    assert not model.extrapolates(X).any()
    assert model.extrapolates([10.0, 0.5, 0.5])
    assert not init_model([3, 2]).extrapolates([10.0, 0.5, 0.5])


@pytest.fixture
def small_basis():
    rng = np.random.default_rng(2)
    return compute_pod(rng.standard_normal((30, 6)), 1.0).truncate(3)


def test_predict_field_contracts(small_basis):
    m = small_basis.m
    zero = MlpModel((3, m), (np.zeros((m, 3)),), (np.zeros(m),))
    assert not predict_field(zero, small_basis, [0.05, 0.5, 0.5]).any()
    model = init_model([3, 4, m], 0)
    mu = np.array([[0.05, 0.5, 0.5], [0.01, 0.1, 0.9]])
    expected = reconstruct(small_basis, forward(model, mu).T)
    np.testing.assert_array_equal(predict_field(model, small_basis, mu), expected)
    np.testing.assert_allclose(predict_field(model, small_basis, mu[0]), expected[:, 0], rtol=0, atol=1e-14)
    with pytest.raises(ConfigurationError):
        predict_field(init_model([3, 4, m + 1]), small_basis, mu)


def test_model_round_trip(tmp_path):
    X, A = linear_data(40, 3)
    for log_kappa in (False, True):
        model, _ = train_lm(init_model([3, 5, 3], 0), X, A, TrainConfig(max_epochs=3), log_kappa=log_kappa)
        p1, p2 = tmp_path / "a.podm", tmp_path / "b.podm"
        save_model(model, p1)
        loaded = load_model(p1)
        assert loaded == model
        np.testing.assert_array_equal(forward(loaded, X), forward(model, X))
        save_model(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
    # an untrained model has no normalization
    save_model(init_model([3, 2]), p1)
    assert load_model(p1) == init_model([3, 2])
    p1.write_bytes(p1.read_bytes()[:-3])
    with pytest.raises(FormatError):
        load_model(p1)


def test_history_csv(tmp_path):
    X, A = linear_data(30, 2)
    _, history = train_lm(init_model([3, 4, 2], 0), X, A, TrainConfig(max_epochs=5))
    path = tmp_path / "h.csv"
    export_history(history, path)
    assert path.read_text().startswith("epoch,lambda,train_mse,val_mse,accepted\n")
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (len(history.epoch), 5)
    np.testing.assert_array_equal(data[:, 2], history.train_mse)
