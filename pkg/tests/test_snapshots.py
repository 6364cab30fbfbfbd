import numpy as np
import pytest

from podsur.container import DimensionError, FormatError
from podsur.fem import FemProblem, ParameterSample, solve_instance
from podsur.mesh import build_structured_mesh
from podsur.snapshots import (
    ParameterRanges,
    SnapshotError,
    export_parameters_csv,
    generate_snapshots,
    load_snapshots,
    sample_parameters,
    save_snapshots,
)


@pytest.fixture(scope="module")
def mesh():
    return build_structured_mesh(10.0, 5.0, 12, 6)


def test_sampling_in_ranges_and_reproducible():
    ranges = ParameterRanges()
    a = sample_parameters(200, ranges, seed=3)
    b = sample_parameters(200, ranges, seed=3)
    c = sample_parameters(200, ranges, seed=4)
    assert a == b
    assert a != c
    assert all(isinstance(s, ParameterSample) for s in a)
    assert all(ranges.contains(s) for s in a)
    P = np.array(a)
    assert P[:, 0].min() >= 1e-3 and P[:, 0].max() <= 0.1
    assert P[:, 2].min() >= 0.1


def test_sampling_degenerate_range_and_empty():
    ranges = ParameterRanges(kappa=(0.05, 0.05), beta=(0.0, 0.0), q_in=(0.5, 0.5))
    assert set(sample_parameters(5, ranges)) == {ParameterSample(0.05, 0.0, 0.5)}
    assert sample_parameters(0) == []
    with pytest.raises(ValueError):
        sample_parameters(-1)


def test_log_kappa_sampling():
    P = np.array(sample_parameters(2000, seed=0, kappa_scale="log"))
    assert P[:, 0].min() >= 1e-3 and P[:, 0].max() <= 0.1
    # uniform in log10: roughly half the draws below the geometric midpoint 1e-2
    assert abs(np.mean(P[:, 0] < 1e-2) - 0.5) < 0.05
    with pytest.raises(ValueError):
        sample_parameters(3, kappa_scale="cubic")


@pytest.mark.parametrize(
    "kw",
    [dict(kappa=(0.1, 0.01)), dict(kappa=(0.0, 0.1)), dict(beta=(-0.1, 1.0)), dict(q_in=(1.0, 0.0))],
)
def test_invalid_ranges(kw):
    with pytest.raises(ValueError):
        ParameterRanges(**kw)


def test_columns_match_individual_solves(mesh):
    samples = sample_parameters(6, seed=1)
    snaps = generate_snapshots(mesh, samples, seed=1)
    assert snaps.U.shape == (mesh.n_nodes, 6)
    for j, mu in enumerate(samples):
        np.testing.assert_array_equal(snaps.U[:, j], solve_instance(mesh, mu))
    assert snaps.samples == samples


def test_parallel_generation_is_identical(mesh):
    samples = sample_parameters(10, seed=2)
    serial = generate_snapshots(mesh, samples, seed=2)
    parallel = generate_snapshots(mesh, samples, seed=2, workers=2)
    assert serial == parallel


def test_single_sample(mesh):
    mu = ParameterSample(0.02, 0.3, 0.7)
    snaps = generate_snapshots(mesh, [mu])
    np.testing.assert_array_equal(snaps.U[:, 0], FemProblem(mesh).solve(mu))


def test_linearity_in_inflow_value(mesh):
    snaps = generate_snapshots(mesh, [(0.03, 0.2, 0.2), (0.03, 0.2, 0.4)], source="zero")
    np.testing.assert_allclose(snaps.U[:, 1], 2 * snaps.U[:, 0], rtol=1e-9, atol=1e-13)


def test_failure_reports_index(mesh):
    with pytest.raises(SnapshotError) as err:
        generate_snapshots(mesh, [(0.02, 0.1, 0.5), (-1.0, 0.1, 0.5)])
    assert err.value.index == 1
    assert err.value.mu == (-1.0, 0.1, 0.5)


def test_round_trip(tmp_path, mesh):
    snaps = generate_snapshots(mesh, sample_parameters(4, seed=5), seed=5)
    p1, p2 = tmp_path / "a.pods", tmp_path / "b.pods"
    save_snapshots(snaps, p1)
    loaded = load_snapshots(p1, mesh)
    assert loaded == snaps
    save_snapshots(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_errors(tmp_path, mesh):
    snaps = generate_snapshots(mesh, sample_parameters(3))
    path = tmp_path / "s.pods"
    save_snapshots(snaps, path)
    with pytest.raises(DimensionError):
        load_snapshots(path, build_structured_mesh(10.0, 5.0, 6, 3))
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError):
        load_snapshots(path)
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        load_snapshots(path)
    path.write_bytes(data[:4] + (99).to_bytes(4, "little") + data[8:])
    with pytest.raises(FormatError, match="version"):
        load_snapshots(path)
    path.write_bytes(data[:6])
    with pytest.raises(FormatError):
        load_snapshots(path)


def test_export_parameters(tmp_path):
    mesh = build_structured_mesh(1.0, 1.0, 2, 2)
    samples = sample_parameters(3, seed=9)
    snaps = generate_snapshots(mesh, samples)
    path = tmp_path / "p.csv"
    export_parameters_csv(snaps, path)
    assert path.read_text().startswith("kappa,beta,qin\n")
    np.testing.assert_array_equal(np.loadtxt(path, delimiter=",", skiprows=1), np.array(samples))
