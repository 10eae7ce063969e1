import numpy as np
import pytest

from pgdbar.errors import InvalidArgument, UndefinedReference
from pgdbar.fem import LiftField, TimeGrid
from pgdbar.metrics import (
    Comparison,
    RunReport,
    condition_number,
    energy_trajectory,
    error_field_grid,
    frobenius_error,
    record_rank,
    relative_error,
    spacetime_l2_norm,
)
from pgdbar.modes import EnrichmentLog, SeparatedField, stagnation


@pytest.fixture()
def grid():
    return TimeGrid(1.0, 16)


def test_norm_of_constant(unit_ops, grid):
    field = np.ones((8, grid.n_times))
    expected = np.sqrt(np.ones(8).dot(unit_ops.Mbar @ np.ones(8)))
    assert spacetime_l2_norm(field, unit_ops, grid) == pytest.approx(expected)


def test_norm_representations_agree(unit_ops, grid, rng):
    spatial = rng.standard_normal((8, 3))
    temporal = rng.standard_normal((3, grid.n_times))
    dense = spatial @ temporal
    expected = spacetime_l2_norm(dense, unit_ops, grid)
    assert spacetime_l2_norm((spatial, temporal), unit_ops, grid) == pytest.approx(expected)

    base = rng.standard_normal((8, grid.n_times))
    lift = LiftField(base, np.zeros_like(base), np.zeros_like(base), np.zeros_like(base))
    field = SeparatedField(lift, "q", spatial, temporal)
    assert spacetime_l2_norm(field, unit_ops, grid) == pytest.approx(
        spacetime_l2_norm(base + dense, unit_ops, grid)
    )


def test_norm_triangle_and_homogeneity(unit_ops, grid, rng):
    for _ in range(5):
        a = rng.standard_normal((8, grid.n_times))
        b = rng.standard_normal((8, grid.n_times))
        c = rng.uniform(-10.0, 10.0)
        norm_a = spacetime_l2_norm(a, unit_ops, grid)
        norm_b = spacetime_l2_norm(b, unit_ops, grid)
        assert spacetime_l2_norm(a + b, unit_ops, grid) <= norm_a + norm_b + 1e-10
        assert spacetime_l2_norm(c * a, unit_ops, grid) == pytest.approx(abs(c) * norm_a, rel=1e-10)


def test_norm_shape_mismatch(unit_ops, grid):
    with pytest.raises(InvalidArgument):
        spacetime_l2_norm(np.ones((8, 3)), unit_ops, grid)


def test_relative_error(unit_ops, grid, rng):
    reference = rng.standard_normal((8, grid.n_times))
    assert relative_error(reference, reference, unit_ops, grid) == 0.0
    assert relative_error(2.0 * reference, reference, unit_ops, grid) == pytest.approx(1.0)
    assert relative_error(np.zeros_like(reference), reference, unit_ops, grid) == pytest.approx(1.0)


def test_relative_error_zero_reference(unit_ops, grid):
    zeros = np.zeros((8, grid.n_times))
    with pytest.raises(UndefinedReference):
        relative_error(zeros, zeros, unit_ops, grid)
    with pytest.raises(UndefinedReference):
        frobenius_error(zeros, zeros)


def test_frobenius_error():
    reference = np.eye(3)
    assert frobenius_error(np.zeros((3, 3)), reference) == pytest.approx(1.0)


def test_energy_kinds(unit_ops):
    Q = np.zeros((8, 2))
    companion = np.ones((8, 2))
    ham = energy_trajectory(Q, companion, unit_ops, "hamiltonian")
    lag = energy_trajectory(Q, companion, unit_ops, "lagrangian")
    expected = 0.5 * np.ones(8).dot(unit_ops.M @ np.ones(8))
    assert np.allclose(ham, expected)
    assert np.allclose(lag, expected)
    with pytest.raises(InvalidArgument):
        energy_trajectory(Q, companion, unit_ops, "kinetic")


@pytest.mark.parametrize(
    "matrix,expected",
    [(np.eye(3), 1.0), (np.diag([1.0, 4.0]), 4.0), (np.diag([1.0, 0.0]), float("inf"))],
)
def test_condition_number(matrix, expected):
    assert condition_number(matrix) == pytest.approx(expected)


@pytest.mark.parametrize("matrix", [np.zeros((0, 0)), np.ones((2, 3))])
def test_condition_number_invalid(matrix):
    with pytest.raises(InvalidArgument):
        condition_number(matrix)


def test_error_field_grid():
    assert np.allclose(error_field_grid([[1.0, -1.0]], [[0.0, 1.0]]), [[1.0, 2.0]])
    with pytest.raises(InvalidArgument):
        error_field_grid(np.ones((2, 2)), np.ones((2, 3)))


def test_stagnation_scale_invariant(unit_ops, grid, rng):
    mu = rng.standard_normal(8)
    lam = rng.standard_normal(grid.n_times)
    assert stagnation((mu, lam), (mu, lam), unit_ops.Mbar, grid) == 0.0
    s = stagnation((mu, lam), (mu, 0.5 * lam), unit_ops.Mbar, grid)
    scaled = stagnation((1e6 * mu, lam), (1e6 * mu, 0.5 * lam), unit_ops.Mbar, grid)
    assert s == pytest.approx(2.0 / 3.0)
    assert scaled == pytest.approx(s)


def test_record_rank_undefined(unit_ops, grid):
    zeros = np.zeros((8, grid.n_times))
    report = RunReport("hpgd")
    energy = np.zeros(grid.n_times)
    record_rank(report, 0, zeros, zeros, energy, Comparison(zeros, zeros, energy), unit_ops, grid)
    assert report.ranks == [0]
    assert report.eps_q == [None]
    assert report.eps_p_frobenius == [None]
    assert report.energy_err_max == [0.0]
    assert report.eps_q_analytical == [None]
    assert report.final_rank == 0


def test_report_failures():
    report = RunReport("lpgd1")
    report.fail(3, ValueError("singular"))
    report.event(2, ValueError("update skipped"))
    report.record_condition(1, "K_lx", 1.0)
    assert report.failures == [(3, "ValueError", "singular")]
    assert report.events == [(2, "ValueError", "update skipped")]
    assert report.condition == {"K_lx": [(1, 1.0)]}


def test_unconverged_ranks():
    report = RunReport("hpgd")
    report.logs.extend(
        [
            (1, EnrichmentLog(3, 1e-9, True, label="q")),
            (1, EnrichmentLog(20, 0.7, False, label="p")),
            (2, EnrichmentLog(20, 2.0, False, label="q")),
            (2, EnrichmentLog(20, 1.5, False, label="p")),
            (3, EnrichmentLog(1, 0.0, False, zero=True)),
        ]
    )
    assert report.unconverged_ranks == [1, 2]
    assert RunReport("svd").unconverged_ranks == []


def test_stagnation_resolves_small_changes(unit_ops, grid, rng):
    mu = rng.standard_normal(8)
    lam = rng.standard_normal(grid.n_times)
    for change in (1e-6, 1e-10, 1e-12):
        s = stagnation((mu, lam), (mu, (1.0 - change) * lam), unit_ops.Mbar, grid)
        assert s == pytest.approx(change, rel=1e-3)
