import numpy as np
import pytest

from conftest import comparison_for
from pgdbar.errors import DegenerateMode, InvalidArgument, UpdateFailure
from pgdbar.fem import build_lift, gram_schmidt
from pgdbar.hamiltonian import (
    HamiltonianState,
    _march_lambda,
    _march_omega,
    enrich_h,
    gram_conditions_h,
    gram_matrices_h,
    hamiltonian_blocks,
    residual_context_h,
    run_hpgd,
    spatial_solve_h,
    switch_solve_p,
    switch_solve_q,
    temporal_solve_h,
    update_temporal_h,
)
from pgdbar.metrics import relative_error
from pgdbar.modes import stagnation
from pgdbar.reference import solve_hamiltonian_cn
from pgdbar.verify import manufactured_problem


def initial_factors(grid):
    lam = grid.times / grid.horizon
    om = np.full(grid.n_times, 1.0 / grid.horizon)
    om[0] = 0.0
    return lam, om


def test_zero_residual_gives_zero_modes(zero_problem):
    p = zero_problem
    ctx = residual_context_h(HamiltonianState.empty(p.lift), p.ops, p.grid)
    mu, nu = spatial_solve_h(*initial_factors(p.grid), ctx)
    assert not np.any(mu)
    assert not np.any(nu)


def test_spatial_solve_zero_factors(unit_problem):
    p = unit_problem
    ctx = residual_context_h(HamiltonianState.empty(p.lift), p.ops, p.grid)
    zeros = np.zeros(p.grid.n_times)
    with pytest.raises(InvalidArgument):
        spatial_solve_h(zeros, zeros, ctx)


def test_switch_operators_zero_inputs(zero_problem):
    p = zero_problem
    ctx = residual_context_h(HamiltonianState.empty(p.lift), p.ops, p.grid)
    mu = np.linspace(0.1, 1.0, p.ops.n_dofs)
    lam, om = initial_factors(p.grid)

    nu, om_out, iterations, s, _ = switch_solve_p(mu * 0.0, lam * 0.0, om, ctx)
    assert not np.any(nu) and not np.any(om_out)
    assert iterations == 1 and s == 0.0

    mu_out, lam_out, iterations, s, _ = switch_solve_q(mu * 0.0, lam, om * 0.0, ctx)
    assert not np.any(mu_out) and not np.any(lam_out)
    assert iterations == 1 and s == 0.0


def test_switch_operators_degenerate(unit_problem):
    p = unit_problem
    ctx = residual_context_h(HamiltonianState.empty(p.lift), p.ops, p.grid)
    mu = np.linspace(0.1, 1.0, p.ops.n_dofs)
    zeros = np.zeros(p.grid.n_times)
    with pytest.raises(DegenerateMode):
        _march_omega(mu, np.zeros_like(mu), zeros, ctx)
    with pytest.raises(DegenerateMode):
        _march_lambda(np.zeros_like(mu), mu, zeros, ctx)


def test_march_lambda_matches_coupled_solve(unit_problem):
    # with om frozen at the coupled solution, the momentum row gives back lam
    p = unit_problem
    ctx = residual_context_h(HamiltonianState.empty(p.lift), p.ops, p.grid)
    mu = np.linspace(0.1, 1.0, p.ops.n_dofs)
    mu = mu / np.sqrt(mu.dot(p.ops.K @ mu))
    nu = mu / np.sqrt(mu.dot(p.ops.Mbarbar @ mu))
    lam, om = temporal_solve_h(mu, nu, ctx)
    assert np.allclose(_march_lambda(mu, nu, om, ctx), lam, atol=1e-8 * np.max(np.abs(lam)))
    assert np.allclose(_march_omega(mu, nu, lam, ctx), om, atol=1e-8 * np.max(np.abs(om)))


def test_temporal_solve_degenerate(unit_problem):
    p = unit_problem
    ctx = residual_context_h(HamiltonianState.empty(p.lift), p.ops, p.grid)
    mu = np.linspace(0.1, 1.0, p.ops.n_dofs)
    with pytest.raises(DegenerateMode):
        temporal_solve_h(mu, np.zeros_like(mu), ctx)


def test_enrichment_logs(unit_problem):
    p = unit_problem
    (mu, lam, nu, om), logs = enrich_h(HamiltonianState.empty(p.lift), p.ops, p.grid, j_max=8)
    log_q, log_p = logs
    assert (log_q.label, log_p.label) == ("q", "p")
    assert max(log_q.iterations, log_p.iterations) <= 8
    assert not (log_q.zero and log_p.zero)
    assert mu.dot(p.ops.K @ mu) == pytest.approx(1.0)
    assert nu.dot(p.ops.Mbarbar @ nu) == pytest.approx(1.0)


def test_zero_scenario_terminates(zero_problem):
    p = zero_problem
    state, report = run_hpgd(p.scenario, p.ops, p.grid, 3, lift=p.lift)
    assert state.rank == 0
    assert [entry.zero for _, entry in report.logs] == [True, True]
    assert np.all(np.isfinite(state.q_field.densify()))


def test_update_reproduces_temporal_solve():
    scenario, ops, grid, _ = manufactured_problem(32)
    lift = build_lift(scenario.mesh(), scenario, grid)
    state = HamiltonianState.empty(lift)
    mu = np.linspace(0.1, 1.0, ops.n_dofs)
    mu = mu / np.sqrt(mu.dot(ops.K @ mu))
    nu = mu / np.sqrt(mu.dot(ops.Mbarbar @ mu))
    lam, om = temporal_solve_h(mu, nu, residual_context_h(state, ops, grid))
    refreshed = update_temporal_h(state.append(mu, 0.0 * lam, nu, 0.0 * om), ops, grid)
    assert np.allclose(refreshed.q_field.temporal[0], lam, rtol=0, atol=1e-12)
    assert np.allclose(refreshed.p_field.temporal[0], om, rtol=0, atol=1e-12)


def test_update_requires_both_fields(unit_problem):
    p = unit_problem
    mu = np.linspace(0.1, 1.0, p.ops.n_dofs)
    zeros = np.zeros(p.grid.n_times)
    state = HamiltonianState.empty(p.lift).append(mu, zeros, np.zeros_like(mu), zeros)
    with pytest.raises(UpdateFailure):
        update_temporal_h(state, p.ops, p.grid)


def test_run_hpgd_converges(unit_problem):
    p = unit_problem
    comparison = comparison_for(p, solve_hamiltonian_cn(p.ops, p.U0, p.P0, p.grid))
    state, report = run_hpgd(p.scenario, p.ops, p.grid, 8, lift=p.lift, comparison=comparison)

    assert report.method == "hpgd"
    assert report.eps_q[0] == pytest.approx(1.0)
    assert report.eps_q[-1] < 1e-6
    assert report.eps_p[-1] < 1e-6

    gram = gram_matrices_h(state.q_field.spatial, state.p_field.spatial, p.ops)
    active_q = np.any(state.q_field.spatial != 0.0, axis=0)
    active_p = np.any(state.p_field.spatial != 0.0, axis=0)
    assert np.allclose(gram["K_hx"][np.ix_(active_q, active_q)], np.eye(active_q.sum()), atol=1e-8)
    assert np.allclose(gram["M_hx"][np.ix_(active_p, active_p)], np.eye(active_p.sum()), atol=1e-8)
    for name in ("K_hx", "M_hx"):
        assert all(kappa == pytest.approx(1.0, abs=1e-6) for _, kappa in report.condition[name])


def test_gram_conditions_skip_zero_modes(unit_problem):
    p = unit_problem
    mu = np.zeros(p.ops.n_dofs)
    mu[0] = 1.0 / np.sqrt(p.ops.K[0, 0])
    nu = np.zeros(p.ops.n_dofs)
    zeros = np.zeros(p.grid.n_times)
    state = HamiltonianState.empty(p.lift).append(mu, zeros, nu, zeros)
    assert set(gram_conditions_h(state, p.ops)) == {"K_hx"}


def test_run_hpgd_dirichlet(dirichlet_problem):
    p = dirichlet_problem
    comparison = comparison_for(
        p, solve_hamiltonian_cn(p.ops, p.U0, p.P0, p.grid, lift=p.lift)
    )
    state, report = run_hpgd(p.scenario, p.ops, p.grid, 4, lift=p.lift, comparison=comparison)
    assert not np.any(state.q_field.spatial[-1])
    assert not np.any(state.p_field.spatial[-1])
    assert np.allclose(state.q_field.densify()[-1], p.lift.q0[-1])
    assert report.eps_q[-1] < report.eps_q[0]


def test_run_hpgd_invalid(unit_problem):
    p = unit_problem
    with pytest.raises(InvalidArgument):
        run_hpgd(p.scenario, p.ops, p.grid, -1)


def test_refinement_ratio():
    errors = []
    for steps in (64, 128):
        scenario, ops, grid, exact = manufactured_problem(steps)
        lift = build_lift(scenario.mesh(), scenario, grid)
        state, _ = run_hpgd(scenario, ops, grid, 2, lift=lift)
        errors.append(relative_error(state.q_field.densify(), exact, ops, grid))
    assert 3.0 <= errors[0] / errors[1] <= 5.0


def test_hamiltonian_blocks():
    Kx, Mx, Cx, Dx = np.eye(2), 3.0 * np.eye(2), np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros((2, 2))
    A, B = hamiltonian_blocks(Kx, Mx, Cx, Dx, 0.5)
    assert np.allclose(A[2:, :2], 2.0 * Cx.T)
    assert np.allclose(A[2:, 2:], -1.5 * np.eye(2))
    assert np.allclose(B[2:, 2:], 1.5 * np.eye(2))
    assert np.allclose(A[:2, 2:] + B[:2, 2:], 4.0 * Cx)


@pytest.fixture()
def converged_mode(unit_problem):
    p = unit_problem
    state = HamiltonianState.empty(p.lift)
    mode, logs = enrich_h(state, p.ops, p.grid, j_max=60, tol=1e-8)
    assert all(entry.converged and not entry.zero for entry in logs)
    return mode, residual_context_h(state, p.ops, p.grid)


def test_coupled_mode_is_self_consistent(unit_problem, converged_mode):
    p = unit_problem
    (mu, lam, nu, om), ctx = converged_mode
    mu_again, nu_again = spatial_solve_h(lam, om, ctx)
    assert np.sqrt(mu_again.dot(p.ops.K @ mu_again)) == pytest.approx(1.0, abs=1e-6)
    assert np.sqrt(nu_again.dot(p.ops.Mbarbar @ nu_again)) == pytest.approx(1.0, abs=1e-6)


def test_switch_operators_stationary(unit_problem, converged_mode):
    # starting from a converged coupled mode, each decoupled branch stays put
    p = unit_problem
    (mu, lam, nu, om), ctx = converged_mode
    tol = 1e-8

    mu_q, lam_q, _, s, _ = switch_solve_q(nu, lam, om, ctx, j_max=1, tol=tol, previous=(mu, lam))
    assert s <= 2.0 * tol
    assert s == pytest.approx(stagnation((mu_q, lam_q), (mu, lam), p.ops.Mbar, p.grid))

    nu_p, _, _, s, _ = switch_solve_p(mu, lam, om, ctx, j_max=1, tol=tol, previous=(nu, om))
    assert s <= 2.0 * tol
    assert np.sqrt(nu_p.dot(p.ops.Mbarbar @ nu_p)) == pytest.approx(1.0)


@pytest.mark.parametrize("problem_name", ["unit_problem", "dirichlet_problem", "damped_problem"])
def test_full_basis_reproduces_reference(problem_name, request):
    p = request.getfixturevalue(problem_name)
    identity = np.eye(p.ops.n_dofs)[:, p.lift.free_dofs()]
    S, _, _ = gram_schmidt(identity, p.ops.K)
    N, _, _ = gram_schmidt(identity, p.ops.Mbarbar)
    state = HamiltonianState.empty(p.lift)
    zeros = np.zeros(p.grid.n_times)
    for mu, nu in zip(S.T, N.T):
        state = state.append(mu, zeros, nu, zeros)
    state = update_temporal_h(state, p.ops, p.grid)
    reference = solve_hamiltonian_cn(p.ops, p.U0, p.P0, p.grid, lift=p.lift)
    assert relative_error(state.q_field.densify(), reference.Q, p.ops, p.grid) < 1e-9
    assert relative_error(state.p_field.densify(), reference.companion, p.ops, p.grid) < 1e-9
