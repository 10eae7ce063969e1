"""Hamiltonian PGD: separate expansions for displacements and momenta

The q field is spanned by K-orthonormal spatial modes mu_k, the p field by
Mbarbar-orthonormal modes nu_k. Both fields always have the same rank; a
field that receives no new information gets a zero mode.
"""

from dataclasses import dataclass, replace
import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from pgdbar.errors import (
    DegenerateMode,
    EnrichmentBreakdown,
    InvalidArgument,
    SolverFailure,
    UpdateFailure,
)
from pgdbar.fem import build_lift, gram_schmidt, time_integral_midpoint, time_integral_rate
from pgdbar.lagrangian import DEFAULT_J_MAX, DEFAULT_TOL
from pgdbar.metrics import RunReport, condition_number, energy_trajectory, record_rank
from pgdbar.modes import (
    EnrichmentLog,
    SeparatedField,
    cn_march,
    interval_diff,
    interval_mean,
    interval_sum,
    is_zero_mode,
    stagnation,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class HamiltonianState:
    """Displacement and momentum expansions of equal rank"""

    q_field: SeparatedField
    p_field: SeparatedField

    @classmethod
    def empty(cls, lift):
        return cls(SeparatedField.empty(lift, "q"), SeparatedField.empty(lift, "p"))

    @property
    def rank(self):
        return self.q_field.rank

    @property
    def lift(self):
        return self.q_field.lift

    def append(self, mu, lam, nu, om):
        return HamiltonianState(self.q_field.append(mu, lam), self.p_field.append(nu, om))

    def with_temporal(self, lam, om):
        return HamiltonianState(
            self.q_field.with_temporal(lam), self.p_field.with_temporal(om)
        )


@dataclass(frozen=True, eq=False)
class HamiltonianContext:
    """Residual of the current approximation (q_{m-1}, p_{m-1}).

    ``momentum`` and ``kinematic`` are the per-interval residuals of the two
    Crank-Nicolson rows. The temporal solves annihilate their projections
    on the spatial modes; the spatial solves annihilate their sums weighted
    by the interval means of the temporal modes.
    """

    ops: object
    grid: object
    free: object
    momentum: object
    kinematic: object


def residual_context_h(state, ops, grid):
    h = grid.h
    Q = state.q_field.densify()
    P = state.p_field.densify()
    F = ops.F_traj if ops.F_traj is not None else np.zeros(Q.shape)
    return HamiltonianContext(
        ops,
        grid,
        state.lift.free_dofs(),
        momentum=(
            h * interval_sum(F)
            - 2.0 * (ops.Mbar @ interval_diff(P))
            - h * (ops.K @ interval_sum(Q))
            - h * (ops.Cdamp_p @ interval_sum(P))
        ),
        kinematic=-2.0 * (ops.Mbar @ interval_diff(Q))
        + h * (ops.Mbarbar @ interval_sum(P)),
    )


def _residual_mu(lam, ctx):
    return 0.5 * (ctx.momentum @ interval_mean(lam))


def _residual_nu(om, ctx):
    return -0.5 * (ctx.kinematic @ interval_mean(om))


def time_coefficients_h(lam, om, grid):
    """Time coefficients (k_t, m_t, c_t, d_t, c_wl) of the spatial problems.

    Products are taken with the midpoint rule of the Crank-Nicolson rows;
    c_t + d_t = om(T) lam(T) holds exactly since both factors start at zero.
    """
    c_t = time_integral_rate(lam, om, grid)
    return (
        time_integral_midpoint(lam, lam, grid),
        time_integral_midpoint(om, om, grid),
        c_t,
        om[-1] * lam[-1] - c_t,
        time_integral_midpoint(om, lam, grid),
    )


def _solve_free(matrix, rhs, free, error):
    reduced = sp.csc_matrix(matrix[free][:, free])
    try:
        values = splu(reduced).solve(np.asarray(rhs, dtype=float)[free])
    except RuntimeError as exc:
        raise error("Spatial system is singular: {}".format(exc))
    if not np.all(np.isfinite(values)):
        raise error("Spatial system produced non-finite values")
    solution = np.zeros(matrix.shape[0])
    solution[free] = values
    return solution


def _normalized(v, metric):
    norm = np.sqrt(max(v.dot(metric @ v), 0.0))
    if norm == 0.0:
        return np.zeros_like(v)
    return v / norm


def spatial_solve_h(lam, om, ctx):
    """Coupled spatial modes (mu, nu) for given temporal factors.

    Solves the block system

        [ K k_t        Mbar d_t + Cdamp_p c_wl ] [mu]   [R_mu]
        [ -Mbar c_t    Mbarbar m_t             ] [nu] = [R_nu]

    with k_t = int(lam^2), m_t = int(om^2), c_t = int(lam' om),
    d_t = om(T) lam(T) - c_t and c_wl = int(om lam), see
    time_coefficients_h.

    Raises
    ------
    EnrichmentBreakdown
        If the block matrix is singular.

    """
    ops = ctx.ops
    if not (np.any(lam) or np.any(om)):
        raise InvalidArgument("Temporal factors must not both vanish")
    k_t, m_t, c_t, d_t, c_wl = time_coefficients_h(lam, om, ctx.grid)

    free = ctx.free
    n = ops.n_dofs
    block = sp.bmat(
        [
            [k_t * ops.K, d_t * ops.Mbar + c_wl * ops.Cdamp_p],
            [-c_t * ops.Mbar, m_t * ops.Mbarbar],
        ],
        format="csr",
    )
    rhs = np.concatenate([_residual_mu(lam, ctx), _residual_nu(om, ctx)])
    solution = _solve_free(block, rhs, np.concatenate([free, free + n]), EnrichmentBreakdown)
    return solution[:n], solution[n:]


def hamiltonian_blocks(Kx, Mx, Cx, Dx, h):
    """Crank-Nicolson step matrices of the reduced Hamiltonian system.

    Kx = S^T K S, Mx = N^T Mbarbar N, Cx = S^T Mbar N, Dx = S^T Cdamp_p N.
    """
    A = np.block([[h * Kx, 2.0 * Cx + h * Dx], [2.0 * Cx.T, -h * Mx]])
    B = np.block([[-h * Kx, 2.0 * Cx - h * Dx], [2.0 * Cx.T, h * Mx]])
    return A, B


def gram_matrices_h(spatial_q, spatial_p, ops):
    S = np.atleast_2d(np.asarray(spatial_q, dtype=float).T).T
    N = np.atleast_2d(np.asarray(spatial_p, dtype=float).T).T
    return {
        "K_hx": S.T @ (ops.K @ S),
        "M_hx": N.T @ (ops.Mbarbar @ N),
        "C_hx": S.T @ (ops.Mbar @ N),
        "D_hx": S.T @ (ops.Cdamp_p @ N),
    }


def _march_h(S, N, ctx, error):
    S = np.atleast_2d(np.asarray(S, dtype=float).T).T
    N = np.atleast_2d(np.asarray(N, dtype=float).T).T
    gram = gram_matrices_h(S, N, ctx.ops)
    A, B = hamiltonian_blocks(
        gram["K_hx"], gram["M_hx"], gram["C_hx"], gram["D_hx"], ctx.grid.h
    )
    rhs = np.vstack([S.T @ ctx.momentum, N.T @ ctx.kinematic])
    states = cn_march(A, B, rhs, error=error)
    k = S.shape[1]
    return states[:k], states[k:]


def temporal_solve_h(mu, nu, ctx):
    """Temporal factors (lam, om) for given spatial modes, both starting at zero.

    Raises
    ------
    DegenerateMode
        If mu^T K mu or nu^T Mbarbar nu is not positive.

    """
    k_x = mu.dot(ctx.ops.K @ mu)
    m_x = nu.dot(ctx.ops.Mbarbar @ nu)
    if not (k_x > 0 and m_x > 0):
        raise DegenerateMode(
            "Spatial modes have non-positive metric norms ({!r}, {!r})".format(k_x, m_x)
        )
    lam, om = _march_h(mu, nu, ctx, DegenerateMode)
    return lam[0], om[0]


def _spatial_nu(mu, lam, om, ctx):
    """Mbarbar m_t nu = Mbar c_t mu + R_nu"""
    ops = ctx.ops
    _, m_t, c_t, _, _ = time_coefficients_h(lam, om, ctx.grid)
    if not m_t > 0:
        raise DegenerateMode("Momentum temporal factor vanishes")
    rhs = c_t * (ops.Mbar @ mu) + _residual_nu(om, ctx)
    return _solve_free(m_t * ops.Mbarbar, rhs, ctx.free, EnrichmentBreakdown)


def _spatial_mu(nu, lam, om, ctx):
    """K k_t mu = -(Mbar d_t + Cdamp_p c_wl) nu + R_mu"""
    ops = ctx.ops
    k_t, _, _, d_t, c_wl = time_coefficients_h(lam, om, ctx.grid)
    if not k_t > 0:
        raise DegenerateMode("Displacement temporal factor vanishes")
    rhs = -(d_t * (ops.Mbar @ nu) + c_wl * (ops.Cdamp_p @ nu)) + _residual_mu(lam, ctx)
    return _solve_free(k_t * ops.K, rhs, ctx.free, EnrichmentBreakdown)


def _march_omega(mu, nu, lam, ctx):
    """Kinematic row with lam frozen: 2 c_x dlam - h m_x (om^n + om^{n+1}) = nu^T b"""
    h = ctx.grid.h
    m_x = nu.dot(ctx.ops.Mbarbar @ nu)
    if not m_x > 0:
        raise DegenerateMode("Momentum mode has zero Mbarbar norm")
    c_x = mu.dot(ctx.ops.Mbar @ nu)
    forcing = 2.0 * c_x * np.diff(lam) - nu @ ctx.kinematic
    om = np.zeros(ctx.grid.n_times)
    for n in range(ctx.grid.step_count):
        om[n + 1] = forcing[n] / (h * m_x) - om[n]
    return om


def _march_lambda(mu, nu, om, ctx):
    """Momentum row with om frozen: h k_x (lam^n + lam^{n+1}) = mu^T b - 2 c_x dom - h d_x som"""
    h = ctx.grid.h
    k_x = mu.dot(ctx.ops.K @ mu)
    if not k_x > 0:
        raise DegenerateMode("Displacement mode has zero K norm")
    c_x = mu.dot(ctx.ops.Mbar @ nu)
    d_x = mu.dot(ctx.ops.Cdamp_p @ nu)
    forcing = mu @ ctx.momentum - 2.0 * c_x * np.diff(om) - h * d_x * interval_sum(om)
    lam = np.zeros(ctx.grid.n_times)
    for n in range(ctx.grid.step_count):
        lam[n + 1] = forcing[n] / (h * k_x) - lam[n]
    return lam


def switch_solve_p(mu, lam, om, ctx, j_max=DEFAULT_J_MAX, tol=DEFAULT_TOL, previous=None):
    """Iterate on the momentum mode with the displacement mode frozen.

    Returns
    -------
    tuple
        (nu, om, iterations, stagnation, history). nu and om are zero when
        the momentum field receives no new information.

    """
    n = ctx.ops.n_dofs
    nu_prev, om_prev = previous or (np.zeros(n), np.zeros(ctx.grid.n_times))
    history = []
    s = float("inf")
    nu = nu_prev
    for j in range(1, j_max + 1):
        nu = _normalized(_spatial_nu(mu, lam, om, ctx), ctx.ops.Mbarbar)
        if not np.any(nu):
            return nu, np.zeros(ctx.grid.n_times), j, 0.0, history
        om = _march_omega(mu, nu, lam, ctx)
        s = stagnation((nu, om), (nu_prev, om_prev), ctx.ops.Mbar, ctx.grid)
        history.append(s)
        nu_prev, om_prev = nu, om
        if s <= tol:
            return nu, om, j, s, history
    return nu, om, j_max, s, history


def switch_solve_q(nu, lam, om, ctx, j_max=DEFAULT_J_MAX, tol=DEFAULT_TOL, previous=None):
    """Iterate on the displacement mode with the momentum mode frozen.

    Mirror of switch_solve_p; returns (mu, lam, iterations, stagnation, history).
    """
    n = ctx.ops.n_dofs
    mu_prev, lam_prev = previous or (np.zeros(n), np.zeros(ctx.grid.n_times))
    history = []
    s = float("inf")
    mu = mu_prev
    for j in range(1, j_max + 1):
        mu = _normalized(_spatial_mu(nu, lam, om, ctx), ctx.ops.K)
        if not np.any(mu):
            return mu, np.zeros(ctx.grid.n_times), j, 0.0, history
        lam = _march_lambda(mu, nu, om, ctx)
        s = stagnation((mu, lam), (mu_prev, lam_prev), ctx.ops.Mbar, ctx.grid)
        history.append(s)
        mu_prev, lam_prev = mu, lam
        if s <= tol:
            return mu, lam, j, s, history
    return mu, lam, j_max, s, history


def enrich_h(state, ops, grid, j_max=DEFAULT_J_MAX, tol=DEFAULT_TOL):
    """Compute one (mu, lam, nu, om) mode with the adaptive fixed point.

    Both fields are iterated together until one of them stagnates; the
    other one is then iterated alone with the converged field frozen. The
    iteration budget j_max is shared between the two phases.

    Returns
    -------
    mode : tuple
        (mu, lam, nu, om).
    logs : tuple of EnrichmentLog
        One log for the q field and one for the p field.

    """
    ctx = residual_context_h(state, ops, grid)
    n, n_times = ops.n_dofs, grid.n_times

    lam = grid.times / grid.horizon
    om = np.full(n_times, 1.0 / grid.horizon)
    om[0] = 0.0
    mu = np.zeros(n)
    nu = np.zeros(n)
    s_q = s_p = float("inf")
    iters_q = iters_p = 0
    hist_q, hist_p = [], []

    j = 0
    while j < j_max and (s_q > tol or s_p > tol):
        if s_q <= tol:
            nu, om, used, s_p, hist = switch_solve_p(
                mu, lam, om, ctx, j_max - j, tol, previous=(nu, om)
            )
            j += used
            iters_p += used
            hist_p.extend(hist)
            continue
        if s_p <= tol:
            mu, lam, used, s_q, hist = switch_solve_q(
                nu, lam, om, ctx, j_max - j, tol, previous=(mu, lam)
            )
            j += used
            iters_q += used
            hist_q.extend(hist)
            continue

        j += 1
        iters_q += 1
        iters_p += 1
        mu_new, nu_new = spatial_solve_h(lam, om, ctx)
        mu_new = _normalized(mu_new, ops.K)
        nu_new = _normalized(nu_new, ops.Mbarbar)
        has_q, has_p = np.any(mu_new), np.any(nu_new)
        if not (has_q or has_p):
            log.info("Both spatial residuals vanished: zero enrichment")
            zero = np.zeros(n_times)
            mode = (np.zeros(n), zero, np.zeros(n), zero)
            return mode, (
                EnrichmentLog(j, 0.0, True, tuple(hist_q), zero=True, label="q"),
                EnrichmentLog(j, 0.0, True, tuple(hist_p), zero=True, label="p"),
            )
        if has_q and has_p:
            lam_new, om_new = temporal_solve_h(mu_new, nu_new, ctx)
        elif has_q:
            lam_new = _march_lambda(mu_new, nu_new, np.zeros(n_times), ctx)
            om_new = np.zeros(n_times)
        else:
            lam_new = np.zeros(n_times)
            om_new = _march_omega(mu_new, nu_new, lam_new, ctx)

        s_q = stagnation((mu_new, lam_new), (mu, lam), ops.Mbar, grid) if has_q else 0.0
        s_p = stagnation((nu_new, om_new), (nu, om), ops.Mbar, grid) if has_p else 0.0
        # first iteration compares against the initial guess with a zero spatial mode
        hist_q.append(s_q)
        hist_p.append(s_p)
        log.debug("Fixed point iteration %d: s_q=%r s_p=%r", j, s_q, s_p)
        mu, lam, nu, om = mu_new, lam_new, nu_new, om_new

    if s_q > tol or s_p > tol:
        log.info(
            "Enrichment did not converge in %d iterations (s_q=%r, s_p=%r)", j, s_q, s_p
        )
    zero_q = not np.any(mu) or is_zero_mode(mu, lam, state.q_field, ops.Mbar, grid)
    zero_p = not np.any(nu) or is_zero_mode(nu, om, state.p_field, ops.Mbar, grid)
    if zero_q and not zero_p:
        mu, lam = np.zeros(n), np.zeros(n_times)
    if zero_p and not zero_q:
        nu, om = np.zeros(n), np.zeros(n_times)
    logs = (
        EnrichmentLog(iters_q, s_q, s_q <= tol, tuple(hist_q), zero=zero_q, label="q"),
        EnrichmentLog(iters_p, s_p, s_p <= tol, tuple(hist_p), zero=zero_p, label="p"),
    )
    return (mu, lam, nu, om), logs


def _active(field):
    return np.flatnonzero(np.any(field.spatial != 0.0, axis=0))


def _orthonormalize(field, metric):
    """Gram-Schmidt on the nonzero modes of a field, zero modes untouched"""
    active = _active(field)
    m = field.rank
    if active.size == 0:
        return field
    basis, R_active, _ = gram_schmidt(field.spatial[:, active], metric)
    spatial = field.spatial.copy()
    spatial[:, active] = basis
    R = np.eye(m)
    R[np.ix_(active, active)] = R_active
    return field.rebased(spatial, R)


def update_temporal_h(state, ops, grid):
    """Re-solve all temporal modes of both fields jointly.

    Zero modes are left out of the reduced system and keep zero temporal
    factors.

    Raises
    ------
    UpdateFailure
        If the reduced step matrix is numerically singular.

    """
    active_q = _active(state.q_field)
    active_p = _active(state.p_field)
    if active_q.size == 0 or active_p.size == 0:
        raise UpdateFailure("Update requires nonzero modes in both fields")
    ctx = residual_context_h(HamiltonianState.empty(state.lift), ops, grid)
    lam_active, om_active = _march_h(
        state.q_field.spatial[:, active_q],
        state.p_field.spatial[:, active_p],
        ctx,
        UpdateFailure,
    )
    lam = np.zeros_like(state.q_field.temporal)
    om = np.zeros_like(state.p_field.temporal)
    lam[active_q] = lam_active
    om[active_p] = om_active
    return state.with_temporal(lam, om)


def gram_conditions_h(state, ops):
    """Condition numbers of K_hx, M_hx and (when square) C_hx over the nonzero modes"""
    S = state.q_field.spatial[:, _active(state.q_field)]
    N = state.p_field.spatial[:, _active(state.p_field)]
    conditions = {}
    gram = gram_matrices_h(S, N, ops)
    if S.shape[1]:
        conditions["K_hx"] = condition_number(gram["K_hx"])
    if N.shape[1]:
        conditions["M_hx"] = condition_number(gram["M_hx"])
    if S.shape[1] and S.shape[1] == N.shape[1]:
        conditions["C_hx"] = condition_number(gram["C_hx"])
    return conditions


def run_hpgd(
    scenario,
    ops,
    grid,
    m_max,
    update_enabled=True,
    lift=None,
    j_max=DEFAULT_J_MAX,
    tol=DEFAULT_TOL,
    comparison=None,
    analytical=None,
    method="hpgd",
):
    """Greedy H-PGD driver.

    Mirrors run_lpgd; the momentum error is measured on the p expansion
    directly.

    Returns
    -------
    HamiltonianState, RunReport

    """
    if m_max < 0 or m_max > ops.n_dofs:
        raise InvalidArgument("m_max must lie in [0, {}]".format(ops.n_dofs))
    if lift is None:
        lift = build_lift(scenario.mesh(), scenario, grid)

    state = HamiltonianState.empty(lift)
    report = RunReport(method)

    def record(m):
        if comparison is None:
            return
        Q = state.q_field.densify()
        P = state.p_field.densify()
        energy = energy_trajectory(Q, P, ops, "hamiltonian")
        record_rank(report, m, Q, P, energy, comparison, ops, grid, analytical)

    record(0)
    for m in range(1, m_max + 1):
        try:
            mode, logs = enrich_h(state, ops, grid, j_max, tol)
        except SolverFailure as exc:
            report.fail(m, exc)
            break
        report.logs.extend((m, entry) for entry in logs)
        if all(entry.zero for entry in logs):
            log.info("%s: zero enrichment at rank %d, stopping", method, m)
            break

        state = state.append(*mode)
        state = HamiltonianState(
            _orthonormalize(state.q_field, ops.K),
            _orthonormalize(state.p_field, ops.Mbarbar),
        )
        for name, kappa in gram_conditions_h(state, ops).items():
            report.record_condition(m, name, kappa)

        if update_enabled:
            try:
                state = update_temporal_h(state, ops, grid)
            except UpdateFailure as exc:
                report.event(m, exc)
        log.info(
            "%s: rank %d, iterations q=%d p=%d",
            method,
            m,
            logs[0].iterations,
            logs[1].iterations,
        )
        record(m)

    if report.unconverged_ranks:
        log.warning(
            "%s: fixed point stopped on the iteration budget at ranks %s",
            method,
            report.unconverged_ranks,
        )
    return state, report
