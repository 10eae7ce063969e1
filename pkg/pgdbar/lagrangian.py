"""Lagrangian PGD (displacement-only separated representation)

Two time-integration variants share the greedy driver:

* "cn": Crank-Nicolson temporal problems (L-PGD1),
* "newmark": average-acceleration Newmark temporal problems whose modes
  carry an acceleration companion (L-PGD2).
"""

from dataclasses import dataclass
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
from pgdbar.fem import (
    build_lift,
    gram_schmidt,
    nodal_density,
    time_integral,
    time_integral_midpoint,
    time_integral_rate,
)
from pgdbar.metrics import RunReport, condition_number, energy_trajectory, record_rank
from pgdbar.modes import (
    EnrichmentLog,
    SeparatedField,
    cn_march,
    interval_diff,
    interval_mean,
    interval_sum,
    is_zero_mode,
    newmark_march,
    stagnation,
)

VARIANTS = ("cn", "newmark")

DEFAULT_J_MAX = 20
DEFAULT_TOL = 1e-8

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LagrangianContext:
    """Residual of the current approximation q_{m-1}.

    It does not change during the fixed-point iterations of one enrichment.
    For the "cn" variant, ``momentum`` and ``kinematic`` are per-interval
    residuals of the Crank-Nicolson rows (the kinematic one weighted by
    Mbar). For "newmark", ``nodal`` is F - M a - C w - K q at every node.
    """

    ops: object
    grid: object
    variant: str
    free: object
    momentum: object = None
    kinematic: object = None
    nodal: object = None


def residual_context(field, ops, grid, variant="cn"):
    """Build the residual context of a separated displacement field"""
    if variant not in VARIANTS:
        raise InvalidArgument("Unknown Lagrangian variant {!r}".format(variant))
    h = grid.h
    F = ops.F_traj if ops.F_traj is not None else np.zeros(field.base.shape)
    Q = field.densify()
    W = field.rate_field()
    free = field.lift.free_dofs()

    if variant == "cn":
        return LagrangianContext(
            ops,
            grid,
            variant,
            free,
            momentum=(
                h * interval_sum(F)
                - 2.0 * (ops.M @ interval_diff(W))
                - h * (ops.K @ interval_sum(Q))
                - h * (ops.Cdamp @ interval_sum(W))
            ),
            kinematic=ops.Mbar @ (-2.0 * interval_diff(Q) + h * interval_sum(W)),
        )
    A = field.accel_field()
    return LagrangianContext(
        ops,
        grid,
        variant,
        free,
        nodal=F - ops.M @ A - ops.Cdamp @ W - ops.K @ Q,
    )


def _solve_free(matrix, rhs, free, error):
    """Solve on the free DOFs, zero elsewhere"""
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


def spatial_solve_l(lam, om, ctx, accel=None):
    """Spatial mode for given temporal factors.

    Solves (M m_t + K k_t + Cdamp c_t) mu = R with k_t = int(lam^2),
    c_t = int(om lam) and m_t = int(lam'' lam). The "cn" variant weights the
    momentum rows of the march by the interval means of lam, so m_t is the
    sum of lam means times om increments (om(T) lam(T) - int(om lam') by
    parts) and the products use the midpoint rule. The "newmark" variant
    integrates the nodal equations against lam, with m_t = int(accel lam).

    Raises
    ------
    EnrichmentBreakdown
        If the spatial system is singular.

    """
    ops, grid = ctx.ops, ctx.grid
    if ctx.variant == "cn":
        k_t = time_integral_midpoint(lam, lam, grid)
        c_t = time_integral_midpoint(om, lam, grid)
        m_t = time_integral_rate(om, lam, grid)
        rhs = 0.5 * (ctx.momentum @ interval_mean(lam))
    else:
        if accel is None:
            accel = np.zeros_like(lam)
        k_t = time_integral(lam, lam, grid)
        c_t = time_integral(om, lam, grid)
        m_t = time_integral(accel, lam, grid)
        rhs = time_integral(ctx.nodal, lam, grid)

    matrix = m_t * ops.M + k_t * ops.K + c_t * ops.Cdamp
    log.debug("Spatial coefficients: m_t=%r k_t=%r c_t=%r", m_t, k_t, c_t)
    return _solve_free(matrix, rhs, ctx.free, EnrichmentBreakdown)


def lagrangian_blocks(Kx, Mx, Mbx, Cx, h):
    """Crank-Nicolson step matrices of the reduced Lagrangian system"""
    A = np.block([[h * Kx, 2.0 * Mx + h * Cx], [2.0 * Mbx, -h * Mbx]])
    B = np.block([[-h * Kx, 2.0 * Mx - h * Cx], [2.0 * Mbx, h * Mbx]])
    return A, B


def gram_matrices_l(spatial, ops):
    """Gram matrices of a spatial basis under K, M, Mbar and Cdamp"""
    S = np.atleast_2d(np.asarray(spatial, dtype=float).T).T
    return {
        "K_lx": S.T @ (ops.K @ S),
        "M_lx": S.T @ (ops.M @ S),
        "Mbar_lx": S.T @ (ops.Mbar @ S),
        "C_lx": S.T @ (ops.Cdamp @ S),
    }


def _march_l(spatial, ctx, error):
    S = np.atleast_2d(np.asarray(spatial, dtype=float).T).T
    m = S.shape[1]
    gram = gram_matrices_l(S, ctx.ops)
    h = ctx.grid.h
    if ctx.variant == "cn":
        A, B = lagrangian_blocks(gram["K_lx"], gram["M_lx"], gram["Mbar_lx"], gram["C_lx"], h)
        rhs = np.vstack([S.T @ ctx.momentum, S.T @ ctx.kinematic])
        states = cn_march(A, B, rhs, error=error)
        return states[:m], states[m:], None
    return newmark_march(
        gram["M_lx"], gram["C_lx"], gram["K_lx"], S.T @ ctx.nodal, h, error=error
    )


def temporal_solve_l(mu, ctx):
    """Temporal mode and its companions for a given spatial mode.

    Returns
    -------
    tuple of ndarray
        (lam, om, accel) with accel None for the "cn" variant. All start
        from zero.

    Raises
    ------
    DegenerateMode
        If mu^T M mu or mu^T K mu is not positive.

    """
    mu = np.asarray(mu, dtype=float)
    m_x = mu.dot(ctx.ops.M @ mu)
    k_x = mu.dot(ctx.ops.K @ mu)
    if not (m_x > 0 and k_x > 0):
        raise DegenerateMode(
            "Spatial mode has non-positive mass or stiffness ({!r}, {!r})".format(m_x, k_x)
        )
    lam, om, accel = _march_l(mu, ctx, DegenerateMode)
    return lam[0], om[0], None if accel is None else accel[0]


def enrich_l(field, ops, grid, variant="cn", j_max=DEFAULT_J_MAX, tol=DEFAULT_TOL):
    """Compute one new mode with the alternating fixed point.

    Parameters
    ----------
    field : SeparatedField
        Current rank m - 1 approximation.
    ops : OperatorSet
    grid : TimeGrid
    variant : {"cn", "newmark"}
    j_max : int
        Iteration budget.
    tol : float
        Stagnation tolerance.

    Returns
    -------
    mode : tuple
        (mu, lam, om, accel).
    EnrichmentLog

    """
    ctx = residual_context(field, ops, grid, variant)
    n_dofs = ops.n_dofs

    lam = grid.times / grid.horizon
    om = np.full(grid.n_times, 1.0 / grid.horizon)
    om[0] = 0.0
    accel = np.zeros(grid.n_times) if variant == "newmark" else None
    mu_prev = np.zeros(n_dofs)
    lam_prev = np.zeros(grid.n_times)

    history = []
    converged = False
    for j in range(1, j_max + 1):
        mu = spatial_solve_l(lam, om, ctx, accel)
        norm = np.sqrt(max(mu.dot(ops.K @ mu), 0.0))
        if norm == 0.0:
            log.info("Spatial residual vanished: zero enrichment")
            zero = np.zeros(grid.n_times)
            mode = (np.zeros(n_dofs), zero, zero, None if accel is None else zero)
            return mode, EnrichmentLog(j, 0.0, True, tuple(history), zero=True)
        mu = mu / norm
        lam, om, accel = temporal_solve_l(mu, ctx)

        s = stagnation((mu, lam), (mu_prev, lam_prev), ops.Mbar, grid)
        history.append(s)
        log.debug("Fixed point iteration %d: s=%r", j, s)
        mu_prev, lam_prev = mu, lam
        if s <= tol:
            converged = True
            break

    if not converged:
        log.info("Enrichment did not converge in %d iterations (s=%r)", j, s)
    zero = is_zero_mode(mu, lam, field, ops.Mbar, grid)
    return (mu, lam, om, accel), EnrichmentLog(j, s, converged, tuple(history), zero=zero)


def update_temporal_l(field, ops, grid, variant="cn"):
    """Re-solve all temporal modes jointly for the fixed spatial basis.

    Raises
    ------
    UpdateFailure
        If the reduced step matrix is numerically singular.

    """
    ctx = residual_context(
        SeparatedField.empty(field.lift, "q", rates=True, accels=variant == "newmark"),
        ops,
        grid,
        variant,
    )
    lam, om, accel = _march_l(field.spatial, ctx, UpdateFailure)
    return field.with_temporal(lam, om, accel)


def gram_conditions_l(field, ops):
    gram = gram_matrices_l(field.spatial, ops)
    return {name: condition_number(gram[name]) for name in ("K_lx", "M_lx", "Mbar_lx")}


def run_lpgd(
    scenario,
    ops,
    grid,
    m_max,
    variant="cn",
    update_enabled=True,
    lift=None,
    j_max=DEFAULT_J_MAX,
    tol=DEFAULT_TOL,
    comparison=None,
    analytical=None,
    method=None,
):
    """Greedy L-PGD driver.

    Parameters
    ----------
    scenario : Scenario
    ops : OperatorSet
        Operators with the scenario load attached.
    grid : TimeGrid
    m_max : int
        Maximum rank.
    variant : {"cn", "newmark"}
    update_enabled : bool
        Whether to update the temporal modes after each enrichment.
    lift : LiftField, optional
        Built from the scenario when omitted.
    comparison : Comparison, optional
        Reference trajectories; errors are only recorded when given.
    analytical : tuple of ndarray, optional
        Analytical displacement and momentum grids.
    method : str, optional
        Report name, "lpgd1" or "lpgd2" by default.

    Returns
    -------
    SeparatedField, RunReport

    """
    if variant not in VARIANTS:
        raise InvalidArgument("Unknown Lagrangian variant {!r}".format(variant))
    if m_max < 0 or m_max > ops.n_dofs:
        raise InvalidArgument("m_max must lie in [0, {}]".format(ops.n_dofs))
    mesh = scenario.mesh()
    if lift is None:
        lift = build_lift(mesh, scenario, grid)
    method = method or ("lpgd1" if variant == "cn" else "lpgd2")
    rho_a = nodal_density(mesh, scenario.material)

    field = SeparatedField.empty(lift, "q", rates=True, accels=variant == "newmark")
    report = RunReport(method)

    def record(m):
        if comparison is None:
            return
        Q = field.densify()
        W = field.rate_field()
        energy = energy_trajectory(Q, W, ops, "lagrangian")
        record_rank(report, m, Q, rho_a[:, None] * W, energy, comparison, ops, grid, analytical)

    record(0)
    for m in range(1, m_max + 1):
        try:
            mode, enrichment = enrich_l(field, ops, grid, variant, j_max, tol)
        except SolverFailure as exc:
            report.fail(m, exc)
            break
        report.logs.append((m, enrichment))
        if enrichment.zero:
            log.info("%s: zero enrichment at rank %d, stopping", method, m)
            break

        field = field.append(*mode)
        basis, R, _ = gram_schmidt(field.spatial, ops.K)
        field = field.rebased(basis, R)
        for name, kappa in gram_conditions_l(field, ops).items():
            report.record_condition(m, name, kappa)

        if update_enabled:
            try:
                field = update_temporal_l(field, ops, grid, variant)
            except UpdateFailure as exc:
                report.event(m, exc)
        log.info(
            "%s: rank %d, %d iterations, converged=%r",
            method,
            m,
            enrichment.iterations,
            enrichment.converged,
        )
        record(m)

    if report.unconverged_ranks:
        log.warning(
            "%s: fixed point stopped on the iteration budget at ranks %s",
            method,
            report.unconverged_ranks,
        )
    return field, report
