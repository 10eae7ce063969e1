"""Full-order reference solutions"""

from dataclasses import dataclass
import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from pgdbar.errors import InvalidArgument, SolverFailure
from pgdbar.fem import LiftField, time_gram
from pgdbar.modes import NEWMARK_BETA, NEWMARK_GAMMA, interval_diff, interval_sum

DEFAULT_SERIES_TERMS = 200

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """Full-order trajectory.

    companion holds velocities (kind "lagrangian" or "newmark") or momenta
    (kind "hamiltonian"); accel is only set by Newmark.
    """

    Q: object
    companion: object
    kind: str
    accel: object = None

    @property
    def n_times(self):
        return self.Q.shape[1]

    def momentum(self, nodal_rho_a):
        if self.kind == "hamiltonian":
            return self.companion
        return np.asarray(nodal_rho_a)[:, None] * self.companion


def _restrict(matrix, free):
    return matrix[free][:, free]


def _load(ops, grid):
    if ops.F_traj is None:
        return np.zeros((ops.n_dofs, grid.n_times))
    if ops.F_traj.shape[1] != grid.n_times:
        raise InvalidArgument("Load trajectory does not match the time grid")
    return ops.F_traj


def _prepare(ops, grid, lift, U0, V0):
    if lift is None:
        lift = LiftField.zero(ops.n_dofs, grid.n_times)
    U0 = np.zeros(ops.n_dofs) if U0 is None else np.asarray(U0, dtype=float)
    V0 = np.zeros(ops.n_dofs) if V0 is None else np.asarray(V0, dtype=float)
    if U0.shape != (ops.n_dofs,) or V0.shape != (ops.n_dofs,):
        raise InvalidArgument("Initial vectors must have one entry per DOF")
    return lift, lift.free_dofs(), U0, V0


def _march(A, B, rhs, x0):
    """March a sparse block system with one factorization"""
    try:
        factor = splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise SolverFailure("Step matrix is singular: {}".format(exc))
    B = sp.csr_matrix(B)
    states = np.empty((A.shape[0], rhs.shape[1] + 1))
    states[:, 0] = x0
    for n in range(rhs.shape[1]):
        states[:, n + 1] = factor.solve(B @ states[:, n] + rhs[:, n])
    if not np.all(np.isfinite(states)):
        raise SolverFailure("Time marching produced non-finite values")
    return states


def _cn_solve(
    stiffness, coupling, kinematic, damping, base, base_companion, forcing, free, x0, grid
):
    """Shared Crank-Nicolson driver for both formulations.

    The momentum row is  h K (Q^n + Q^{n+1}) + 2 coupling (Z^{n+1} - Z^n)
    + h damping (Z^n + Z^{n+1}) = h (F^n + F^{n+1}) and the kinematic row is
    2 coupling (Q^{n+1} - Q^n) - h kinematic (Z^n + Z^{n+1}) = 0, where Z
    is the companion. Only the homogeneous part on the free DOFs is
    marched; the lift supplies the rest.
    """
    h = grid.h
    K = stiffness
    residual_momentum = (
        h * interval_sum(forcing)
        - 2.0 * (coupling @ interval_diff(base_companion))
        - h * (K @ interval_sum(base))
        - h * (damping @ interval_sum(base_companion))
    )
    residual_kinematic = -2.0 * (coupling @ interval_diff(base)) + h * (
        kinematic @ interval_sum(base_companion)
    )

    Kf = _restrict(K, free)
    Cf = _restrict(coupling, free)
    Nf = _restrict(kinematic, free)
    Df = _restrict(damping, free)
    A = sp.bmat([[h * Kf, 2.0 * Cf + h * Df], [2.0 * Cf, -h * Nf]])
    B = sp.bmat([[-h * Kf, 2.0 * Cf - h * Df], [2.0 * Cf, h * Nf]])
    rhs = np.vstack([residual_momentum[free], residual_kinematic[free]])

    states = _march(A, B, rhs, x0)
    n_free = free.size
    Z = np.zeros_like(base)
    Y = np.zeros_like(base)
    Z[free] = states[:n_free]
    Y[free] = states[n_free:]
    return base + Z, base_companion + Y


def solve_lagrangian_cn(ops, U0, V0, grid, lift=None):
    """Crank-Nicolson solution of the Lagrangian semi-discrete system.

    Parameters
    ----------
    ops : OperatorSet
        Operators with the load attached (a missing load means zero).
    U0, V0 : ndarray
        Initial displacements and velocities at the free DOFs.
    grid : TimeGrid
    lift : LiftField, optional
        Lift carrying prescribed end displacements; the homogeneous part
        U - q0 is marched.

    Returns
    -------
    TrajectorySet

    Raises
    ------
    SolverFailure
        If the step matrix is singular.

    """
    lift, free, U0, V0 = _prepare(ops, grid, lift, U0, V0)
    x0 = np.concatenate([(U0 - lift.q0[:, 0])[free], (V0 - lift.w0[:, 0])[free]])
    Q, W = _cn_solve(
        ops.K,
        ops.M,
        ops.M,
        ops.Cdamp,
        lift.q0,
        lift.w0,
        _load(ops, grid),
        free,
        x0,
        grid,
    )
    log.info("Lagrangian CN reference: %d steps, %d DOFs", grid.step_count, ops.n_dofs)
    return TrajectorySet(Q, W, "lagrangian")


def solve_hamiltonian_cn(ops, U0, P0, grid, lift=None):
    """Crank-Nicolson solution of the canonical Hamilton equations.

    Same as solve_lagrangian_cn with Mbar coupling displacement and
    momentum, Mbarbar in the kinematic row and the momentum damping
    operator Cdamp_p.
    """
    lift, free, U0, P0 = _prepare(ops, grid, lift, U0, P0)
    x0 = np.concatenate([(U0 - lift.q0[:, 0])[free], (P0 - lift.p0[:, 0])[free]])
    Q, P = _cn_solve(
        ops.K,
        ops.Mbar,
        ops.Mbarbar,
        ops.Cdamp_p,
        lift.q0,
        lift.p0,
        _load(ops, grid),
        free,
        x0,
        grid,
    )
    log.info("Hamiltonian CN reference: %d steps, %d DOFs", grid.step_count, ops.n_dofs)
    return TrajectorySet(Q, P, "hamiltonian")


def solve_newmark(ops, U0, V0, grid, lift=None):
    """Average-acceleration Newmark solution (gamma = 1/2, beta = 1/4).

    The initial acceleration solves M a0 = F^0 - K U0 - Cdamp V0.
    """
    lift, free, U0, V0 = _prepare(ops, grid, lift, U0, V0)
    h = grid.h
    gamma, beta = NEWMARK_GAMMA, NEWMARK_BETA

    forcing = (
        _load(ops, grid)
        - ops.M @ lift.a0
        - ops.Cdamp @ lift.w0
        - ops.K @ lift.q0
    )[free]
    M = sp.csc_matrix(_restrict(ops.M, free))
    C = sp.csr_matrix(_restrict(ops.Cdamp, free))
    K = sp.csr_matrix(_restrict(ops.K, free))

    try:
        mass = splu(M)
        effective = splu(sp.csc_matrix(M + gamma * h * C + beta * h * h * K))
    except RuntimeError as exc:
        raise SolverFailure("Newmark matrices are singular: {}".format(exc))

    n_free, n_times = forcing.shape
    x = np.zeros((n_free, n_times))
    v = np.zeros((n_free, n_times))
    a = np.zeros((n_free, n_times))
    x[:, 0] = (U0 - lift.q0[:, 0])[free]
    v[:, 0] = (V0 - lift.w0[:, 0])[free]
    a[:, 0] = mass.solve(forcing[:, 0] - C @ v[:, 0] - K @ x[:, 0])
    for n in range(n_times - 1):
        x_pred = x[:, n] + h * v[:, n] + (0.5 - beta) * h * h * a[:, n]
        v_pred = v[:, n] + (1.0 - gamma) * h * a[:, n]
        a[:, n + 1] = effective.solve(forcing[:, n + 1] - C @ v_pred - K @ x_pred)
        x[:, n + 1] = x_pred + beta * h * h * a[:, n + 1]
        v[:, n + 1] = v_pred + gamma * h * a[:, n + 1]
    if not np.all(np.isfinite(x)):
        raise SolverFailure("Newmark marching produced non-finite values")

    Q, W, Acc = lift.q0.copy(), lift.w0.copy(), lift.a0.copy()
    Q[free] += x
    W[free] += v
    Acc[free] += a
    log.info("Newmark reference: %d steps, %d DOFs", grid.step_count, ops.n_dofs)
    return TrajectorySet(Q, W, "newmark", accel=Acc)


def series_eigenpairs(n_terms, length, x=None):
    """Eigenvalues ((2k - 1) pi / 2l)^2 and, if x is given, the eigenmodes
    sin(sqrt(lambda_k) x) as rows"""
    if int(n_terms) != n_terms or n_terms < 1:
        raise InvalidArgument("Series needs at least one term, got {!r}".format(n_terms))
    wavenumbers = (2.0 * np.arange(1, int(n_terms) + 1) - 1.0) * np.pi / (2.0 * length)
    eigenvalues = wavenumbers ** 2
    if x is None:
        return eigenvalues
    return eigenvalues, np.sin(np.outer(wavenumbers, np.asarray(x, dtype=float)))


def _series_terms(n_terms, length, strain, x):
    eigenvalues, modes = series_eigenpairs(n_terms, length, x)
    k = np.arange(1, int(n_terms) + 1)
    coefficients = (
        8.0 * strain * length / np.pi ** 2 * (-1.0) ** (k + 1) / (2.0 * k - 1.0) ** 2
    )
    return np.sqrt(eigenvalues), coefficients[:, None] * modes


def analytical_series(x, t, n_terms, length, strain, wave_speed):
    """Displacement of a bar released from the uniform strain u0 = strain * x.

    Returns the partial sum on the grid x times t, shape (len(x), len(t)).
    """
    wavenumbers, spatial = _series_terms(n_terms, length, strain, x)
    temporal = np.cos(np.outer(wavenumbers * wave_speed, np.asarray(t, dtype=float)))
    return spatial.T @ temporal


def analytical_series_velocity(x, t, n_terms, length, strain, wave_speed):
    """Time derivative of analytical_series"""
    wavenumbers, spatial = _series_terms(n_terms, length, strain, x)
    omegas = wavenumbers * wave_speed
    temporal = -omegas[:, None] * np.sin(np.outer(omegas, np.asarray(t, dtype=float)))
    return spatial.T @ temporal


@dataclass(frozen=True, eq=False)
class SvdBaseline:
    """Truncated SVD of the displacement and momentum DOF matrices.

    The error arrays are absolute and indexed by rank m = 0..r.
    """

    singular_values: object
    left: object
    right: object
    q_frobenius: object
    q_l2: object
    p_singular_values: object
    p_left: object
    p_right: object
    p_frobenius: object
    p_l2: object

    @property
    def rank(self):
        return self.singular_values.size

    def truncate(self, m):
        """Rank-m displacement and momentum matrices"""
        Q = (self.left[:, :m] * self.singular_values[:m]) @ self.right[:m]
        P = (self.p_left[:, :m] * self.p_singular_values[:m]) @ self.p_right[:m]
        return Q, P


def _truncation_errors(U, s, Vh, metric, grid):
    tail = np.sqrt(np.cumsum((s ** 2)[::-1])[::-1])
    frobenius = np.append(tail, 0.0)

    weighted = U * s
    energy = (weighted.T @ (metric @ weighted)) * time_gram(Vh, Vh, grid)
    cumulative = energy[::-1, ::-1].cumsum(axis=0).cumsum(axis=1)[::-1, ::-1]
    l2 = np.sqrt(np.clip(np.diag(cumulative), 0.0, None))
    return frobenius, np.append(l2, 0.0)


def svd_baseline(traj, ops, grid, momentum=None):
    """SVD of the raw DOF matrices of a reference trajectory.

    Parameters
    ----------
    traj : TrajectorySet
    ops : OperatorSet
        Supplies the Mbar metric of the space-time L2 errors.
    grid : TimeGrid
    momentum : ndarray, optional
        Momentum matrix; defaults to traj.companion.

    Returns
    -------
    SvdBaseline

    """
    P = traj.companion if momentum is None else momentum
    U, s, Vh = np.linalg.svd(traj.Q, full_matrices=False)
    Up, sp_, Vph = np.linalg.svd(P, full_matrices=False)
    q_frobenius, q_l2 = _truncation_errors(U, s, Vh, ops.Mbar, grid)
    p_frobenius, p_l2 = _truncation_errors(Up, sp_, Vph, ops.Mbar, grid)
    log.info("SVD baseline: leading singular values %r", s[:3].tolist())
    return SvdBaseline(s, U, Vh, q_frobenius, q_l2, sp_, Up, Vph, p_frobenius, p_l2)
