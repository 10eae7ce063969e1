"""Piecewise-linear finite elements on a uniform 1D bar

The left end of the bar (x = 0) is always fixed and its node is
eliminated, so every operator acts on the N_e free nodes x_1..x_N.
"""

from dataclasses import dataclass, field, replace
import logging

import numpy as np
import scipy.sparse as sp

from pgdbar.errors import (
    IncompatibleInitialData,
    InvalidArgument,
    InvalidState,
)

# Post-projection over pre-projection norm below which a vector is
# reported as linearly dependent on its predecessors.
DROP_TOL = 1e-12

GAUSS_POINTS = np.array([-1.0, 1.0]) / np.sqrt(3.0)

LOCAL_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
LOCAL_STIFFNESS = np.array([[1.0, -1.0], [-1.0, 1.0]])

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh of [0, length] with element_count elements"""

    length: float
    element_count: int

    @property
    def h(self):
        return self.length / self.element_count

    @property
    def node_coords(self):
        return np.linspace(0.0, self.length, self.element_count + 1)

    @property
    def free_coords(self):
        return self.node_coords[1:]

    @property
    def n_dofs(self):
        return self.element_count


def build_mesh(length, element_count):
    """Build a uniform mesh.

    Parameters
    ----------
    length : float
        Bar length in meters.
    element_count : int
        Number of linear elements.

    Returns
    -------
    Mesh1D

    Raises
    ------
    InvalidArgument
        If the length or the element count is not positive.

    """
    if not length > 0:
        raise InvalidArgument("Mesh length must be positive, got {!r}".format(length))
    if int(element_count) != element_count or element_count < 1:
        raise InvalidArgument(
            "Element count must be a positive integer, got {!r}".format(element_count)
        )
    return Mesh1D(float(length), int(element_count))


@dataclass(frozen=True)
class MaterialModel:
    """Elastic bar material.

    rho is either a scalar or a sequence with one value per element.
    zeta is the linear viscous damping coefficient (0 when undamped).
    """

    E: float
    A: float
    rho: object
    zeta: float = 0.0

    def __post_init__(self):
        if not self.E > 0:
            raise InvalidArgument("Young's modulus must be positive")
        if not self.A > 0:
            raise InvalidArgument("Cross-section area must be positive")
        if not np.all(np.asarray(self.rho, dtype=float) > 0):
            raise InvalidArgument("Density must be positive everywhere")
        if not self.zeta >= 0:
            raise InvalidArgument("Damping coefficient must be non-negative")

    @property
    def uniform_density(self):
        return np.ndim(self.rho) == 0

    @property
    def wave_speed(self):
        if not self.uniform_density:
            raise InvalidState("Wave speed is only defined for a uniform density")
        return np.sqrt(self.E / self.rho)

    def element_density(self, element_count):
        rho = np.asarray(self.rho, dtype=float)
        if rho.ndim == 0:
            return np.full(element_count, float(rho))
        if rho.shape != (element_count,):
            raise InvalidArgument(
                "Expected {} element densities, got {}".format(element_count, rho.size)
            )
        return rho


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of [0, horizon] with step_count steps"""

    horizon: float
    step_count: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise InvalidArgument("Time horizon must be positive")
        if int(self.step_count) != self.step_count or self.step_count < 1:
            raise InvalidArgument("Step count must be a positive integer")

    @property
    def h(self):
        return self.horizon / self.step_count

    @property
    def n_times(self):
        return self.step_count + 1

    @property
    def times(self):
        return np.arange(self.step_count + 1) * self.h


@dataclass(frozen=True)
class NeumannTraction:
    """Prescribed end force g(t)"""

    signal: object
    kind = "neumann"


@dataclass(frozen=True)
class DirichletDisplacement:
    """Prescribed end displacement u_l(t).

    The signal must also provide ``rate(t)`` and ``accel(t)``.
    """

    signal: object
    kind = "dirichlet"


@dataclass(frozen=True)
class Free:
    """Traction-free end"""

    kind = "free"


@dataclass(frozen=True)
class Scenario:
    """Material, geometry, data and discretization sizes of one study"""

    material: MaterialModel
    length: float
    element_count: int
    horizon: float
    step_count: int
    bc_right: object = field(default_factory=Free)
    body_load: object = None
    u0: object = None
    v0: object = None
    update_enabled: bool = True
    case_id: object = None

    def mesh(self):
        return build_mesh(self.length, self.element_count)

    def grid(self):
        return TimeGrid(float(self.horizon), int(self.step_count))


@dataclass(frozen=True, eq=False)
class OperatorSet:
    """Assembled operators over the free DOFs.

    Cdamp_p is the damping operator of the momentum equation, weighted by
    zeta / (rho A). F_traj is None until a load is attached.
    """

    M: object
    K: object
    Mbar: object
    Mbarbar: object
    Cdamp: object
    Cdamp_p: object
    F_traj: object = None

    @property
    def n_dofs(self):
        return self.K.shape[0]

    @property
    def damped(self):
        return self.Cdamp.count_nonzero() > 0

    def with_load(self, F_traj):
        F_traj = np.asarray(F_traj, dtype=float)
        if F_traj.ndim != 2 or F_traj.shape[0] != self.n_dofs:
            raise InvalidArgument("Load trajectory must have one row per DOF")
        return replace(self, F_traj=F_traj)


def _assemble(mesh, weights, local, scale, eliminate=True):
    n = mesh.element_count
    elements = np.arange(n)
    rows = np.stack([elements, elements, elements + 1, elements + 1], axis=1)
    cols = np.stack([elements, elements + 1, elements, elements + 1], axis=1)
    data = np.asarray(weights, dtype=float)[:, None] * scale * local.ravel()[None, :]
    matrix = sp.coo_matrix(
        (data.ravel(), (rows.ravel(), cols.ravel())), shape=(n + 1, n + 1)
    ).tocsr()
    if eliminate:
        matrix = matrix[1:, 1:]
    return matrix.tocsr()


def mass_matrix(mesh, weights, eliminate=True):
    """Weighted P1 mass matrix with entries int(w phi_i phi_j)"""
    weights = np.broadcast_to(np.asarray(weights, dtype=float), (mesh.element_count,))
    return _assemble(mesh, weights, LOCAL_MASS, mesh.h, eliminate)


def stiffness_matrix(mesh, weights, eliminate=True):
    """Weighted P1 stiffness matrix with entries int(w phi_i' phi_j')"""
    weights = np.broadcast_to(np.asarray(weights, dtype=float), (mesh.element_count,))
    return _assemble(mesh, weights, LOCAL_STIFFNESS, 1.0 / mesh.h, eliminate)


def assemble_operators(mesh, mat):
    """Assemble M, K, Mbar, Mbarbar and the damping operators.

    Parameters
    ----------
    mesh : Mesh1D
    mat : MaterialModel

    Returns
    -------
    OperatorSet
        Sparse CSR matrices of size N_e x N_e, without a load.

    """
    rho_a = mat.element_density(mesh.element_count) * mat.A
    ones = np.ones(mesh.element_count)
    ops = OperatorSet(
        M=mass_matrix(mesh, rho_a),
        K=stiffness_matrix(mesh, mat.E * mat.A * ones),
        Mbar=mass_matrix(mesh, ones),
        Mbarbar=mass_matrix(mesh, 1.0 / rho_a),
        Cdamp=mass_matrix(mesh, mat.zeta * ones),
        Cdamp_p=mass_matrix(mesh, mat.zeta / rho_a),
    )
    log.debug(
        "Assembled operators: n_dofs=%d, h=%r, damped=%r",
        ops.n_dofs,
        mesh.h,
        mat.zeta > 0,
    )
    return ops


def nodal_density(mesh, mat):
    """rho A at the free nodes, averaging the adjacent elements"""
    rho_a = mat.element_density(mesh.element_count) * mat.A
    nodal = np.empty(mesh.element_count)
    nodal[:-1] = 0.5 * (rho_a[:-1] + rho_a[1:])
    nodal[-1] = rho_a[-1]
    return nodal


def body_load(mesh, f, grid):
    """Consistent nodal body load, integrated with 2-point Gauss per element.

    Returns an array of shape (N_e, N_t + 1).
    """
    nodes = mesh.node_coords
    h = mesh.h
    times = grid.times
    loads = np.zeros((mesh.element_count + 1, grid.n_times))
    if f is None:
        return loads[1:]
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    for xi in GAUSS_POINTS:
        x = mid + 0.5 * h * xi
        values = np.broadcast_to(f(x[:, None], times[None, :]), (x.size, times.size))
        right = (x - nodes[:-1]) / h
        left = 1.0 - right
        np.add.at(loads, np.arange(mesh.element_count), 0.5 * h * left[:, None] * values)
        np.add.at(
            loads, np.arange(1, mesh.element_count + 1), 0.5 * h * right[:, None] * values
        )
    return loads[1:]


def assemble_load(mesh, scenario, grid):
    """Load trajectory F^n for Neumann or free right ends.

    Raises
    ------
    InvalidState
        If the right end carries a prescribed displacement.

    """
    bc = scenario.bc_right
    if bc.kind == "dirichlet":
        raise InvalidState("Prescribed displacements enter through the lift, not the load")
    loads = body_load(mesh, scenario.body_load, grid)
    if bc.kind == "neumann":
        loads[-1] += np.broadcast_to(bc.signal(grid.times), (grid.n_times,))
    return loads


def scenario_load(mesh, scenario, grid):
    """Load trajectory of any scenario; Dirichlet ends contribute body loads only"""
    if scenario.bc_right.kind == "dirichlet":
        return body_load(mesh, scenario.body_load, grid)
    return assemble_load(mesh, scenario, grid)


def project_initial(mesh, scenario):
    """Nodal interpolation of the initial data at the free DOFs.

    Returns
    -------
    tuple of ndarray
        (U0, V0, P0) with P0 the interpolation of rho A v0.

    Raises
    ------
    IncompatibleInitialData
        If u0 does not vanish at the fixed end.

    """
    x = mesh.free_coords
    n = mesh.element_count
    U0 = np.zeros(n)
    V0 = np.zeros(n)
    if scenario.u0 is not None:
        left = float(scenario.u0(0.0))
        if abs(left) > 1e-14:
            raise IncompatibleInitialData(
                "u0(0) must vanish at the fixed end, got {!r}".format(left)
            )
        U0 = np.broadcast_to(np.asarray(scenario.u0(x), dtype=float), (n,)).copy()
    if scenario.v0 is not None:
        V0 = np.broadcast_to(np.asarray(scenario.v0(x), dtype=float), (n,)).copy()
    P0 = nodal_density(mesh, scenario.material) * V0
    return U0, V0, P0


@dataclass(frozen=True, eq=False)
class LiftField:
    """Field carrying the initial data and the prescribed end displacement.

    q0, w0, a0 and p0 are displacement, velocity, acceleration and momentum
    trajectories of shape (N_x, N_t + 1). constrained lists the DOFs whose
    values are prescribed by the lift; every mode vanishes there.
    """

    q0: object
    w0: object
    a0: object
    p0: object
    constrained: tuple = ()

    @classmethod
    def zero(cls, n_dofs, n_times):
        zeros = np.zeros((n_dofs, n_times))
        return cls(zeros, zeros, zeros, zeros, ())

    @property
    def is_zero(self):
        return not (
            self.constrained
            or np.any(self.q0)
            or np.any(self.w0)
            or np.any(self.a0)
            or np.any(self.p0)
        )

    @property
    def n_dofs(self):
        return self.q0.shape[0]

    def free_dofs(self):
        return np.setdiff1d(np.arange(self.n_dofs), np.asarray(self.constrained, dtype=int))


def build_lift(mesh, scenario, grid):
    """Build the lift of a scenario.

    The lift is u0(x) + t v0(x), plus (x / l)(u_l(t) - u_l(0) - t u_l'(0))
    when the right end displacement is prescribed. It reduces to zero for
    homogeneous data, to (x / l) u_l(t) for a Dirichlet end starting at
    rest, and to u0(x) for a bar released from rest.

    Returns
    -------
    LiftField

    """
    U0, V0, _ = project_initial(mesh, scenario)
    t = grid.times
    q0 = U0[:, None] + V0[:, None] * t[None, :]
    w0 = np.repeat(V0[:, None], grid.n_times, axis=1)
    a0 = np.zeros_like(q0)
    constrained = ()

    bc = scenario.bc_right
    if bc.kind == "dirichlet":
        s = mesh.free_coords / mesh.length
        u = np.broadcast_to(bc.signal(t), t.shape)
        rate = np.broadcast_to(bc.signal.rate(t), t.shape)
        accel = np.broadcast_to(bc.signal.accel(t), t.shape)
        u_start = float(bc.signal(0.0))
        rate_start = float(bc.signal.rate(0.0))
        if abs(U0[-1] - u_start) > 1e-12 * max(1.0, abs(u_start)):
            log.warning(
                "Initial displacement %r at x=l differs from prescribed %r",
                U0[-1],
                u_start,
            )
        q0 = q0 + s[:, None] * (u - u_start - t * rate_start)[None, :]
        w0 = w0 + s[:, None] * (rate - rate_start)[None, :]
        a0 = a0 + s[:, None] * accel[None, :]
        constrained = (mesh.n_dofs - 1,)

    p0 = nodal_density(mesh, scenario.material)[:, None] * w0
    lift = LiftField(q0, w0, a0, p0, constrained)
    log.debug("Built lift: zero=%r, constrained=%r", lift.is_zero, constrained)
    return lift


def gram_schmidt(V, G, drop_tol=DROP_TOL, niter=1):
    """Modified Gram-Schmidt under the inner product <u, v> = u^T G v.

    Parameters
    ----------
    V : array_like
        Matrix with the vectors to orthonormalize as columns.
    G : array_like or sparse matrix
        Symmetric positive definite metric.
    drop_tol : float
        A vector whose G-norm after projection falls below drop_tol times
        its norm before projection is reported as dependent. It is kept,
        normalized but not projected.
    niter : int
        Number of passes.

    Returns
    -------
    Q : numpy.ndarray
        Orthonormalized columns.
    R : numpy.ndarray
        Upper triangular factor with V = Q R.
    dependent : list of int
        Columns flagged as nearly dependent.

    """
    Q = np.array(V, dtype=float, copy=True)
    if Q.ndim != 2:
        raise InvalidArgument("Expected a matrix of column vectors")
    m = Q.shape[1]
    R = np.eye(m)
    dependent = set()

    for iteration in range(niter):
        step = np.zeros((m, m))
        for i in range(m):
            original = Q[:, i].copy()
            v = original.copy()
            pre = _metric_norm(v, G)
            for j in range(i):
                r = Q[:, j].dot(G @ v)
                v -= r * Q[:, j]
                step[j, i] = r
            post = _metric_norm(v, G)
            if post <= drop_tol * pre or post == 0.0:
                dependent.add(i)
                step[:i, i] = 0.0
                v = original
                post = pre
            if post > 0.0:
                Q[:, i] = v / post
                step[i, i] = post
            else:
                Q[:, i] = 0.0
        R = step @ R

    if dependent:
        log.warning("Near-dependent vectors in Gram-Schmidt: %r", sorted(dependent))
    return Q, R, sorted(dependent)


def metric_orthonormalize(basis, G, drop_tol=DROP_TOL, niter=1):
    """Orthonormalize a list of vectors with respect to G.

    Returns the orthonormalized vectors (as columns) and the indices of the
    vectors flagged as nearly dependent.
    """
    V = np.column_stack([np.asarray(b, dtype=float) for b in basis])
    Q, _, dependent = gram_schmidt(V, G, drop_tol=drop_tol, niter=niter)
    return Q, dependent


def _metric_norm(v, G):
    return float(np.sqrt(max(v.dot(G @ v), 0.0)))


def _check_pair(a, b, grid):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise InvalidArgument(
            "Trajectories have different lengths: {} and {}".format(
                a.shape[-1], b.shape[-1]
            )
        )
    if grid is not None and a.shape[-1] != grid.n_times:
        raise InvalidArgument(
            "Trajectory length {} does not match the time grid ({})".format(
                a.shape[-1], grid.n_times
            )
        )
    return a, b


def time_integral(a, b, grid):
    """Exact integral of the product of two piecewise-linear trajectories.

    Leading axes broadcast, so a field of shape (N_x, N_t + 1) against a
    trajectory of shape (N_t + 1,) yields one integral per row.
    """
    a, b = _check_pair(a, b, grid)
    return (grid.h / 6.0) * np.sum(
        a[..., :-1] * (2.0 * b[..., :-1] + b[..., 1:])
        + a[..., 1:] * (b[..., :-1] + 2.0 * b[..., 1:]),
        axis=-1,
    )


def time_integral_rate(a, b, grid):
    """Integral of da/dt times b for piecewise-linear trajectories"""
    a, b = _check_pair(a, b, grid)
    return 0.5 * np.sum(np.diff(a, axis=-1) * (b[..., :-1] + b[..., 1:]), axis=-1)


def time_integral_midpoint(a, b, grid):
    """Midpoint-rule integral of a times b, interval means multiplied.

    This is the quadrature of the Crank-Nicolson interval rows, so spatial
    problems built with it are projections of the same discrete equations
    the temporal solves march.
    """
    a, b = _check_pair(a, b, grid)
    return 0.25 * grid.h * np.sum(
        (a[..., :-1] + a[..., 1:]) * (b[..., :-1] + b[..., 1:]), axis=-1
    )


def time_gram(A, B, grid):
    """Matrix of time integrals of a_i b_j for rows a_i of A and b_j of B"""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    _check_pair(A, B, grid)
    return (grid.h / 6.0) * (
        A[:, :-1] @ (2.0 * B[:, :-1] + B[:, 1:]).T
        + A[:, 1:] @ (B[:, :-1] + 2.0 * B[:, 1:]).T
    )
