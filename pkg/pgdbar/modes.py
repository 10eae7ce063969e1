"""Separated space-time fields and the time-marching kernels shared by
both PGD engines"""

from dataclasses import dataclass, field, replace
import logging

import numpy as np
import scipy.linalg as la

from pgdbar.errors import SolverFailure
from pgdbar.metrics import spacetime_l2_norm

NEWMARK_GAMMA = 0.5
NEWMARK_BETA = 0.25

# Step matrices with a larger condition number are treated as singular.
SINGULAR_COND = 1.0 / np.finfo(float).eps

# A mode whose norm is below this fraction of the current field norm is
# a zero enrichment.
ZERO_MODE_TOL = 1e-14

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SeparatedField:
    """Lift plus a sum of rank-one space-time modes.

    Attributes
    ----------
    lift : LiftField
    component : str
        "q" for displacements, "p" for momenta.
    spatial : ndarray
        Spatial modes as columns, shape (N_x, m).
    temporal : ndarray
        Temporal modes as rows, shape (m, N_t + 1).
    rates : ndarray or None
        Velocity companions of the temporal modes (q fields of L-PGD).
    accels : ndarray or None
        Acceleration companions (Newmark modes).

    """

    lift: object
    component: str
    spatial: object
    temporal: object
    rates: object = None
    accels: object = None

    @classmethod
    def empty(cls, lift, component="q", rates=False, accels=False):
        n_dofs, n_times = lift.q0.shape
        return cls(
            lift,
            component,
            np.zeros((n_dofs, 0)),
            np.zeros((0, n_times)),
            np.zeros((0, n_times)) if rates else None,
            np.zeros((0, n_times)) if accels else None,
        )

    @property
    def rank(self):
        return self.spatial.shape[1]

    @property
    def base(self):
        return self.lift.q0 if self.component == "q" else self.lift.p0

    def append(self, mu, lam, rate=None, accel=None):
        """Return a new field with one more mode"""
        return replace(
            self,
            spatial=np.column_stack([self.spatial, mu]),
            temporal=np.vstack([self.temporal, lam]),
            rates=None if self.rates is None else np.vstack([self.rates, rate]),
            accels=None if self.accels is None else np.vstack([self.accels, accel]),
        )

    def with_temporal(self, temporal, rates=None, accels=None):
        return replace(
            self,
            temporal=np.asarray(temporal, dtype=float),
            rates=self.rates if rates is None else np.asarray(rates, dtype=float),
            accels=self.accels if accels is None else np.asarray(accels, dtype=float),
        )

    def rebased(self, spatial, R):
        """Change the spatial basis to ``spatial`` with old = new @ R.

        The temporal modes and their companions are mapped by R so that the
        represented field is unchanged.
        """
        return replace(
            self,
            spatial=np.asarray(spatial, dtype=float),
            temporal=R @ self.temporal,
            rates=None if self.rates is None else R @ self.rates,
            accels=None if self.accels is None else R @ self.accels,
        )

    def densify(self):
        return self.base + self.spatial @ self.temporal

    def rate_field(self):
        return self.lift.w0 + self.spatial @ self.rates

    def accel_field(self):
        return self.lift.a0 + self.spatial @ self.accels


@dataclass(frozen=True)
class EnrichmentLog:
    """Fixed-point history of one enrichment for one field"""

    iterations: int
    stagnation: float
    converged: bool
    history: tuple = field(default_factory=tuple)
    zero: bool = False
    label: str = "q"


def stagnation(current, previous, metric, grid):
    """Relative change between two rank-one candidates.

    s = ||a - b|| / ||(a + b) / 2|| where a and b are the rank-one products
    of the (spatial, temporal) pairs ``current`` and ``previous``.
    """
    mu, lam = current
    mu_prev, lam_prev = previous
    # a - b = (mu - mu_prev) lam + mu_prev (lam - lam_prev), so the squared
    # norm is a sum of terms of the size of the change and keeps full
    # relative precision as s goes to zero
    delta = spacetime_l2_norm(
        (np.column_stack([mu - mu_prev, mu_prev]), np.vstack([lam, lam - lam_prev])),
        metric,
        grid,
    )
    spatial = np.column_stack([mu, mu_prev])
    mean = spacetime_l2_norm((spatial, 0.5 * np.vstack([lam, lam_prev])), metric, grid)
    if mean == 0.0:
        return 0.0 if delta == 0.0 else float("inf")
    return delta / mean


def is_zero_mode(mu, lam, current, metric, grid):
    """Whether a mode is negligible with respect to the current field"""
    size = spacetime_l2_norm((mu, lam), metric, grid)
    return size <= ZERO_MODE_TOL * spacetime_l2_norm(current, metric, grid)


def cn_march(A, B, rhs, x0=None, error=SolverFailure):
    """March A x^{n+1} = B x^n + rhs^n from x^0.

    Parameters
    ----------
    A, B : ndarray
        Square step matrices.
    rhs : ndarray
        One column per time interval.
    x0 : ndarray, optional
        Initial state, zero by default.
    error : type
        Exception raised when A is numerically singular.

    Returns
    -------
    ndarray
        States at every time node, shape (k, N_t + 1).

    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    rhs = np.atleast_2d(np.asarray(rhs, dtype=float))
    kappa = np.linalg.cond(A)
    if not np.isfinite(kappa) or kappa > SINGULAR_COND:
        raise error("Step matrix is numerically singular (cond={!r})".format(kappa))
    log.debug("Step matrix of size %d: cond=%r", A.shape[0], kappa)

    factor = la.lu_factor(A)
    propagator = la.lu_solve(factor, B)
    forcing = la.lu_solve(factor, rhs)

    states = np.zeros((A.shape[0], rhs.shape[1] + 1))
    if x0 is not None:
        states[:, 0] = x0
    for n in range(rhs.shape[1]):
        states[:, n + 1] = propagator @ states[:, n] + forcing[:, n]

    if not np.all(np.isfinite(states)):
        raise error("Time marching produced non-finite values")
    return states


def newmark_march(Mx, Cx, Kx, forcing, h, x0=None, v0=None, error=SolverFailure):
    """Average-acceleration Newmark for Mx a + Cx v + Kx x = forcing.

    forcing holds one column per time node. Returns displacements,
    velocities and accelerations at every time node.
    """
    Mx = np.atleast_2d(np.asarray(Mx, dtype=float))
    Cx = np.atleast_2d(np.asarray(Cx, dtype=float))
    Kx = np.atleast_2d(np.asarray(Kx, dtype=float))
    forcing = np.atleast_2d(np.asarray(forcing, dtype=float))
    k, n_times = forcing.shape
    gamma, beta = NEWMARK_GAMMA, NEWMARK_BETA

    effective = Mx + gamma * h * Cx + beta * h * h * Kx
    for name, matrix in (("mass", Mx), ("effective stiffness", effective)):
        kappa = np.linalg.cond(matrix)
        if not np.isfinite(kappa) or kappa > SINGULAR_COND:
            raise error(
                "Newmark {} matrix is numerically singular (cond={!r})".format(
                    name, kappa
                )
            )

    x = np.zeros((k, n_times))
    v = np.zeros((k, n_times))
    a = np.zeros((k, n_times))
    if x0 is not None:
        x[:, 0] = x0
    if v0 is not None:
        v[:, 0] = v0
    a[:, 0] = la.solve(Mx, forcing[:, 0] - Cx @ v[:, 0] - Kx @ x[:, 0])

    inverse = la.lu_solve(la.lu_factor(effective), np.eye(k))
    for n in range(n_times - 1):
        x_pred = x[:, n] + h * v[:, n] + (0.5 - beta) * h * h * a[:, n]
        v_pred = v[:, n] + (1.0 - gamma) * h * a[:, n]
        a[:, n + 1] = inverse @ (forcing[:, n + 1] - Cx @ v_pred - Kx @ x_pred)
        x[:, n + 1] = x_pred + beta * h * h * a[:, n + 1]
        v[:, n + 1] = v_pred + gamma * h * a[:, n + 1]

    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise error("Newmark marching produced non-finite values")
    return x, v, a


def interval_sum(X):
    """X^n + X^{n+1} for every interval"""
    return X[..., :-1] + X[..., 1:]


def interval_mean(X):
    return 0.5 * interval_sum(X)


def interval_diff(X):
    """X^{n+1} - X^n for every interval"""
    return np.diff(X, axis=-1)
