"""Space-time norms, relative errors, energies and condition numbers"""

from dataclasses import dataclass, field
import logging

import numpy as np

from pgdbar.errors import InvalidArgument, UndefinedReference
from pgdbar.fem import time_gram, time_integral

# Smallest singular value treated as exactly zero by condition_number.
SINGULAR_FLOOR = 1e-300

log = logging.getLogger(__name__)


def _metric(ops):
    return getattr(ops, "Mbar", ops)


def _dense_inner(F, H, metric, grid):
    """Space-time inner product of two dense fields under a spatial metric"""
    MH = metric @ H
    same = np.sum(F * MH, axis=0)
    ahead = np.sum(F[:, :-1] * MH[:, 1:], axis=0)
    behind = np.sum(F[:, 1:] * MH[:, :-1], axis=0)
    return (grid.h / 6.0) * np.sum(2.0 * same[:-1] + ahead + behind + 2.0 * same[1:])


def separated_inner(spatial_a, temporal_a, spatial_b, temporal_b, metric, grid):
    """Space-time inner product of two separated forms, without densifying"""
    spatial_a = np.atleast_2d(np.asarray(spatial_a, dtype=float).T).T
    spatial_b = np.atleast_2d(np.asarray(spatial_b, dtype=float).T).T
    gs = spatial_a.T @ (metric @ spatial_b)
    gt = time_gram(temporal_a, temporal_b, grid)
    return float(np.sum(gs * gt))


def _as_dense(field, ops, grid):
    if hasattr(field, "densify"):
        field = field.densify()
    field = np.asarray(field, dtype=float)
    n_dofs = _metric(ops).shape[0]
    if field.shape != (n_dofs, grid.n_times):
        raise InvalidArgument(
            "Field of shape {} does not match the discretization ({}, {})".format(
                field.shape, n_dofs, grid.n_times
            )
        )
    return field


def spacetime_l2_norm(field, ops, grid):
    """Discrete space-time L2 norm.

    Parameters
    ----------
    field : ndarray, tuple or SeparatedField
        A dense (N_x, N_t + 1) grid, a (spatial, temporal) pair of factor
        matrices, or a separated field (base trajectory plus modes).
    ops : OperatorSet or matrix
        Supplies the spatial metric (Mbar for an OperatorSet).
    grid : TimeGrid

    Returns
    -------
    float

    """
    metric = _metric(ops)
    if isinstance(field, tuple):
        spatial, temporal = field
        squared = separated_inner(spatial, temporal, spatial, temporal, metric, grid)
    elif hasattr(field, "spatial"):
        base = field.base
        spatial, temporal = field.spatial, field.temporal
        squared = separated_inner(spatial, temporal, spatial, temporal, metric, grid)
        if np.any(base):
            _as_dense(base, ops, grid)
            projected = spatial.T @ (metric @ base)
            squared += 2.0 * float(np.sum(time_integral(projected, temporal, grid)))
            squared += _dense_inner(base, base, metric, grid)
    else:
        dense = _as_dense(field, ops, grid)
        squared = _dense_inner(dense, dense, metric, grid)
    return float(np.sqrt(max(squared, 0.0)))


def relative_error(approx, reference, ops, grid):
    """Relative space-time L2 error of approx with respect to reference.

    Raises
    ------
    UndefinedReference
        If the reference has zero norm.

    """
    reference = _as_dense(reference, ops, grid)
    scale = spacetime_l2_norm(reference, ops, grid)
    if scale == 0.0:
        raise UndefinedReference("Relative error against a zero reference")
    approx = _as_dense(approx, ops, grid)
    return spacetime_l2_norm(approx - reference, ops, grid) / scale


def frobenius_error(approx, reference):
    """Relative Frobenius error of DOF matrices"""
    reference = np.asarray(reference, dtype=float)
    scale = np.linalg.norm(reference)
    if scale == 0.0:
        raise UndefinedReference("Relative error against a zero reference")
    return float(np.linalg.norm(np.asarray(approx, dtype=float) - reference) / scale)


def energy_trajectory(Q, companion, ops, kind="hamiltonian"):
    """Discrete energy at every time node.

    kind is "hamiltonian" (companion holds momenta, weighted by Mbarbar) or
    "lagrangian" (companion holds velocities, weighted by M).
    """
    Q = np.asarray(Q, dtype=float)
    companion = np.asarray(companion, dtype=float)
    if kind == "hamiltonian":
        kinetic = companion * (ops.Mbarbar @ companion)
    elif kind == "lagrangian":
        kinetic = companion * (ops.M @ companion)
    else:
        raise InvalidArgument("Unknown energy kind {!r}".format(kind))
    return 0.5 * np.sum(kinetic, axis=0) + 0.5 * np.sum(Q * (ops.K @ Q), axis=0)


def condition_number(G):
    """2-norm condition number, +inf when the smallest singular value vanishes"""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.size == 0:
        raise InvalidArgument("Condition number of an empty matrix")
    if G.shape[0] != G.shape[1]:
        raise InvalidArgument("Condition number requires a square matrix")
    singular = np.linalg.svd(G, compute_uv=False)
    if not np.all(np.isfinite(singular)) or singular[-1] < SINGULAR_FLOOR:
        return float("inf")
    return float(singular[0] / singular[-1])


def error_field_grid(approx, reference):
    """Pointwise absolute error of two fields on the same grid"""
    approx = np.asarray(approx, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if approx.shape != reference.shape:
        raise InvalidArgument(
            "Cannot compare fields of shapes {} and {}".format(
                approx.shape, reference.shape
            )
        )
    return np.abs(approx - reference)


@dataclass
class RunReport:
    """Diagnostics of one method, indexed by rank.

    The per-rank lists are aligned with ``ranks``; a relative error that is
    undefined (zero reference) is stored as None.
    """

    method: str
    ranks: list = field(default_factory=list)
    eps_q: list = field(default_factory=list)
    eps_p: list = field(default_factory=list)
    energy_err_max: list = field(default_factory=list)
    eps_q_frobenius: list = field(default_factory=list)
    eps_p_frobenius: list = field(default_factory=list)
    eps_q_analytical: list = field(default_factory=list)
    eps_p_analytical: list = field(default_factory=list)
    condition: dict = field(default_factory=dict)
    logs: list = field(default_factory=list)
    energy: object = None
    reference_energy: object = None
    error_field: object = None
    failures: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def final_rank(self):
        return self.ranks[-1] if self.ranks else 0

    @property
    def unconverged_ranks(self):
        """Ranks whose fixed point stopped on the iteration budget"""
        return sorted({m for m, entry in self.logs if not (entry.converged or entry.zero)})

    def record_condition(self, m, name, kappa):
        self.condition.setdefault(name, []).append((m, kappa))

    def fail(self, m, error):
        log.error("%s failed at rank %d: %s", self.method, m, error)
        self.failures.append((m, type(error).__name__, str(error)))

    def event(self, m, error):
        log.warning("%s at rank %d: %s", self.method, m, error)
        self.events.append((m, type(error).__name__, str(error)))


def _undefined_safe(func, *args):
    try:
        return func(*args)
    except UndefinedReference:
        return None


def record_rank(report, m, Q, P, energy, reference, ops, grid, analytical=None):
    """Append the diagnostics of a rank-m approximation to a report.

    Parameters
    ----------
    report : RunReport
    m : int
    Q, P : ndarray
        Dense displacement and momentum trajectories of the approximation.
    energy : ndarray
        Energy of the approximation at every time node.
    reference : Comparison
        Reference displacement, momentum and energy.
    analytical : tuple of ndarray, optional
        Analytical displacement and momentum on the same grid.

    """
    report.ranks.append(m)
    report.eps_q.append(_undefined_safe(relative_error, Q, reference.Q, ops, grid))
    report.eps_p.append(_undefined_safe(relative_error, P, reference.P, ops, grid))
    report.eps_q_frobenius.append(_undefined_safe(frobenius_error, Q, reference.Q))
    report.eps_p_frobenius.append(_undefined_safe(frobenius_error, P, reference.P))
    report.energy_err_max.append(float(np.max(np.abs(energy - reference.energy))))
    if analytical is not None:
        report.eps_q_analytical.append(
            _undefined_safe(relative_error, Q, analytical[0], ops, grid)
        )
        report.eps_p_analytical.append(
            _undefined_safe(relative_error, P, analytical[1], ops, grid)
        )
    else:
        report.eps_q_analytical.append(None)
        report.eps_p_analytical.append(None)
    report.energy = energy
    report.reference_energy = reference.energy
    report.error_field = error_field_grid(Q, reference.Q)
    log.info(
        "%s rank %d: eps_q=%r eps_p=%r", report.method, m, report.eps_q[-1], report.eps_p[-1]
    )


@dataclass(frozen=True, eq=False)
class Comparison:
    """Reference trajectories a method is measured against"""

    Q: object
    P: object
    energy: object
