"""Run a full case study: references, SVD baseline and PGD methods"""

from dataclasses import dataclass, field
import logging

import numpy as np

from pgdbar.cf import process_methods
from pgdbar.metrics import Comparison, RunReport, energy_trajectory, record_rank
from pgdbar.reference import (
    analytical_series,
    analytical_series_velocity,
    solve_hamiltonian_cn,
    solve_lagrangian_cn,
    solve_newmark,
    svd_baseline,
)
from pgdbar.scenarios import REPORT_ORDER, build_problem, build_scenario

log = logging.getLogger(__name__)


@dataclass(eq=False)
class CaseResult:
    """Everything computed for one case.

    ``references`` maps "hamiltonian", "lagrangian" and (when L-PGD2 runs)
    "newmark" to TrajectorySet objects; ``reports`` and ``fields`` are keyed
    by method name in report order.
    """

    config: object
    problem: object = None
    references: dict = field(default_factory=dict)
    comparisons: dict = field(default_factory=dict)
    svd: object = None
    analytical: object = None
    reports: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)

    @property
    def failed(self):
        return any(report.failures for report in self.reports.values())


def analytical_grids(problem, cfg):
    """Series displacement and momentum of a bar released from a uniform strain"""
    scenario = problem.scenario
    if scenario.bc_right.kind != "free" or not cfg.strain:
        return None
    if not scenario.material.uniform_density:
        log.warning("Analytical series skipped: density is not uniform")
        return None
    x = problem.mesh.free_coords
    t = problem.grid.times
    c = scenario.material.wave_speed
    Q = analytical_series(x, t, cfg.series_terms, cfg.length, cfg.strain, c)
    W = analytical_series_velocity(x, t, cfg.series_terms, cfg.length, cfg.strain, c)
    return Q, problem.rho_a[:, None] * W


def _comparison(traj, problem, kind):
    P = traj.momentum(problem.rho_a)
    if kind == "hamiltonian":
        energy = energy_trajectory(traj.Q, P, problem.ops, "hamiltonian")
    else:
        energy = energy_trajectory(traj.Q, traj.companion, problem.ops, "lagrangian")
    return Comparison(traj.Q, P, energy)


def svd_report(baseline, comparison, problem, m_max, analytical=None):
    """Errors of the truncated SVD of the Hamiltonian reference for m = 0..m_max"""
    report = RunReport("svd")
    ops, grid = problem.ops, problem.grid
    for m in range(0, min(m_max, baseline.rank) + 1):
        Q, P = baseline.truncate(m)
        energy = energy_trajectory(Q, P, ops, "hamiltonian")
        record_rank(report, m, Q, P, energy, comparison, ops, grid, analytical)
    return report


def run_case(cfg, num_workers=None, progress_bar=None):
    """Compute references, the SVD baseline and every requested PGD method.

    Parameters
    ----------
    cfg : CaseConfig
    num_workers : int, optional
        Worker processes for the PGD methods; 1 runs them in-process.
    progress_bar : tqdm, optional
        Advanced once per finished method.

    Returns
    -------
    CaseResult

    Raises
    ------
    SolverFailure
        If a full-order reference cannot be computed.

    """
    problem = build_problem(build_scenario(cfg))
    ops, grid, lift = problem.ops, problem.grid, problem.lift
    result = CaseResult(cfg, problem)

    hamiltonian = solve_hamiltonian_cn(ops, problem.U0, problem.P0, grid, lift=lift)
    lagrangian = solve_lagrangian_cn(ops, problem.U0, problem.V0, grid, lift=lift)
    result.references["hamiltonian"] = hamiltonian
    result.references["lagrangian"] = lagrangian
    result.comparisons["hpgd"] = _comparison(hamiltonian, problem, "hamiltonian")
    result.comparisons["lpgd1"] = _comparison(lagrangian, problem, "lagrangian")
    if "lpgd2" in cfg.methods:
        newmark = solve_newmark(ops, problem.U0, problem.V0, grid, lift=lift)
        result.references["newmark"] = newmark
        result.comparisons["lpgd2"] = _comparison(newmark, problem, "lagrangian")

    result.analytical = analytical_grids(problem, cfg)
    result.svd = svd_baseline(hamiltonian, ops, grid)
    outcomes = {
        "svd": (
            result.svd,
            svd_report(
                result.svd, result.comparisons["hpgd"], problem, cfg.m_max, result.analytical
            ),
        )
    }

    outcomes.update(
        process_methods(
            cfg.methods,
            cfg,
            {name: result.comparisons[name] for name in cfg.methods},
            analytical=result.analytical,
            num_workers=num_workers,
            progress_bar=progress_bar,
        )
    )
    for name in REPORT_ORDER:
        if name in outcomes:
            result.fields[name], result.reports[name] = outcomes[name]

    for name, report in result.reports.items():
        log.info(
            "%s: final rank %d, eps_q=%r, %d ranks stopped on the iteration budget",
            name,
            report.final_rank,
            report.eps_q[-1] if report.eps_q else None,
            len(report.unconverged_ranks),
        )
    return result


def final_energy_error(report):
    if report.energy is None:
        return None
    return float(np.max(np.abs(report.energy - report.reference_energy)))
