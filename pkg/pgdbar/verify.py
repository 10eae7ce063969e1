"""Acceptance checks of the PGD solvers against their references"""

from collections import namedtuple
from dataclasses import replace
import filecmp
import logging
import os
import tempfile

import numpy as np
import scipy.linalg as la

from pgdbar.errors import SolverFailure
from pgdbar.fem import (
    MaterialModel,
    Scenario,
    assemble_operators,
    build_lift,
    build_mesh,
)
from pgdbar.hamiltonian import (
    HamiltonianState,
    enrich_h,
    residual_context_h,
    run_hpgd,
    temporal_solve_h,
    update_temporal_h,
)
from pgdbar.lagrangian import (
    enrich_l,
    residual_context,
    run_lpgd,
    temporal_solve_l,
    update_temporal_l,
)
from pgdbar.metrics import relative_error
from pgdbar.modes import SeparatedField
from pgdbar.report import emit_reports
from pgdbar.reference import solve_hamiltonian_cn
from pgdbar.runner import analytical_grids, final_energy_error, run_case
from pgdbar.scenarios import build_problem, build_scenario, parse_config

Check = namedtuple("Check", ["name", "passed", "detail", "gating"])

QUADRATURE_POINTS = 8

log = logging.getLogger(__name__)


class CaseCache:
    """Runs each case once per verification session"""

    def __init__(self, num_workers=1):
        self.num_workers = num_workers
        self._results = {}

    def config(self, case_id, full_scale=False, **changes):
        cfg = parse_config(case=case_id, desk_scale=not full_scale, environ={})
        if changes:
            cfg = replace(cfg, **changes)
        return cfg

    def result(self, case_id, full_scale=False):
        key = (case_id, full_scale)
        if key not in self._results:
            cfg = self.config(case_id, full_scale)
            self._results[key] = run_case(cfg, num_workers=self.num_workers)
        return self._results[key]


def _element_oracle(mesh, weights, derivative):
    """Dense P1 matrix integrated with high-order Gauss-Legendre quadrature"""
    points, quad_weights = np.polynomial.legendre.leggauss(QUADRATURE_POINTS)
    h = mesh.h
    n = mesh.element_count
    shape = np.array([(1.0 - points) / 2.0, (1.0 + points) / 2.0])
    slopes = np.array([-1.0 / h, 1.0 / h])
    full = np.zeros((n + 1, n + 1))
    for e in range(n):
        for a in range(2):
            for b in range(2):
                if derivative:
                    integrand = np.full(points.shape, slopes[a] * slopes[b])
                else:
                    integrand = shape[a] * shape[b]
                full[e + a, e + b] += weights[e] * np.sum(quad_weights * integrand) * h / 2.0
    return full[1:, 1:]


def check_assembly(seed=7):
    rng = np.random.default_rng(seed)
    mesh = build_mesh(rng.uniform(0.1, 2.0), 9)
    rho = rng.uniform(1.0, 1.0e4, mesh.element_count)
    mat = MaterialModel(rng.uniform(1.0, 1.0e11), rng.uniform(1e-4, 1.0), rho, rng.uniform(0, 1e4))
    ops = assemble_operators(mesh, mat)
    rho_a = rho * mat.A
    ones = np.ones(mesh.element_count)
    expected = {
        "M": _element_oracle(mesh, rho_a, False),
        "K": _element_oracle(mesh, mat.E * mat.A * ones, True),
        "Mbar": _element_oracle(mesh, ones, False),
        "Mbarbar": _element_oracle(mesh, 1.0 / rho_a, False),
        "Cdamp": _element_oracle(mesh, mat.zeta * ones, False),
    }
    worst = max(
        np.max(np.abs(getattr(ops, name).toarray() - oracle)) / np.max(np.abs(oracle))
        for name, oracle in expected.items()
    )
    return Check("assembly", worst <= 1e-12, "max relative deviation {:.3e}".format(worst), True)


def check_energy_conservation(cache):
    problem = cache.result(2).problem
    energy = cache.result(2).comparisons["hpgd"].energy
    after = problem.grid.times > problem.grid.horizon / 2.0
    tail = energy[after]
    drift = np.max(np.abs(tail - tail[0])) / abs(tail[0])

    damped = cache.result(5).comparisons["hpgd"].energy
    rise = np.max(np.diff(damped)[after[1:]]) / np.max(np.abs(damped))
    passed = drift <= 1e-9 and rise <= 1e-12
    return Check(
        "energy_conservation",
        passed,
        "undamped drift {:.3e}, damped max rise {:.3e}".format(drift, rise),
        True,
    )


def check_reference_equivalence(cache):
    worst_q = worst_p = 0.0
    for case_id in range(1, 6):
        result = cache.result(case_id)
        problem = result.problem
        if not problem.scenario.material.uniform_density:
            continue
        h_ref = result.references["hamiltonian"]
        l_ref = result.references["lagrangian"]
        worst_q = max(worst_q, relative_error(l_ref.Q, h_ref.Q, problem.ops, problem.grid))
        worst_p = max(
            worst_p,
            relative_error(
                l_ref.momentum(problem.rho_a), h_ref.companion, problem.ops, problem.grid
            ),
        )
    passed = worst_q <= 1e-10 and worst_p <= 1e-10
    return Check(
        "reference_equivalence",
        passed,
        "max eps Q {:.3e}, max eps P {:.3e}".format(worst_q, worst_p),
        True,
    )


def check_analytical(cache):
    cfg = cache.config(4, full_scale=True, methods=("hpgd",), m_max=0)
    problem = build_problem(build_scenario(cfg))

    ref = solve_hamiltonian_cn(problem.ops, problem.U0, problem.P0, problem.grid, lift=problem.lift)
    Q_exact, _ = analytical_grids(problem, cfg)
    error = relative_error(ref.Q, Q_exact, problem.ops, problem.grid)
    return Check("analytical_series", error <= 0.02, "eps {:.3e}".format(error), True)


def _max_condition(report, names):
    values = [kappa for name in names for _, kappa in report.condition.get(name, [])]
    return max(values) if values else float("nan")


def check_hamiltonian_conditioning(cache):
    report = cache.result(2).reports["hpgd"]
    values = [
        kappa for name in ("K_hx", "M_hx") for _, kappa in report.condition.get(name, [])
    ]
    passed = bool(values) and all(1.0 <= k <= 1.0 + 1e-6 for k in values)
    worst = max(values) if values else float("nan")
    return Check("hpgd_conditioning", passed, "max kappa {!r}".format(worst), True)


def check_conditioning_contrast(cache, full_scale=False):
    result = cache.result(2, full_scale)
    lagrangian = _max_condition(result.reports["lpgd1"], ["Mbar_lx"])
    # C_hx couples the two bases and is not orthonormalized
    hamiltonian = _max_condition(result.reports["hpgd"], ["K_hx", "M_hx"])
    ratio = lagrangian / hamiltonian
    return Check(
        "conditioning_contrast" + ("_full_scale" if full_scale else ""),
        ratio >= 10.0,
        "max kappa(Mbar_lx)={!r}, max H kappa={!r}".format(lagrangian, hamiltonian),
        not full_scale,
    )


def check_convergence_slope(cache):
    report = cache.result(4).reports["hpgd"]
    pairs = [
        (m, e) for m, e in zip(report.ranks, report.eps_q) if 4 <= m <= 24 and e and e > 0
    ]
    if len(pairs) < 2:
        return Check("convergence_slope", False, "not enough ranks", True)
    m, eps = np.array(pairs, dtype=float).T
    slope = np.polyfit(np.log(m), np.log(eps), 1)[0]
    return Check("convergence_slope", -2.0 <= slope <= -1.0, "slope {:.3f}".format(slope), True)


def check_eckart_young(cache):
    violations = []
    for case_id in range(1, 6):
        result = cache.result(case_id)
        problem = result.problem
        lift_rank = int(np.linalg.matrix_rank(problem.lift.q0)) if np.any(problem.lift.q0) else 0
        svd = result.svd
        for name, report in result.reports.items():
            if name == "svd":
                continue
            scale = np.linalg.norm(result.comparisons[name].Q)
            for m, eps in zip(report.ranks, report.eps_q_frobenius):
                if eps is None:
                    continue
                bound = svd.q_frobenius[min(m + lift_rank, svd.rank)]
                if bound > eps * scale * (1.0 + 1e-9) + 1e-14 * scale:
                    violations.append("case {} {} m={}".format(case_id, name, m))
    return Check(
        "eckart_young",
        not violations,
        "all ranks bounded" if not violations else ", ".join(violations[:5]),
        True,
    )


def check_fixed_point_health(cache):
    problems = []
    for case_id in (1, 2, 3):
        problem = cache.result(case_id).problem
        field = SeparatedField.empty(problem.lift, "q", rates=True)
        _, lag = enrich_l(field, problem.ops, problem.grid)
        _, (log_q, log_p) = enrich_h(HamiltonianState.empty(problem.lift), problem.ops, problem.grid)
        if not (lag.converged and log_q.converged and log_p.converged):
            problems.append("case {}".format(case_id))

    cfg = cache.config(1, amplitude=0.0, m_max=3)
    zero = build_problem(build_scenario(cfg))
    field, report = run_lpgd(zero.scenario, zero.ops, zero.grid, 3, lift=zero.lift)
    state, h_report = run_hpgd(zero.scenario, zero.ops, zero.grid, 3, lift=zero.lift)
    finite = np.all(np.isfinite(field.densify())) and np.all(np.isfinite(state.q_field.densify()))
    if field.rank or state.rank or not finite:
        problems.append("zero scenario")

    reports = cache.result(2).reports
    budget = ", ".join(
        "{} {}/{}".format(name, len(report.unconverged_ranks), len(report.ranks) - 1)
        for name, report in reports.items()
        if report.logs
    )
    detail = "ok" if not problems else "failed: " + ", ".join(problems)
    return Check(
        "fixed_point_health",
        not problems,
        "{}; case 2 ranks stopped on the budget: {}".format(detail, budget or "none"),
        True,
    )


def manufactured_problem(step_count, n_modes=2, element_count=8):
    """Unit bar loaded by F = M (mu_1 + ... + mu_k) with generalized eigenvectors mu.

    Returns the scenario, operators, grid and the exact displacement on the grid.
    """
    scenario = Scenario(MaterialModel(1.0, 1.0, 1.0), 1.0, element_count, 1.0, step_count)
    mesh = scenario.mesh()
    grid = scenario.grid()
    ops = assemble_operators(mesh, scenario.material)
    kappa, vectors = la.eigh(ops.K.toarray(), ops.M.toarray())
    kappa, vectors = kappa[:n_modes], vectors[:, :n_modes]
    load = ops.M @ vectors.sum(axis=1)
    ops = ops.with_load(np.repeat(load[:, None], grid.n_times, axis=1))
    exact = vectors @ ((1.0 - np.cos(np.outer(np.sqrt(kappa), grid.times))) / kappa[:, None])
    return scenario, ops, grid, exact


def _manufactured_error(run, step_count):
    scenario, ops, grid, exact = manufactured_problem(step_count)
    lift = build_lift(scenario.mesh(), scenario, grid)
    field, _ = run(scenario, ops, grid, 2, lift=lift)
    Q = field.q_field.densify() if hasattr(field, "q_field") else field.densify()
    return relative_error(Q, exact, ops, grid)


def check_update_consistency():
    scenario, ops, grid, _ = manufactured_problem(32)
    lift = build_lift(scenario.mesh(), scenario, grid)

    field = SeparatedField.empty(lift, "q", rates=True)
    mu = np.linspace(0.1, 1.0, ops.n_dofs)
    mu = mu / np.sqrt(mu.dot(ops.K @ mu))
    lam, om, _ = temporal_solve_l(mu, residual_context(field, ops, grid))
    updated = update_temporal_l(field.append(mu, lam * 0.5, om * 0.5), ops, grid)
    gap_l = np.max(np.abs(updated.temporal[0] - lam))

    state = HamiltonianState.empty(lift)
    nu = mu / np.sqrt(mu.dot(ops.Mbarbar @ mu))
    lam_h, om_h = temporal_solve_h(mu, nu, residual_context_h(state, ops, grid))
    refreshed = update_temporal_h(state.append(mu, lam_h * 0.0, nu, om_h * 0.0), ops, grid)
    gap_h = max(
        np.max(np.abs(refreshed.q_field.temporal[0] - lam_h)),
        np.max(np.abs(refreshed.p_field.temporal[0] - om_h)),
    )

    ratios = []
    for run in (run_lpgd, run_hpgd):
        ratios.append(_manufactured_error(run, 64) / _manufactured_error(run, 128))
    passed = gap_l <= 1e-12 and gap_h <= 1e-12 and all(3.0 <= r <= 5.0 for r in ratios)
    return Check(
        "update_consistency",
        passed,
        "m=1 gaps {:.2e}/{:.2e}, refinement ratios {}".format(
            gap_l, gap_h, ", ".join("{:.2f}".format(r) for r in ratios)
        ),
        True,
    )


def check_energy_ordering(cache, full_scale=False):
    result = cache.result(2, full_scale)
    h_err = final_energy_error(result.reports["hpgd"])
    l_err = final_energy_error(result.reports["lpgd1"])
    return Check(
        "energy_ordering" + ("_full_scale" if full_scale else ""),
        h_err is not None and l_err is not None and h_err <= l_err,
        "H-PGD {!r}, L-PGD1 {!r}".format(h_err, l_err),
        not full_scale,
    )


def check_determinism(cache):
    first = cache.result(2)
    second = run_case(cache.config(2), num_workers=cache.num_workers)
    with tempfile.TemporaryDirectory() as tmp:
        a, b = os.path.join(tmp, "a"), os.path.join(tmp, "b")
        files = [f for f in emit_reports(first, a) if f.endswith(".csv")]
        emit_reports(second, b)
        _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    return Check(
        "determinism",
        not (mismatch or errors),
        "{} data files identical".format(len(files)) if not mismatch else repr(mismatch),
        True,
    )


def run_checks(full_scale=False, num_workers=1, cache=None):
    """Run the acceptance suite; returns a list of Check

    An existing CaseCache may be passed to reuse case runs.
    """
    if cache is None:
        cache = CaseCache(num_workers=num_workers)
    checks = [
        ("assembly", check_assembly, ()),
        ("energy_conservation", check_energy_conservation, (cache,)),
        ("reference_equivalence", check_reference_equivalence, (cache,)),
        ("analytical_series", check_analytical, (cache,)),
        ("hpgd_conditioning", check_hamiltonian_conditioning, (cache,)),
        ("conditioning_contrast", check_conditioning_contrast, (cache,)),
        ("convergence_slope", check_convergence_slope, (cache,)),
        ("eckart_young", check_eckart_young, (cache,)),
        ("fixed_point_health", check_fixed_point_health, (cache,)),
        ("update_consistency", check_update_consistency, ()),
        ("energy_ordering", check_energy_ordering, (cache,)),
        ("determinism", check_determinism, (cache,)),
    ]
    if full_scale:
        checks.append(("conditioning_contrast_full_scale", check_conditioning_contrast, (cache, True)))
        checks.append(("energy_ordering_full_scale", check_energy_ordering, (cache, True)))

    results = []
    for name, check, args in checks:
        try:
            outcome = check(*args)
        except SolverFailure as exc:
            outcome = Check(name, False, str(exc), not name.endswith("full_scale"))
        log.info("%s: %s (%s)", outcome.name, "PASS" if outcome.passed else "FAIL", outcome.detail)
        results.append(outcome)
    return results
