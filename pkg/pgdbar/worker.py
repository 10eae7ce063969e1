"""pgd-bar method worker"""

import logging

from pgdbar.hamiltonian import run_hpgd
from pgdbar.lagrangian import run_lpgd
from pgdbar.scenarios import build_problem, build_scenario

VARIANTS = {"lpgd1": "cn", "lpgd2": "newmark"}

log = logging.getLogger(__name__)


def init_worker(cfg, comparison_map, analytical_grids=None):
    global config, problem, comparisons, analytical
    config = cfg
    problem = build_problem(build_scenario(cfg))
    comparisons = dict(comparison_map)
    analytical = analytical_grids


def process_method(name):
    """Run one PGD method on the worker's problem

    Parameters
    ----------
    name : str
        "lpgd1", "lpgd2" or "hpgd".

    Returns
    -------

    name : str
        The input method name.
    field : SeparatedField or HamiltonianState
        Final separated approximation.
    report : RunReport
        Per-rank diagnostics.

    """
    global config, problem, comparisons, analytical

    log.debug("Running %s on case %r", name, config.case_id)
    kwds = dict(
        update_enabled=config.update,
        lift=problem.lift,
        j_max=config.j_max,
        tol=config.tol,
        comparison=comparisons.get(name),
        analytical=analytical,
    )
    if name == "hpgd":
        field, report = run_hpgd(
            problem.scenario, problem.ops, problem.grid, config.m_max, **kwds
        )
    elif name in VARIANTS:
        field, report = run_lpgd(
            problem.scenario,
            problem.ops,
            problem.grid,
            config.m_max,
            variant=VARIANTS[name],
            method=name,
            **kwds
        )
    else:
        raise ValueError("Unknown method {!r}".format(name))
    return name, field, report
