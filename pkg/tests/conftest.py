import textwrap

import numpy as np
import pytest

from pgdbar.fem import (
    DirichletDisplacement,
    MaterialModel,
    NeumannTraction,
    Scenario,
    assemble_operators,
)
from pgdbar.metrics import Comparison, energy_trajectory
from pgdbar.scenarios import CosineRamp, LinearProfile, build_problem


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs the study cases at desk scale")


def unit_scenario(elements=8, steps=32, horizon=1.0, **kwds):
    """A bar with unit length and material"""
    material = MaterialModel(1.0, 1.0, kwds.pop("rho", 1.0), kwds.pop("zeta", 0.0))
    return Scenario(material, 1.0, elements, horizon, steps, **kwds)


@pytest.fixture()
def unit_problem():
    """Unit bar pulled at its end by a smooth force"""
    return build_problem(unit_scenario(bc_right=NeumannTraction(CosineRamp(1.0, 3.0))))


@pytest.fixture()
def dirichlet_problem():
    """Unit bar with a prescribed end displacement"""
    return build_problem(
        unit_scenario(bc_right=DirichletDisplacement(CosineRamp(0.01, 3.0)))
    )


@pytest.fixture()
def released_problem():
    """Unit bar released from a uniform strain"""
    return build_problem(unit_scenario(u0=LinearProfile(0.05), steps=64))


@pytest.fixture()
def damped_problem():
    return build_problem(
        unit_scenario(bc_right=NeumannTraction(CosineRamp(1.0, 3.0, stop=0.5)), zeta=0.3)
    )


@pytest.fixture()
def zero_problem():
    return build_problem(unit_scenario())


@pytest.fixture()
def unit_ops():
    scenario = unit_scenario()
    return assemble_operators(scenario.mesh(), scenario.material)


@pytest.fixture()
def rng():
    return np.random.default_rng(2021)


@pytest.fixture()
def config_file(tmpdir):
    """A small YAML study of case 2"""
    path = tmpdir.join("study.yaml")
    path.write(
        textwrap.dedent(
            """\
            case: 2
            discretization: {elements: 6, steps: 24}
            solver: {m_max: 2, j_max: 5, methods: [lpgd1, hpgd]}
            output: {probes: 4}
            """
        )
    )
    return str(path)


def comparison_for(problem, traj):
    """Comparison of a reference trajectory of a problem"""
    P = traj.momentum(problem.rho_a)
    if traj.kind == "hamiltonian":
        energy = energy_trajectory(traj.Q, P, problem.ops, "hamiltonian")
    else:
        energy = energy_trajectory(traj.Q, traj.companion, problem.ops, "lagrangian")
    return Comparison(traj.Q, P, energy)
