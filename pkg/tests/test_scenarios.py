import logging
import textwrap

import numpy as np
import pytest

from pgdbar.errors import ConfigurationError
from pgdbar.scenarios import (
    CATALOG,
    DEFAULT_OUTPUT,
    OUTPUT_ENV,
    CosineRamp,
    build_problem,
    build_scenario,
    case_defaults,
    describe_cases,
    parse_config,
)


def write_config(tmpdir, text):
    path = tmpdir.join("config.yaml")
    path.write(textwrap.dedent(text))
    return str(path)


def test_case_defaults():
    cfg = case_defaults(2)
    assert (cfg.E, cfg.rho, cfg.A, cfg.length) == (220.0e9, 7000.0, 1.0e-3, 0.2)
    assert (cfg.elements, cfg.steps, cfg.horizon) == (224, 1025, 1.15e-3)
    assert (cfg.amplitude, cfg.omega) == (1.0e6, 4.4e4)
    assert cfg.update
    assert cfg.m_max == 24


def test_case_released_bar():
    cfg = case_defaults(4)
    assert cfg.bc == "free"
    assert cfg.strain == 0.05
    assert (cfg.horizon, cfg.steps) == (0.14e-3, 1300)


def test_cases_differ_in_update_only():
    first, second = case_defaults(1).to_dict(), case_defaults(2).to_dict()
    differences = {k for k in first if first[k] != second[k]}
    assert differences == {"case_id", "update"}
    assert case_defaults(5).zeta == 15.0e3


def test_unknown_case():
    with pytest.raises(ConfigurationError) as excinfo:
        case_defaults(6)
    assert excinfo.value.path == "case"


def test_describe_cases():
    rows = describe_cases()
    assert [row[0] for row in rows] == sorted(CATALOG)
    assert all(len(row) == 8 for row in rows)


def test_parse_config_file(config_file):
    cfg = parse_config(config_file, environ={})
    assert cfg.case_id == 2
    assert (cfg.elements, cfg.steps) == (6, 24)
    assert (cfg.m_max, cfg.j_max) == (2, 5)
    assert cfg.methods == ("lpgd1", "hpgd")
    assert cfg.probes == 4
    assert cfg.output == DEFAULT_OUTPUT


def test_command_line_precedence(config_file):
    cfg = parse_config(config_file, case=3, m_max="4", methods="hpgd", environ={})
    assert cfg.case_id == 3
    assert cfg.m_max == 4
    assert cfg.methods == ("hpgd",)
    assert cfg.elements == 6


def test_missing_case():
    with pytest.raises(ConfigurationError) as excinfo:
        parse_config(environ={})
    assert excinfo.value.path == "case"


@pytest.mark.parametrize(
    "text,path",
    [
        ("case: 2\ndiscretization: {elements: 0}\n", "discretization.elements"),
        ("case: 2\ndiscretization: {steps: 2.5}\n", "discretization.steps"),
        ("case: 2\nmaterial: {E: -1.0}\n", "material.E"),
        ("case: 2\nmaterial: {rho: [1.0, 2.0]}\n", "material.rho"),
        ("case: 2\nsolver: {methods: [lpgd3]}\n", "solver.methods"),
        ("case: 2\nsolver: {m_max: 500}\n", "solver.m_max"),
        ("case: 2\nsolver: {update: maybe}\n", "solver.update"),
        ("case: 2\nsolver: {iterations: 3}\n", "solver.iterations"),
        ("case: 2\nplot: {dpi: 3}\n", "plot"),
        ("case: two\n", "case"),
    ],
)
def test_invalid_values(tmpdir, text, path):
    with pytest.raises(ConfigurationError) as excinfo:
        parse_config(write_config(tmpdir, text), environ={})
    assert excinfo.value.path == path
    assert str(excinfo.value).startswith(path + ":")


def test_malformed_yaml(tmpdir):
    path = write_config(tmpdir, "case: [2\n")
    with pytest.raises(ConfigurationError):
        parse_config(path, environ={})


def test_missing_file(tmpdir):
    with pytest.raises(ConfigurationError):
        parse_config(str(tmpdir.join("missing.yaml")), environ={})


def test_output_precedence(tmpdir):
    path = write_config(tmpdir, "case: 1\noutput: {directory: from-file}\n")
    assert parse_config(path, environ={}).output == "from-file"
    assert parse_config(path, environ={OUTPUT_ENV: "from-env"}).output == "from-env"
    assert parse_config(path, out="from-cli", environ={OUTPUT_ENV: "from-env"}).output == "from-cli"


def test_desk_scale():
    cfg = parse_config(case=2, desk_scale=True, environ={})
    assert (cfg.elements, cfg.steps, cfg.m_max) == (56, 257, 24)
    assert cfg.desk_scale
    cfg = parse_config(case=2, desk_scale=True, m_max=5, environ={})
    assert cfg.m_max == 5


def test_update_forced_by_case(tmpdir, caplog):
    path = write_config(tmpdir, "case: 1\nsolver: {update: true}\n")
    with caplog.at_level(logging.WARNING):
        cfg = parse_config(path, environ={})
    assert not cfg.update
    assert "ignoring solver.update" in caplog.text


def test_element_densities(tmpdir):
    path = write_config(
        tmpdir,
        """\
        case: 2
        material: {rho: [7000.0, 7000.0, 8000.0, 8000.0]}
        discretization: {elements: 4}
        solver: {m_max: 2}
        """,
    )
    cfg = parse_config(path, environ={})
    assert cfg.rho == (7000.0, 7000.0, 8000.0, 8000.0)
    assert cfg.to_dict()["rho"] == [7000.0, 7000.0, 8000.0, 8000.0]
    problem = build_problem(build_scenario(cfg))
    assert np.allclose(problem.rho_a, [7.0, 7.5, 8.0, 8.0])


def test_build_scenario_neumann():
    cfg = parse_config(case=1, desk_scale=True, environ={})
    scenario = build_scenario(cfg)
    assert scenario.bc_right.kind == "neumann"
    assert scenario.bc_right.signal.stop == pytest.approx(cfg.horizon / 2.0)
    assert not scenario.update_enabled
    problem = build_problem(scenario)
    late = problem.grid.times > cfg.horizon / 2.0
    assert not np.any(problem.ops.F_traj[:, late])
    assert problem.lift.is_zero


def test_build_scenario_dirichlet():
    scenario = build_scenario(parse_config(case=3, desk_scale=True, environ={}))
    problem = build_problem(scenario)
    assert problem.lift.constrained == (problem.ops.n_dofs - 1,)
    assert not np.any(problem.ops.F_traj)


def test_build_scenario_released():
    scenario = build_scenario(parse_config(case=4, desk_scale=True, environ={}))
    problem = build_problem(scenario)
    assert scenario.bc_right.kind == "free"
    assert problem.U0[-1] == pytest.approx(0.05 * 0.2)


def test_cosine_ramp():
    ramp = CosineRamp(2.0, np.pi, stop=0.75)
    assert ramp(0.0) == 0.0
    assert ramp(0.5) == pytest.approx(2.0)
    assert ramp.rate(0.5) == pytest.approx(2.0 * np.pi)
    assert ramp(1.0) == 0.0
