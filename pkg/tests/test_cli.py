import os
from unittest import mock

from click.testing import CliRunner
import pytest
import yaml

from pgdbar import __version__
from pgdbar.errors import SolverFailure
from pgdbar.scripts.cli import main
from pgdbar.verify import Check


def test_cli_help():
    runner = CliRunner()
    result = runner.invoke(main, ["--help"])
    assert result.exit_code == 0
    assert "Space-time PGD reduced models of an elastic bar." in result.output
    for command in ("run", "verify", "cases"):
        assert command in result.output


def test_cli_version():
    runner = CliRunner()
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert result.output.strip() == __version__


def test_cases():
    runner = CliRunner()
    result = runner.invoke(main, ["cases"])
    assert result.exit_code == 0
    lines = result.output.strip().splitlines()
    assert len(lines) == 6
    assert "dirichlet" in lines[3]
    assert "Bar released from a uniform strain" in lines[4]


def test_run(tmpdir, config_file):
    out = str(tmpdir.join("reports"))
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--config", config_file, "--out", out, "-j", "1"])
    assert result.exit_code == 0
    assert "Reports written to" in result.output
    for name in ("errors.csv", "condition.csv", "energy.csv", "probes.csv", "manifest.yaml"):
        assert os.path.exists(os.path.join(out, name))
    with open(os.path.join(out, "manifest.yaml"), encoding="utf-8") as src:
        manifest = yaml.safe_load(src)
    assert manifest["methods"] == ["lpgd1", "hpgd", "svd"]
    assert manifest["config"]["m_max"] == 2


def test_run_overrides(tmpdir, config_file):
    out = str(tmpdir.join("reports"))
    runner = CliRunner()
    result = runner.invoke(
        main,
        ["run", "--config", config_file, "--out", out, "-j", "1", "--m-max", "1",
         "--methods", "hpgd", "--progress-bar"],
    )
    assert result.exit_code == 0
    with open(os.path.join(out, "manifest.yaml"), encoding="utf-8") as src:
        manifest = yaml.safe_load(src)
    assert manifest["methods"] == ["hpgd", "svd"]
    assert manifest["final_ranks"]["svd"] == 1


def test_run_output_env(tmpdir, config_file):
    out = str(tmpdir.join("from-env"))
    runner = CliRunner(env={"PGD_OUTPUT_DIR": out})
    result = runner.invoke(main, ["run", "--config", config_file, "-j", "1", "--methods", "hpgd"])
    assert result.exit_code == 0
    assert os.path.exists(os.path.join(out, "errors.csv"))


def test_run_config_error(tmpdir):
    path = tmpdir.join("bad.yaml")
    path.write("case: 2\ndiscretization: {elements: 0}\n")
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--config", str(path), "--out", str(tmpdir)])
    assert result.exit_code == 3
    assert "discretization.elements" in result.output


def test_run_case_required(tmpdir):
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--out", str(tmpdir)])
    assert result.exit_code == 3


@pytest.mark.parametrize("args", [["--case", "6"], ["--case", "2", "--methods", "lpgd3"]])
def test_run_usage_errors(tmpdir, args):
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--out", str(tmpdir)] + args)
    assert result.exit_code == 2
    assert "Usage" in result.output


@mock.patch("pgdbar.scripts.cli.run_case")
def test_run_solver_failure(run_case, tmpdir):
    run_case.side_effect = SolverFailure("Step matrix is singular")
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--case", "1", "--out", str(tmpdir)])
    assert result.exit_code == 2
    assert "Step matrix is singular" in result.output


@mock.patch("pgdbar.scripts.cli.run_checks")
def test_verify(run_checks):
    run_checks.return_value = [
        Check("assembly", True, "ok", True),
        Check("energy_ordering_full_scale", False, "H-PGD 2.0, L-PGD1 1.0", False),
    ]
    runner = CliRunner()
    result = runner.invoke(main, ["verify", "--full-scale"])
    assert result.exit_code == 0
    assert "PASS assembly: ok" in result.output
    assert "FAIL energy_ordering_full_scale (non-gating)" in result.output
    run_checks.assert_called_once_with(full_scale=True, num_workers=1)


@mock.patch("pgdbar.scripts.cli.run_checks")
def test_verify_gating_failure(run_checks):
    run_checks.return_value = [Check("eckart_young", False, "case 1 hpgd m=3", True)]
    runner = CliRunner()
    result = runner.invoke(main, ["verify", "-j", "2"])
    assert result.exit_code == 2
    run_checks.assert_called_once_with(full_scale=False, num_workers=2)
