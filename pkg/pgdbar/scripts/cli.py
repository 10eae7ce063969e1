"""pgd CLI"""

import logging
import os

import click
from tqdm import tqdm

from pgdbar import __version__ as pgdbar_version
from pgdbar.errors import ConfigurationError, ReportWriteError, SolverFailure
from pgdbar.report import emit_reports
from pgdbar.runner import final_energy_error, run_case
from pgdbar.scenarios import DEFAULT_OUTPUT, METHODS, describe_cases, parse_config
from pgdbar.verify import run_checks

DEFAULT_NUM_WORKERS = None

EXIT_SOLVER_FAILURE = 2
EXIT_CONFIG_ERROR = 3

log = logging.getLogger(__name__)


def _format(value):
    return "-" if value is None else "{:.4e}".format(value)


def split_methods(ctx, param, value):
    if value is None:
        return None
    methods = [v.strip().lower() for v in value.split(",") if v.strip()]
    unknown = sorted(set(methods) - set(METHODS))
    if unknown or not methods:
        raise click.BadParameter(
            "expected a comma-separated subset of {}".format(",".join(METHODS))
        )
    return methods


num_workers_opt = click.option(
    "-j",
    "num_workers",
    type=int,
    default=DEFAULT_NUM_WORKERS,
    help="Number of workers (default: number of computer's processors, "
    "at most one per method). Use 1 to run in-process.",
)


@click.group()
@click.option("--verbose", "-v", count=True, help="Increase verbosity.")
@click.option("--quiet", "-q", is_flag=True, help="Only report errors.")
@click.version_option(version=pgdbar_version, message="%(version)s")
def main(verbose, quiet):
    """Space-time PGD reduced models of an elastic bar."""
    if quiet:
        level = logging.ERROR
    else:
        level = max(logging.DEBUG, logging.WARNING - 10 * verbose)
    logging.basicConfig(level=level)


@main.command(short_help="Run one case study.")
@click.option(
    "--case",
    "case_id",
    type=click.IntRange(1, 5),
    default=None,
    help="Case number (1-5); may also be given in the config file.",
)
@click.option(
    "--desk-scale",
    is_flag=True,
    default=False,
    help="Use the reduced discretization (56 elements, 257 steps, 24 modes).",
)
@click.option("--m-max", type=int, default=None, help="Maximum number of modes.")
@click.option("--j-max", type=int, default=None, help="Fixed-point iteration budget.")
@click.option("--tol", type=float, default=None, help="Fixed-point stagnation tolerance.")
@click.option(
    "--methods",
    callback=split_methods,
    default=None,
    metavar="LIST",
    help="Comma-separated PGD methods ({}).".format(",".join(METHODS)),
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False),
    default=None,
    help="Output directory (default: $PGD_OUTPUT_DIR or ./{}).".format(DEFAULT_OUTPUT),
)
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="YAML configuration file.",
)
@num_workers_opt
@click.option(
    "--progress-bar", "-#", default=False, is_flag=True, help="Display progress bar."
)
@click.pass_context
def run(
    ctx,
    case_id,
    desk_scale,
    m_max,
    j_max,
    tol,
    methods,
    out_dir,
    config_path,
    num_workers,
    progress_bar,
):
    """Compute references, the SVD baseline and the PGD approximations of
    one case, then write CSV reports.

    Exit status is 0 on success, 2 when a solver failed and 3 on a
    configuration error.
    """
    try:
        cfg = parse_config(
            config_path,
            case=case_id,
            desk_scale=desk_scale,
            out=out_dir,
            m_max=m_max,
            j_max=j_max,
            tol=tol,
            methods=methods,
        )
    except ConfigurationError as exc:
        click.echo("Configuration error: {}".format(exc), err=True)
        ctx.exit(EXIT_CONFIG_ERROR)

    log.debug("Methods: %r, m_max: %d", cfg.methods, cfg.m_max)

    pbar = tqdm(total=len(cfg.methods)) if progress_bar else None
    try:
        result = run_case(cfg, num_workers=num_workers, progress_bar=pbar)
    except SolverFailure as exc:
        click.echo("Solver failure: {}".format(exc), err=True)
        ctx.exit(EXIT_SOLVER_FAILURE)
    finally:
        if pbar is not None:
            pbar.close()

    try:
        emit_reports(result, cfg.output)
    except ReportWriteError as exc:
        raise click.ClickException(str(exc))

    click.echo("{:<8} {:>5} {:>12} {:>12} {:>12}".format("method", "rank", "eps_q", "eps_p", "energy"))
    for name, report in result.reports.items():
        click.echo(
            "{:<8} {:>5} {:>12} {:>12} {:>12}".format(
                name,
                report.final_rank,
                _format(report.eps_q[-1] if report.eps_q else None),
                _format(report.eps_p[-1] if report.eps_p else None),
                _format(final_energy_error(report)),
            )
        )
    click.echo("Reports written to {}".format(os.path.abspath(cfg.output)))

    if result.failed:
        for name, report in result.reports.items():
            for m, kind, message in report.failures:
                click.echo("{} failed at rank {}: {}: {}".format(name, m, kind, message), err=True)
        ctx.exit(EXIT_SOLVER_FAILURE)


@main.command(short_help="Run the acceptance checks.")
@click.option(
    "--full-scale",
    is_flag=True,
    default=False,
    help="Also run the full-size non-gating reports.",
)
@num_workers_opt
@click.pass_context
def verify(ctx, full_scale, num_workers):
    """Run the acceptance checks and print PASS or FAIL for each.

    Exit status is 0 when every gating check passes and 2 otherwise.
    """
    checks = run_checks(full_scale=full_scale, num_workers=num_workers or 1)
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        suffix = "" if check.gating else " (non-gating)"
        click.echo("{} {}{}: {}".format(status, check.name, suffix, check.detail))
    if not all(check.passed for check in checks if check.gating):
        ctx.exit(EXIT_SOLVER_FAILURE)


@main.command(short_help="List the case catalog.")
def cases():
    """List the built-in case studies at full size."""
    click.echo(
        "{:<4} {:<10} {:>10} {:>8} {:>6} {:>6} {:>8}  {}".format(
            "case", "end", "T", "elements", "steps", "update", "zeta", "description"
        )
    )
    for case_id, description, bc, horizon, elements, steps, update, zeta in describe_cases():
        click.echo(
            "{:<4} {:<10} {:>10.3e} {:>8} {:>6} {:>6} {:>8.1f}  {}".format(
                case_id, bc, horizon, elements, steps, str(update), zeta, description
            )
        )
