"""CSV and manifest output of a case study"""

import csv
from datetime import datetime, timezone
import logging
import os

import numpy as np
import yaml

from pgdbar import __version__
from pgdbar.errors import ReportWriteError
from pgdbar.scenarios import REPORT_ORDER

UNDEFINED = "undefined"

ERROR_COLUMNS = [
    "m",
    "method",
    "eps_q",
    "eps_p",
    "energy_err_max",
    "eps_q_frobenius",
    "eps_p_frobenius",
    "eps_q_analytical",
    "eps_p_analytical",
]

log = logging.getLogger(__name__)


def fmt(value):
    """Shortest round-trip text of a float, UNDEFINED for None"""
    if value is None:
        return UNDEFINED
    return repr(float(value))


def _write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as dst:
        writer = csv.writer(dst, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _ordered(result):
    return [(name, result.reports[name]) for name in REPORT_ORDER if name in result.reports]


def error_rows(result):
    has_analytical = result.analytical is not None
    rows = []
    for name, report in _ordered(result):
        for i, m in enumerate(report.ranks):
            if m < 1:
                continue
            analytical = [
                fmt(report.eps_q_analytical[i]) if has_analytical else "",
                fmt(report.eps_p_analytical[i]) if has_analytical else "",
            ]
            rows.append(
                [
                    m,
                    name,
                    fmt(report.eps_q[i]),
                    fmt(report.eps_p[i]),
                    fmt(report.energy_err_max[i]),
                    fmt(report.eps_q_frobenius[i]),
                    fmt(report.eps_p_frobenius[i]),
                ]
                + analytical
            )
    return rows


def condition_rows(result):
    rows = []
    for name, report in _ordered(result):
        entries = [
            (m, matrix, kappa)
            for matrix, series in report.condition.items()
            for m, kappa in series
        ]
        for m, matrix, kappa in sorted(entries, key=lambda e: (e[0], e[1])):
            rows.append([m, name, matrix, fmt(kappa)])
    return rows


def energy_rows(result):
    times = result.problem.grid.times
    series = []
    if "hpgd" in result.comparisons:
        series.append(("reference", result.comparisons["hpgd"].energy))
    if "lpgd2" in result.comparisons:
        series.append(("reference_newmark", result.comparisons["lpgd2"].energy))
    for name, report in _ordered(result):
        if name != "svd" and report.energy is not None:
            series.append((name, report.energy))
    return [[fmt(t), name, fmt(h)] for name, values in series for t, h in zip(times, values)]


def displacement_field(field):
    """Dense displacement of a final separated approximation"""
    if hasattr(field, "q_field"):
        return field.q_field.densify()
    return field.densify()


def probe_indices(n_dofs, count):
    """Up to count uniformly distributed node indices"""
    return np.unique(np.round(np.linspace(0, n_dofs - 1, min(count, n_dofs))).astype(int))


def probe_rows(result):
    problem = result.problem
    x = problem.mesh.free_coords
    times = problem.grid.times
    nodes = probe_indices(problem.ops.n_dofs, result.config.probes)
    series = [("reference", result.references["hamiltonian"].Q)]
    for name in REPORT_ORDER:
        if name != "svd" and name in result.fields:
            series.append((name, displacement_field(result.fields[name])))
    rows = []
    for name, Q in series:
        for n, t in enumerate(times):
            for i in nodes:
                rows.append([fmt(t), name, fmt(x[i]), fmt(Q[i, n])])
    return rows


def _grid_rows(x, values):
    return [[fmt(xi)] + [fmt(v) for v in row] for xi, row in zip(x, values)]


def _mode_table(field, x):
    if hasattr(field, "q_field"):
        columns = [field.q_field.spatial, field.p_field.spatial]
        prefixes = ["mu", "nu"]
    else:
        columns = [field.spatial]
        prefixes = ["mu"]
    header = ["x"]
    for prefix, block in zip(prefixes, columns):
        header.extend("{}_{}".format(prefix, k + 1) for k in range(block.shape[1]))
    values = np.hstack(columns)
    return header, _grid_rows(x, values)


def emit_reports(result, out_dir):
    """Write the report files of a CaseResult into out_dir.

    Returns the list of written file names.

    Raises
    ------
    ReportWriteError
        If the directory or a file cannot be written.

    """
    written = []
    try:
        os.makedirs(out_dir, exist_ok=True)

        def write(name, header, rows):
            _write_rows(os.path.join(out_dir, name), header, rows)
            written.append(name)
            log.debug("Wrote %s (%d rows)", name, len(rows))

        if result.reports:
            x = result.problem.mesh.free_coords
            times = result.problem.grid.times
            write("errors.csv", ERROR_COLUMNS, error_rows(result))
            write("condition.csv", ["m", "method", "matrix", "kappa"], condition_rows(result))
            write("energy.csv", ["t", "method", "H"], energy_rows(result))
            for name, report in _ordered(result):
                if report.error_field is not None:
                    write(
                        "field_error_{}.csv".format(name),
                        ["x"] + [fmt(t) for t in times],
                        _grid_rows(x, report.error_field),
                    )
                if name != "svd" and name in result.fields:
                    header, rows = _mode_table(result.fields[name], x)
                    write("modes_{}.csv".format(name), header, rows)
            write("probes.csv", ["t", "method", "x", "u"], probe_rows(result))
            failures = [
                [name, m, kind, message]
                for name, report in _ordered(result)
                for m, kind, message in report.failures
            ]
            write("failures.csv", ["method", "m", "kind", "message"], failures)

        manifest = {
            "version": __version__,
            "created": datetime.now(timezone.utc).isoformat(),
            "config": result.config.to_dict(),
            "methods": [name for name, _ in _ordered(result)],
            "final_ranks": {name: report.final_rank for name, report in _ordered(result)},
            "failures": sum(len(report.failures) for report in result.reports.values()),
            "unconverged_ranks": {
                name: report.unconverged_ranks for name, report in _ordered(result)
            },
            "events": [
                {"method": name, "m": m, "kind": kind, "message": message}
                for name, report in _ordered(result)
                for m, kind, message in report.events
            ],
            "files": list(written),
        }
        with open(os.path.join(out_dir, "manifest.yaml"), "w", encoding="utf-8") as dst:
            yaml.safe_dump(manifest, dst, sort_keys=False)
    except OSError as exc:
        raise ReportWriteError("Cannot write reports to {}: {}".format(out_dir, exc))

    log.info("Wrote %d report files to %s", len(written) + 1, out_dir)
    return written + ["manifest.yaml"]
