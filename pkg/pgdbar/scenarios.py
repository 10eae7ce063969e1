"""Scenario catalog and configuration"""

from dataclasses import asdict, dataclass, field, replace
import logging
import os

import numpy as np
import yaml

from pgdbar.errors import ConfigurationError, PgdError
from pgdbar.fem import (
    DirichletDisplacement,
    Free,
    MaterialModel,
    NeumannTraction,
    Scenario,
    assemble_operators,
    build_lift,
    nodal_density,
    project_initial,
    scenario_load,
)

METHODS = ("lpgd1", "lpgd2", "hpgd")
REPORT_ORDER = METHODS + ("svd",)

OUTPUT_ENV = "PGD_OUTPUT_DIR"
DEFAULT_OUTPUT = "pgd-out"
DEFAULT_PROBES = 23

DESK_SCALE = {"elements": 56, "steps": 257, "m_max": 24}

log = logging.getLogger(__name__)


class CosineRamp:
    """amplitude * (1 - cos(omega t)), switched off for t > stop"""

    def __init__(self, amplitude, omega, stop=None):
        self.amplitude = float(amplitude)
        self.omega = float(omega)
        self.stop = stop

    def _window(self, t, values):
        if self.stop is None:
            return values
        return np.where(np.asarray(t) > self.stop, 0.0, values)

    def __call__(self, t):
        return self._window(t, self.amplitude * (1.0 - np.cos(self.omega * np.asarray(t))))

    def rate(self, t):
        return self._window(
            t, self.amplitude * self.omega * np.sin(self.omega * np.asarray(t))
        )

    def accel(self, t):
        return self._window(
            t, self.amplitude * self.omega ** 2 * np.cos(self.omega * np.asarray(t))
        )

    def __repr__(self):
        return "CosineRamp({!r}, {!r}, stop={!r})".format(self.amplitude, self.omega, self.stop)


class LinearProfile:
    """u0(x) = slope * x"""

    def __init__(self, slope):
        self.slope = float(slope)

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float)

    def __repr__(self):
        return "LinearProfile({!r})".format(self.slope)


@dataclass(frozen=True)
class CaseConfig:
    """Resolved settings of one study"""

    case_id: int
    E: float = 220.0e9
    rho: object = 7000.0
    A: float = 1.0e-3
    zeta: float = 0.0
    length: float = 0.2
    elements: int = 224
    steps: int = 1025
    horizon: float = 1.15e-3
    bc: str = "neumann"
    amplitude: float = 0.0
    omega: float = 0.0
    strain: float = 0.0
    methods: tuple = METHODS
    m_max: int = 24
    j_max: int = 20
    tol: float = 1.0e-8
    update: bool = True
    series_terms: int = 200
    output: str = DEFAULT_OUTPUT
    probes: int = DEFAULT_PROBES
    desk_scale: bool = False

    def to_dict(self):
        data = asdict(self)
        data["methods"] = list(self.methods)
        if isinstance(self.rho, tuple):
            data["rho"] = list(self.rho)
        return data


@dataclass(frozen=True)
class CaseDefaults:
    description: str
    overrides: dict = field(default_factory=dict)


CATALOG = {
    1: CaseDefaults(
        "Neumann end load, no temporal update",
        dict(bc="neumann", amplitude=1.0e6, omega=4.4e4, update=False),
    ),
    2: CaseDefaults(
        "Neumann end load with temporal update",
        dict(bc="neumann", amplitude=1.0e6, omega=4.4e4, update=True),
    ),
    3: CaseDefaults(
        "Prescribed end displacement",
        dict(bc="dirichlet", amplitude=5.0e-3, omega=1.1e4, update=True),
    ),
    4: CaseDefaults(
        "Bar released from a uniform strain (analytical solution)",
        dict(bc="free", strain=0.05, horizon=0.14e-3, steps=1300, update=True),
    ),
    5: CaseDefaults(
        "Case 2 with linear viscous damping",
        dict(bc="neumann", amplitude=1.0e6, omega=4.4e4, zeta=15.0e3, update=True),
    ),
}


def case_defaults(case_id):
    """Full-scale CaseConfig of a catalog case"""
    if case_id not in CATALOG:
        raise ConfigurationError(
            "case", "unknown case {!r}, expected one of {}".format(case_id, sorted(CATALOG))
        )
    return CaseConfig(case_id=case_id, **CATALOG[case_id].overrides)


def describe_cases():
    """Rows (case id, description, bc, horizon, elements, steps, update, zeta)"""
    rows = []
    for case_id, entry in sorted(CATALOG.items()):
        cfg = case_defaults(case_id)
        rows.append(
            (
                case_id,
                entry.description,
                cfg.bc,
                cfg.horizon,
                cfg.elements,
                cfg.steps,
                cfg.update,
                cfg.zeta,
            )
        )
    return rows


def _number(value):
    return float(value)


def _integer(value):
    number = float(value)
    if not number.is_integer():
        raise ValueError("expected an integer, got {!r}".format(value))
    return int(number)


def _flag(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "yes", "on", "1"):
        return True
    if text in ("false", "no", "off", "0"):
        return False
    raise ValueError("expected a boolean, got {!r}".format(value))


def _density(value):
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return float(value)


def _methods(value):
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    methods = tuple(str(v).strip().lower() for v in value)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError("unknown methods {!r}, expected a subset of {}".format(unknown, METHODS))
    if not methods:
        raise ValueError("at least one method is required")
    return tuple(m for m in METHODS if m in methods)


SCHEMA = {
    "material": {"E": ("E", _number), "rho": ("rho", _density), "A": ("A", _number),
                 "zeta": ("zeta", _number)},
    "geometry": {"length": ("length", _number)},
    "discretization": {"elements": ("elements", _integer), "steps": ("steps", _integer)},
    "time": {"horizon": ("horizon", _number)},
    "load": {"amplitude": ("amplitude", _number), "omega": ("omega", _number)},
    "initial": {"strain": ("strain", _number)},
    "solver": {
        "methods": ("methods", _methods),
        "m_max": ("m_max", _integer),
        "j_max": ("j_max", _integer),
        "tol": ("tol", _number),
        "update": ("update", _flag),
        "series_terms": ("series_terms", _integer),
    },
    "output": {"directory": ("output", str), "probes": ("probes", _integer)},
}

OVERRIDE_COERCE = {
    "m_max": _integer,
    "j_max": _integer,
    "tol": _number,
    "methods": _methods,
}


def _load_document(path):
    try:
        with open(path, encoding="utf-8") as src:
            document = yaml.safe_load(src)
    except OSError as exc:
        raise ConfigurationError(str(path), "cannot read config: {}".format(exc))
    except yaml.YAMLError as exc:
        raise ConfigurationError(str(path), "malformed YAML: {}".format(exc))
    if document is None:
        return {}
    if not isinstance(document, dict):
        raise ConfigurationError(str(path), "config must be a mapping of sections")
    return document


def _flatten(document):
    """Map the nested sections of a config document to CaseConfig fields"""
    values = {}
    for section, content in document.items():
        if section == "case":
            continue
        if section not in SCHEMA:
            raise ConfigurationError(section, "unknown section")
        if not isinstance(content, dict):
            raise ConfigurationError(section, "section must be a mapping")
        for key, raw in content.items():
            path = "{}.{}".format(section, key)
            if key not in SCHEMA[section]:
                raise ConfigurationError(path, "unknown key")
            name, coerce = SCHEMA[section][key]
            try:
                values[name] = (path, coerce(raw))
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(path, str(exc))
    return values


def _case_id(value, path):
    try:
        return _integer(value)
    except (TypeError, ValueError):
        raise ConfigurationError(path, "case id must be an integer, got {!r}".format(value))


def validate(cfg, paths=None):
    """Check a CaseConfig; raises ConfigurationError naming the offending field"""
    paths = paths or {}

    def fail(name, message):
        raise ConfigurationError(paths.get(name, name), message)

    for name in ("E", "A", "length", "horizon", "tol"):
        if not getattr(cfg, name) > 0:
            fail(name, "must be positive")
    for name in ("elements", "steps", "j_max", "series_terms", "probes"):
        if getattr(cfg, name) < 1:
            fail(name, "must be a positive integer")
    if cfg.m_max < 0:
        fail("m_max", "must be non-negative")
    if cfg.m_max > cfg.elements:
        fail("m_max", "cannot exceed the number of DOFs ({})".format(cfg.elements))
    if cfg.zeta < 0:
        fail("zeta", "must be non-negative")
    rho = np.asarray(cfg.rho, dtype=float)
    if not np.all(rho > 0):
        fail("rho", "must be positive")
    if rho.ndim == 1 and rho.size != cfg.elements:
        fail("rho", "needs one value per element ({})".format(cfg.elements))
    if cfg.bc in ("neumann", "dirichlet") and cfg.amplitude and not cfg.omega > 0:
        fail("omega", "must be positive")
    return cfg


def parse_config(path=None, case=None, desk_scale=False, out=None, environ=None, **overrides):
    """Resolve a CaseConfig from a YAML file, command-line values and defaults.

    Parameters
    ----------
    path : str, optional
        YAML config file.
    case : int, optional
        Case id; takes precedence over the ``case`` key of the file.
    desk_scale : bool
        Use the reduced sizes of DESK_SCALE for values not given explicitly.
    out : str, optional
        Output directory; takes precedence over the environment and the file.
    environ : mapping, optional
        Environment, ``os.environ`` by default.
    overrides : dict
        m_max, j_max, tol or methods; None values are ignored.

    Returns
    -------
    CaseConfig

    Raises
    ------
    ConfigurationError

    """
    environ = os.environ if environ is None else environ
    document = _load_document(path) if path else {}
    if case is None:
        if "case" not in document:
            raise ConfigurationError("case", "no case id given")
        case = _case_id(document["case"], "case")
    else:
        case = _case_id(case, "case")

    cfg = case_defaults(case)
    forced_update = cfg.update
    values = _flatten(document)
    paths = {name: path_ for name, (path_, _) in values.items()}
    changes = {name: value for name, (_, value) in values.items()}

    if desk_scale:
        for name, value in DESK_SCALE.items():
            changes.setdefault(name, value)
    for name, value in overrides.items():
        if value is None:
            continue
        try:
            changes[name] = OVERRIDE_COERCE[name](value)
        except KeyError:
            raise ConfigurationError(name, "not a command-line setting")
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(name, str(exc))
        paths[name] = name

    if "update" in changes and changes["update"] != forced_update:
        log.warning(
            "Case %d runs with update=%r; ignoring solver.update=%r",
            case,
            forced_update,
            changes["update"],
        )
    changes["update"] = forced_update

    if out is not None:
        changes["output"] = str(out)
    elif environ.get(OUTPUT_ENV):
        changes["output"] = environ[OUTPUT_ENV]

    try:
        cfg = replace(cfg, desk_scale=bool(desk_scale), **changes)
    except (TypeError, PgdError) as exc:
        raise ConfigurationError("config", str(exc))
    log.debug("Resolved configuration: %r", cfg)
    return validate(cfg, paths)


def build_scenario(cfg):
    """Scenario of a resolved CaseConfig"""
    material = MaterialModel(cfg.E, cfg.A, cfg.rho, cfg.zeta)
    if cfg.bc == "neumann":
        bc = NeumannTraction(CosineRamp(cfg.amplitude, cfg.omega, stop=cfg.horizon / 2.0))
    elif cfg.bc == "dirichlet":
        bc = DirichletDisplacement(CosineRamp(cfg.amplitude, cfg.omega))
    else:
        bc = Free()
    u0 = LinearProfile(cfg.strain) if cfg.strain else None
    return Scenario(
        material,
        cfg.length,
        cfg.elements,
        cfg.horizon,
        cfg.steps,
        bc_right=bc,
        u0=u0,
        update_enabled=cfg.update,
        case_id=cfg.case_id,
    )


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything the solvers need for one scenario"""

    scenario: Scenario
    mesh: object
    grid: object
    ops: object
    lift: object
    U0: object
    V0: object
    P0: object
    rho_a: object


def build_problem(scenario):
    """Assemble operators, load, lift and initial vectors of a scenario"""
    mesh = scenario.mesh()
    grid = scenario.grid()
    ops = assemble_operators(mesh, scenario.material)
    ops = ops.with_load(scenario_load(mesh, scenario, grid))
    U0, V0, P0 = project_initial(mesh, scenario)
    lift = build_lift(mesh, scenario, grid)
    rho_a = nodal_density(mesh, scenario.material)
    log.info(
        "Case %r: %d elements, %d steps, bc=%s",
        scenario.case_id,
        mesh.element_count,
        grid.step_count,
        scenario.bc_right.kind,
    )
    return Problem(scenario, mesh, grid, ops, lift, U0, V0, P0, rho_a)
