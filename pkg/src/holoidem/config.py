"""
JSON run configuration.

Every key is optional; missing keys take the defaults of the reference
scenario. Powers are given in dBm here and converted to watts by
:func:`scenario_template` / :func:`sweep_spec`, which are the only places
the conversion happens on the way into the solvers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

from .beamforming import ControlKind, SolverOptions
from .evaluation import PLANES, SCHEMES, SWEEP_VARIABLES, PlaneSpec, ScenarioTemplate, SweepSpec
from .geometry import ChannelGenConfig
from .resolution import CONVENTIONS
from .units import dbm_to_watt


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key, e.g. ``array.n_antennas``."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class ArrayConfig:
    n_antennas: int = 800
    frequency_hz: float = 30e9
    radius: float | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    n_du: int = 3
    n_eu: int = 2
    du_range: float = 20.0
    eu_range: float = 3.0
    transmit_power_dbm: float = 20.0
    noise_power_dbm: float = -94.0
    energy_floor_dbm: float = -15.0
    n_paths: int = 6
    tx_gain_dbi: float = 10.0
    rx_gain_dbi: float = 10.0
    nlos_ratio: float = 0.1
    scatter_min_range: float = 1.0
    scatter_max_range: float | None = None


@dataclass(frozen=True)
class HardwareConfig:
    n_rf: int = 4
    gamma: float = 5.0
    beta: float | None = None
    mode: str = "lorentzian"
    scaled: bool = True
    global_search: bool = False


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-4
    max_iterations: int = 200
    binary_scale_rule: str = "mean"
    lorentzian_scale_rule: str = "closed_form"
    feasibility_slack_db: float = 0.5
    on_infeasible: str = "raise"


@dataclass(frozen=True)
class PatternConfig:
    array_type: str = "circular"
    plane: str = "xoy"
    axis1: tuple = (5.0, 15.0, 201)
    axis2: tuple = (-2.0, 2.0, 161)
    offset: float = 0.0
    focus: tuple = ((10.0, math.pi / 2, 0.0),)
    linear_antennas: int = 256
    linear_spacing: float | None = None  # default half a wavelength


@dataclass(frozen=True)
class SweepConfig:
    variable: str = "rf_chains"
    grid: tuple = (1, 2, 4, 8)
    schemes: tuple = ("fd_asy", "phase", "phase_scaling")
    trials: int = 20


@dataclass(frozen=True)
class ResolveConfig:
    kind: str = "n_sweep"
    n_values: tuple = tuple(range(100, 3300, 100))
    p1: tuple = (15.0, math.pi / 2, 0.0)
    p2: tuple = (20.0, math.pi / 6, math.pi / 3)
    pairs: tuple = ()
    pairs_file: str | None = None
    convention: str = "atan2"


@dataclass(frozen=True)
class RunConfig:
    array: ArrayConfig = field(default_factory=ArrayConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    hardware: HardwareConfig = field(default_factory=HardwareConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    pattern: PatternConfig = field(default_factory=PatternConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    resolve: ResolveConfig = field(default_factory=ResolveConfig)
    seed: int = 0


_SECTIONS = {"array": ArrayConfig, "scenario": ScenarioConfig, "hardware": HardwareConfig,
             "solver": SolverConfig, "pattern": PatternConfig, "sweep": SweepConfig, "resolve": ResolveConfig}


# ---------------------------------------------------------------------------
# Typed field readers
# ---------------------------------------------------------------------------

def _int(path, v, lo=None, hi=None):
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        else:
            raise ConfigError(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi}, got {v}")
    return v


def _float(path, v, positive=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and not v > 0:
        raise ConfigError(path, f"must be positive, got {v}")
    if nonneg and v < 0:
        raise ConfigError(path, f"must be non-negative, got {v}")
    return v


def _opt_float(path, v, **kw):
    return None if v is None else _float(path, v, **kw)


def _bool(path, v):
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true/false, got {v!r}")
    return v


def _choice(path, v, options):
    if not isinstance(v, str) or v not in options:
        raise ConfigError(path, f"expected one of {list(options)}, got {v!r}")
    return v


def _list(path, v):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(path, f"expected a list, got {v!r}")
    return v


def _point(path, v):
    v = _list(path, v)
    if len(v) != 3:
        raise ConfigError(path, "expected [r, theta, phi]")
    r = _float(f"{path}[0]", v[0], positive=True)
    th = _float(f"{path}[1]", v[1])
    if not 0.0 <= th <= math.pi:
        raise ConfigError(f"{path}[1]", "theta must lie in [0, pi]")
    return (r, th, _float(f"{path}[2]", v[2]))


def _axis(path, v):
    v = _list(path, v)
    if len(v) != 3:
        raise ConfigError(path, "expected [start, stop, samples]")
    start, stop = _float(f"{path}[0]", v[0]), _float(f"{path}[1]", v[1])
    if stop < start:
        raise ConfigError(path, "stop must not be below start")
    return (start, stop, _int(f"{path}[2]", v[2], lo=1))


def _array(path, d):
    c = ArrayConfig(
        n_antennas=_int(f"{path}.n_antennas", d.get("n_antennas", 800), lo=1),
        frequency_hz=_float(f"{path}.frequency_hz", d.get("frequency_hz", 30e9), positive=True),
        radius=_opt_float(f"{path}.radius", d.get("radius"), positive=True),
    )
    return c


def _scenario(path, d):
    dflt = ScenarioConfig()
    g = lambda k: d.get(k, getattr(dflt, k))  # noqa: E731
    c = ScenarioConfig(
        n_du=_int(f"{path}.n_du", g("n_du"), lo=1),
        n_eu=_int(f"{path}.n_eu", g("n_eu"), lo=0),
        du_range=_float(f"{path}.du_range", g("du_range"), positive=True),
        eu_range=_float(f"{path}.eu_range", g("eu_range"), positive=True),
        transmit_power_dbm=_float(f"{path}.transmit_power_dbm", g("transmit_power_dbm")),
        noise_power_dbm=_float(f"{path}.noise_power_dbm", g("noise_power_dbm")),
        energy_floor_dbm=_float(f"{path}.energy_floor_dbm", g("energy_floor_dbm")),
        n_paths=_int(f"{path}.n_paths", g("n_paths"), lo=0),
        tx_gain_dbi=_float(f"{path}.tx_gain_dbi", g("tx_gain_dbi")),
        rx_gain_dbi=_float(f"{path}.rx_gain_dbi", g("rx_gain_dbi")),
        nlos_ratio=_float(f"{path}.nlos_ratio", g("nlos_ratio"), nonneg=True),
        scatter_min_range=_float(f"{path}.scatter_min_range", g("scatter_min_range"), positive=True),
        scatter_max_range=_opt_float(f"{path}.scatter_max_range", g("scatter_max_range"), positive=True),
    )
    if c.scatter_max_range is not None and c.scatter_max_range < c.scatter_min_range:
        raise ConfigError(f"{path}.scatter_max_range", "must not be below scatter_min_range")
    return c


def _hardware(path, d):
    dflt = HardwareConfig()
    g = lambda k: d.get(k, getattr(dflt, k))  # noqa: E731
    mode = g("mode")
    try:
        mode = ControlKind.parse(mode).value if isinstance(mode, str) else mode
    except ValueError:
        pass
    return HardwareConfig(
        n_rf=_int(f"{path}.n_rf", g("n_rf"), lo=1),
        gamma=_float(f"{path}.gamma", g("gamma"), nonneg=True),
        beta=_opt_float(f"{path}.beta", g("beta")),
        mode=_choice(f"{path}.mode", mode, [k.value for k in ControlKind]),
        scaled=_bool(f"{path}.scaled", g("scaled")),
        global_search=_bool(f"{path}.global_search", g("global_search")),
    )


def _solver(path, d):
    dflt = SolverConfig()
    g = lambda k: d.get(k, getattr(dflt, k))  # noqa: E731
    return SolverConfig(
        tolerance=_float(f"{path}.tolerance", g("tolerance"), positive=True),
        max_iterations=_int(f"{path}.max_iterations", g("max_iterations"), lo=1),
        binary_scale_rule=_choice(f"{path}.binary_scale_rule", g("binary_scale_rule"), ("mean", "median")),
        lorentzian_scale_rule=_choice(f"{path}.lorentzian_scale_rule", g("lorentzian_scale_rule"),
                                      ("closed_form", "half")),
        feasibility_slack_db=_float(f"{path}.feasibility_slack_db", g("feasibility_slack_db"), nonneg=True),
        on_infeasible=_choice(f"{path}.on_infeasible", g("on_infeasible"), ("raise", "saturate")),
    )


def _pattern(path, d):
    dflt = PatternConfig()
    g = lambda k: d.get(k, getattr(dflt, k))  # noqa: E731
    focus = tuple(_point(f"{path}.focus[{i}]", p) for i, p in enumerate(_list(f"{path}.focus", g("focus"))))
    if not focus:
        raise ConfigError(f"{path}.focus", "at least one focus point is required")
    return PatternConfig(
        array_type=_choice(f"{path}.array_type", g("array_type"), ("circular", "linear")),
        plane=_choice(f"{path}.plane", g("plane"), PLANES),
        axis1=_axis(f"{path}.axis1", g("axis1")),
        axis2=_axis(f"{path}.axis2", g("axis2")),
        offset=_float(f"{path}.offset", g("offset")),
        focus=focus,
        linear_antennas=_int(f"{path}.linear_antennas", g("linear_antennas"), lo=1),
        linear_spacing=_opt_float(f"{path}.linear_spacing", g("linear_spacing"), positive=True),
    )


def _sweep(path, d):
    dflt = SweepConfig()
    g = lambda k: d.get(k, getattr(dflt, k))  # noqa: E731
    variable = _choice(f"{path}.variable", g("variable"), SWEEP_VARIABLES)
    as_int = variable in ("rf_chains", "n_antennas")
    grid = []
    for i, v in enumerate(_list(f"{path}.grid", g("grid"))):
        p = f"{path}.grid[{i}]"
        grid.append(_int(p, v, lo=1) if as_int else _float(p, v, nonneg=(variable == "gamma")))
    if not grid:
        raise ConfigError(f"{path}.grid", "must be non-empty")
    if grid != sorted(grid):
        raise ConfigError(f"{path}.grid", "must be sorted ascending")
    schemes = tuple(_choice(f"{path}.schemes[{i}]", s, SCHEMES)
                    for i, s in enumerate(_list(f"{path}.schemes", g("schemes"))))
    if not schemes:
        raise ConfigError(f"{path}.schemes", "must be non-empty")
    return SweepConfig(variable, tuple(grid), schemes, _int(f"{path}.trials", g("trials"), lo=1))


def _resolve(path, d):
    dflt = ResolveConfig()
    g = lambda k: d.get(k, getattr(dflt, k))  # noqa: E731
    pairs = []
    for i, row in enumerate(_list(f"{path}.pairs", g("pairs"))):
        row = _list(f"{path}.pairs[{i}]", row)
        if len(row) != 6:
            raise ConfigError(f"{path}.pairs[{i}]", "expected [r1, theta1, phi1, r2, theta2, phi2]")
        pairs.append(_point(f"{path}.pairs[{i}]", row[:3]) + _point(f"{path}.pairs[{i}]", row[3:]))
    pf = g("pairs_file")
    if pf is not None and not isinstance(pf, str):
        raise ConfigError(f"{path}.pairs_file", "expected a path string")
    return ResolveConfig(
        kind=_choice(f"{path}.kind", g("kind"), ("n_sweep", "pairs")),
        n_values=tuple(_int(f"{path}.n_values[{i}]", v, lo=1)
                       for i, v in enumerate(_list(f"{path}.n_values", g("n_values")))),
        p1=_point(f"{path}.p1", g("p1")),
        p2=_point(f"{path}.p2", g("p2")),
        pairs=tuple(pairs),
        pairs_file=pf,
        convention=_choice(f"{path}.convention", g("convention"), CONVENTIONS),
    )


_READERS = {"array": _array, "scenario": _scenario, "hardware": _hardware, "solver": _solver,
            "pattern": _pattern, "sweep": _sweep, "resolve": _resolve}


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON document; empty text gives the all-defaults config.

    Raises
    ------
    ConfigError
        On malformed JSON, unknown keys, type mismatches or out-of-range values.
    """
    if not text.strip():
        doc = {}
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("<document>", "top level must be an object")
    for key in doc:
        if key != "seed" and key not in _SECTIONS:
            raise ConfigError(key, "unknown key")
    sections = {}
    for name, cls in _SECTIONS.items():
        sub = doc.get(name, {})
        if not isinstance(sub, dict):
            raise ConfigError(name, "expected an object")
        known = {f.name for f in fields(cls)}
        for key in sub:
            if key not in known:
                raise ConfigError(f"{name}.{key}", "unknown key")
        sections[name] = _READERS[name](name, sub)
    seed = _int("seed", doc.get("seed", 0), lo=0, hi=2**64 - 1)
    return RunConfig(seed=seed, **sections)


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def to_dict(cfg: RunConfig) -> dict:
    return {k: _plain(v) if not isinstance(v, dict) else {kk: _plain(vv) for kk, vv in v.items()}
            for k, v in asdict(cfg).items()}


def serialize(cfg: RunConfig) -> str:
    """Canonical JSON (sorted keys) that :func:`parse_config` maps back to ``cfg``."""
    return json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Conversion to solver inputs (dBm -> W happens here)
# ---------------------------------------------------------------------------

def solver_options(cfg: RunConfig) -> SolverOptions:
    s = cfg.solver
    return SolverOptions(max_iterations=s.max_iterations, tolerance=s.tolerance,
                         global_search=cfg.hardware.global_search,
                         binary_scale_rule=s.binary_scale_rule, lorentzian_scale_rule=s.lorentzian_scale_rule,
                         feasibility_slack_db=s.feasibility_slack_db, on_infeasible=s.on_infeasible)


def scenario_template(cfg: RunConfig) -> ScenarioTemplate:
    a, s, h = cfg.array, cfg.scenario, cfg.hardware
    chan = ChannelGenConfig(tx_gain_dbi=s.tx_gain_dbi, rx_gain_dbi=s.rx_gain_dbi, nlos_ratio=s.nlos_ratio,
                            scatter_min_range=s.scatter_min_range, scatter_max_range=s.scatter_max_range)
    return ScenarioTemplate(
        n_antennas=a.n_antennas, frequency_hz=a.frequency_hz, radius=a.radius,
        n_du=s.n_du, n_eu=s.n_eu, du_range=s.du_range, eu_range=s.eu_range,
        transmit_power=float(dbm_to_watt(s.transmit_power_dbm)),
        noise_power=float(dbm_to_watt(s.noise_power_dbm)),
        energy_floor=float(dbm_to_watt(s.energy_floor_dbm)),
        n_paths=s.n_paths, channel=chan, n_rf=h.n_rf, gamma=h.gamma, beta=h.beta,
        solver=solver_options(cfg),
    )


def sweep_values(cfg: RunConfig) -> tuple:
    """Sweep grid in solver units (watts for the two power variables)."""
    sw = cfg.sweep
    if sw.variable in ("transmit_power", "energy_floor"):
        return tuple(float(dbm_to_watt(v)) for v in sw.grid)
    return sw.grid


def sweep_spec(cfg: RunConfig) -> SweepSpec:
    return SweepSpec(cfg.sweep.variable, sweep_values(cfg), cfg.sweep.schemes, cfg.sweep.trials, cfg.seed)


def plane_spec(cfg: RunConfig) -> PlaneSpec:
    p = cfg.pattern
    return PlaneSpec(p.plane, p.axis1, p.axis2, p.offset)
