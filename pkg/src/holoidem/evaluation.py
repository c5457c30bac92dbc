"""
Scenario construction, scheme dispatch, parameter sweeps and beam patterns.

Sweeps use common random numbers: the users and channels of trial ``t``
come from ``derive_seed(seed, t, user_index)`` and do not depend on the
sweep value, so every grid point sees the same draws and serial and
parallel runs give identical tables.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import maximum_filter

from . import beamforming as bf
from .geometry import (ChannelGenConfig, CircularArray, PolarPoint, derive_seed, generate_channel,
                       propagation_matrix, steering_matrix)
from .metrics import du_rate, eu_energy, link_metrics  # noqa: F401  (re-exported)
from .units import dbm_to_watt, wavelength_from_frequency

SCHEMES = ("fd_asy", "fd_mf", "amplitude", "amplitude_scaling", "binary", "binary_scaling",
           "phase", "phase_scaling", "phase_global")

SWEEP_VARIABLES = ("rf_chains", "transmit_power", "energy_floor", "n_antennas", "gamma")


# ---------------------------------------------------------------------------
# Scenario templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioTemplate:
    """Everything needed to draw a random IDEM scenario.

    Defaults: 800 antennas at 30 GHz, K=3 DUs at 20 m, L=2 EUs at 3 m,
    20 dBm transmit power, -94 dBm noise, -15 dBm energy floor. Powers are
    held in watts; sweep values for ``transmit_power`` and ``energy_floor``
    are watts too.
    """

    n_antennas: int = 800
    frequency_hz: float = 30e9
    radius: float | None = None
    n_du: int = 3
    n_eu: int = 2
    du_range: float = 20.0
    eu_range: float = 3.0
    transmit_power: float = dbm_to_watt(20.0)  # W
    noise_power: float = dbm_to_watt(-94.0)
    energy_floor: float = dbm_to_watt(-15.0)
    n_paths: int = 6
    channel: ChannelGenConfig = field(default_factory=ChannelGenConfig)
    n_rf: int = 4
    gamma: float = 5.0
    beta: float | None = None
    solver: bf.SolverOptions = field(default_factory=bf.SolverOptions)

    @property
    def array(self) -> CircularArray:
        return CircularArray(self.n_antennas, wavelength_from_frequency(self.frequency_hz), self.radius)

    def with_value(self, variable: str, value) -> "ScenarioTemplate":
        if variable == "rf_chains":
            return replace(self, n_rf=int(value))
        if variable == "transmit_power":
            return replace(self, transmit_power=float(value))
        if variable == "energy_floor":
            return replace(self, energy_floor=float(value))
        if variable == "n_antennas":
            return replace(self, n_antennas=int(value))
        if variable == "gamma":
            return replace(self, gamma=float(value))
        raise ValueError(f"unknown sweep variable {variable!r}")


def draw_users(template: ScenarioTemplate, seed, trial: int):
    """User positions for one trial: azimuth uniform on [0, 2 pi), theta = pi/2."""
    rng = np.random.default_rng(derive_seed(seed, trial))
    phis = rng.uniform(0.0, 2 * np.pi, template.n_du + template.n_eu)
    dus = [PolarPoint(template.du_range, np.pi / 2, p) for p in phis[:template.n_du]]
    eus = [PolarPoint(template.eu_range, np.pi / 2, p) for p in phis[template.n_du:]]
    return dus, eus


def build_scenario(template: ScenarioTemplate, seed, trial: int = 0, users=None) -> bf.Scenario:
    array = template.array
    dus, eus = users if users is not None else draw_users(template, seed, trial)
    chans = [generate_channel(array, u, template.n_paths, template.channel, derive_seed(seed, trial, i))
             for i, u in enumerate(list(dus) + list(eus))]
    return bf.Scenario(chans[:len(dus)], chans[len(dus):],
                       template.transmit_power, template.noise_power, template.energy_floor)


def scheme_mode(scheme: str) -> bf.ControlMode | None:
    table = {
        "amplitude": ("amplitude", False), "amplitude_scaling": ("amplitude", True),
        "binary": ("binary", False), "binary_scaling": ("binary", True),
        "phase": ("lorentzian", False), "phase_scaling": ("lorentzian", True),
        "phase_global": ("lorentzian", True),
    }
    if scheme in ("fd_asy", "fd_mf"):
        return None
    if scheme not in table:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    kind, scaled = table[scheme]
    return bf.ControlMode(kind, scaled)


def solve_scheme(scheme: str, scenario: bf.Scenario, template: ScenarioTemplate) -> bf.SolveReport:
    """Run one named scheme on ``scenario``."""
    opts = template.solver
    if scheme == "fd_mf":
        return bf.digital_report(scenario, bf.mf_baseline(scenario), opts.feasibility_slack_db)
    f = bf.fd_asymptotic(scenario, opts.on_infeasible)
    if scheme == "fd_asy":
        return bf.digital_report(scenario, f, opts.feasibility_slack_db)
    mode = scheme_mode(scheme)
    if scheme == "phase_global":
        opts = replace(opts, global_search=True)
    P = propagation_matrix(template.array, template.n_rf, template.gamma, template.beta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", bf.SingularUpdate)
        warnings.simplefilter("ignore", RuntimeWarning)
        _, _, report = bf.alternating_optimize(scenario, P, mode, opts, target=f)
    return report


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    variable: str
    grid: tuple
    schemes: tuple = ("fd_asy",)
    trials: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"unknown sweep variable {self.variable!r}")
        grid = tuple(self.grid)
        if not grid:
            raise ValueError("sweep grid must be non-empty")
        if list(grid) != sorted(grid):
            raise ValueError("sweep grid must be sorted")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        for s in self.schemes:
            scheme_mode(s)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "schemes", tuple(self.schemes))


@dataclass(frozen=True)
class TrialRow:
    value: float
    scheme: str
    trial: int
    min_rate: float
    min_energy: float
    feasible: bool
    error: str = ""


@dataclass(frozen=True)
class SummaryRow:
    value: float
    scheme: str
    mean_min_rate: float
    mean_min_energy: float
    feasible_fraction: float
    n_ok: int
    n_failed: int


@dataclass
class SweepResult:
    spec: SweepSpec
    summary: list
    trials: list

    def mean_rate(self, scheme: str) -> np.ndarray:
        return np.array([r.mean_min_rate for r in self.summary if r.scheme == scheme])

    def table(self):
        header = ["value", "scheme", "mean_min_rate", "mean_min_energy_w", "feasible_fraction", "n_ok", "n_failed"]
        rows = [[r.value, r.scheme, r.mean_min_rate, r.mean_min_energy, r.feasible_fraction, r.n_ok, r.n_failed]
                for r in self.summary]
        return header, rows


def _run_point(args):
    template, variable, value, schemes, seed, trial = args
    tpl = template.with_value(variable, value)
    rows = []
    try:
        scenario = build_scenario(tpl, seed, trial)
    except Exception as exc:  # recorded, never fatal
        return [TrialRow(value, s, trial, math.nan, math.nan, False, repr(exc)) for s in schemes]
    for s in schemes:
        try:
            rep = solve_scheme(s, scenario, tpl)
            e = float(rep.per_eu_energy.min()) if rep.per_eu_energy.size else math.nan
            rows.append(TrialRow(value, s, trial, rep.min_rate, e, rep.feasible))
        except Exception as exc:
            rows.append(TrialRow(value, s, trial, math.nan, math.nan, False, f"{type(exc).__name__}: {exc}"))
    return rows


def run_sweep(spec: SweepSpec, base: ScenarioTemplate | None = None, parallel: int = 1,
              progress=None) -> SweepResult:
    """Average every scheme over ``spec.trials`` draws at each grid value.

    Rows come out ordered by (grid index, scheme, trial) whatever
    ``parallel`` is. Failed solves are recorded with their error and left
    out of the means.
    """
    base = base or ScenarioTemplate()
    tasks = [(base, spec.variable, v, spec.schemes, spec.seed, t)
             for v in spec.grid for t in range(spec.trials)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            chunks = list(ex.map(_run_point, tasks))
    else:
        chunks = []
        for i, task in enumerate(tasks):
            chunks.append(_run_point(task))
            if progress:
                progress(i + 1, len(tasks))
    by_key = {}
    for chunk in chunks:
        for row in chunk:
            by_key.setdefault((row.value, row.scheme), []).append(row)
    trials, summary = [], []
    for v in spec.grid:
        for s in spec.schemes:
            rows = sorted(by_key.get((v, s), []), key=lambda r: r.trial)
            trials.extend(rows)
            ok = [r for r in rows if not r.error]
            summary.append(SummaryRow(
                v, s,
                float(np.mean([r.min_rate for r in ok])) if ok else math.nan,
                float(np.mean([r.min_energy for r in ok])) if ok else math.nan,
                float(np.mean([r.feasible for r in rows])) if rows else math.nan,
                len(ok), len(rows) - len(ok)))
    return SweepResult(spec, summary, trials)


# ---------------------------------------------------------------------------
# Beam patterns
# ---------------------------------------------------------------------------

PLANES = ("xoy", "xoz", "angular")


@dataclass(frozen=True)
class PlaneSpec:
    """Sampling plane.

    ``xoy``: axes (x, y) at height ``offset``; ``xoz``: axes (x, z) at
    ``y = offset``; ``angular``: axes (theta, phi) at range ``offset``.
    Each axis is ``(start, stop, samples)``.
    """

    plane: str
    axis1: tuple
    axis2: tuple
    offset: float = 0.0

    def __post_init__(self):
        if self.plane not in PLANES:
            raise ValueError(f"unknown plane {self.plane!r}")
        for ax in (self.axis1, self.axis2):
            if len(ax) != 3 or int(ax[2]) < 1:
                raise ValueError("axis must be (start, stop, samples) with samples >= 1")

    def samples(self):
        a1 = np.linspace(self.axis1[0], self.axis1[1], int(self.axis1[2]))
        a2 = np.linspace(self.axis2[0], self.axis2[1], int(self.axis2[2]))
        return a1, a2

    def points(self) -> np.ndarray:
        """Cartesian sample points, shape (len(axis1) * len(axis2), 3), axis1 major."""
        a1, a2 = self.samples()
        g1, g2 = np.meshgrid(a1, a2, indexing="ij")
        if self.plane == "xoy":
            xyz = np.stack([g1, g2, np.full_like(g1, self.offset)], axis=-1)
        elif self.plane == "xoz":
            xyz = np.stack([g1, np.full_like(g1, self.offset), g2], axis=-1)
        else:
            r = self.offset
            xyz = np.stack([r * np.sin(g1) * np.cos(g2), r * np.sin(g1) * np.sin(g2), r * np.cos(g1)], axis=-1)
        return xyz.reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class BeamPatternGrid:
    plane: str
    axis1_samples: np.ndarray
    axis2_samples: np.ndarray
    values: np.ndarray

    def argmax(self):
        i, j = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return self.axis1_samples[i], self.axis2_samples[j]

    def cell(self):
        d1 = np.diff(self.axis1_samples)
        d2 = np.diff(self.axis2_samples)
        return (float(d1[0]) if d1.size else 0.0, float(d2[0]) if d2.size else 0.0)

    def long_form(self):
        g1, g2 = np.meshgrid(self.axis1_samples, self.axis2_samples, indexing="ij")
        return np.column_stack([g1.ravel(), g2.ravel(), self.values.ravel()])


def cartesian_to_polar(xyz: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(xyz, axis=1)
    r = np.where(r == 0, np.finfo(float).tiny, r)
    theta = np.arccos(np.clip(xyz[:, 2] / r, -1.0, 1.0))
    phi = np.mod(np.arctan2(xyz[:, 1], xyz[:, 0]), 2 * np.pi)
    return np.column_stack([r, theta, phi])


def normalize_pattern(values: np.ndarray) -> np.ndarray:
    m = values.max()
    return values / m if m > 0 else values


def _pattern(steer, f_eff, plane: PlaneSpec, chunk: int = 4096) -> BeamPatternGrid:
    pts = plane.points()
    out = np.empty(pts.shape[0])
    for s in range(0, pts.shape[0], chunk):
        out[s:s + chunk] = np.abs(steer(pts[s:s + chunk]).conj() @ f_eff) ** 2
    a1, a2 = plane.samples()
    return BeamPatternGrid(plane.plane, a1, a2, normalize_pattern(out.reshape(a1.size, a2.size)))


def beam_pattern(array: CircularArray, f_eff, plane: PlaneSpec) -> BeamPatternGrid:
    """Channel-gain-normalized received power ``|a(p)^H f|^2`` over a plane, max-normalized.

    Dividing ``|h(p)^H f|^2`` by the LoS gain ``N |alpha(p)|^2`` leaves the
    steering-vector term, so the path loss drops out.
    """
    f_eff = np.asarray(f_eff, dtype=complex)
    return _pattern(lambda xyz: steering_matrix(array, cartesian_to_polar(xyz)), f_eff, plane)


@dataclass(frozen=True)
class LinearArray:
    """Uniform linear array along the y axis, centred on the origin (broadside = +x)."""

    n_antennas: int
    spacing: float
    wavelength: float

    @property
    def aperture(self) -> float:
        return self.n_antennas * self.spacing

    def positions(self) -> np.ndarray:
        y = (np.arange(self.n_antennas) - (self.n_antennas - 1) / 2) * self.spacing
        return np.column_stack([np.zeros_like(y), y, np.zeros_like(y)])

    def steering(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.atleast_2d(xyz)
        r = np.linalg.norm(xyz, axis=1, keepdims=True)
        d = np.linalg.norm(xyz[:, None, :] - self.positions()[None, :, :], axis=2)
        return np.exp(1j * 2 * np.pi / self.wavelength * (r - d)) / np.sqrt(self.n_antennas)


def linear_array_pattern(n_antennas: int, spacing: float, f_eff, plane: PlaneSpec,
                         wavelength: float) -> BeamPatternGrid:
    ula = LinearArray(n_antennas, spacing, wavelength)
    return _pattern(ula.steering, np.asarray(f_eff, dtype=complex), plane, chunk=1024)


def multi_focus_beam(steering_vectors, weights=None) -> np.ndarray:
    """Equal-SNR multicast beam over LoS users (no EUs), unit norm."""
    vs = [np.asarray(v) for v in steering_vectors]
    scen = bf.Scenario(vs if weights is None else [w * v for w, v in zip(weights, vs)], (), 1.0, 1.0, 0.0)
    return bf.fd_asymptotic(scen)


def local_peaks(grid: BeamPatternGrid, size: int = 3, floor: float = 0.0) -> list:
    """Grid coordinates of local maxima above ``floor``."""
    v = grid.values
    mask = (maximum_filter(v, size=size, mode="nearest") == v) & (v > floor)
    return [(grid.axis1_samples[i], grid.axis2_samples[j], v[i, j]) for i, j in zip(*np.nonzero(mask))]


def peak_offset_cells(grid: BeamPatternGrid, target) -> tuple:
    """Offset in cells between the grid argmax and ``target`` (axis1, axis2)."""
    a1, a2 = grid.argmax()
    c1, c2 = grid.cell()
    return (abs(a1 - target[0]) / c1 if c1 else 0.0, abs(a2 - target[1]) / c2 if c2 else 0.0)


def focal_extent(values_along_line: np.ndarray, coords: np.ndarray, level_db: float = -3.0) -> float:
    """Length of the contiguous region around the maximum above ``level_db``."""
    v = np.asarray(values_along_line)
    i = int(np.argmax(v))
    thr = v[i] * 10 ** (level_db / 10)
    lo = i
    while lo > 0 and v[lo - 1] >= thr:
        lo -= 1
    hi = i
    while hi < v.size - 1 and v[hi + 1] >= thr:
        hi += 1
    return float(coords[hi] - coords[lo])
