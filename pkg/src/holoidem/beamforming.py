"""
Multicast beamforming for a circular holographic array.

The effective transmit beam of the hybrid architecture is ``Q P b`` with
``Q = diag(q)`` the metasurface weights, ``P`` the waveguide propagation
matrix and ``b`` the baseband digital beamformer. A fully-digital target
``f`` is built from near-orthogonality of the user channels, then
approximated in Euclidean norm by alternating between a least-squares
digital update and an element-wise analog projection.

Analog constraint sets (unit form)::

    amplitude   q in [0, 1]
    binary      q in {0, 1}
    lorentzian  q = (j + exp(j phi)) / 2

The scaled variants work on the same sets multiplied by a common ``a > 0``
and divide it out at the end (``Q / a``, ``a b``), which leaves ``Q P b``
unchanged.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import PropagationMatrix
from .metrics import as_vector, link_metrics


class BeamformingError(RuntimeError):
    pass


class EnergyInfeasible(BeamformingError):
    """EU energy floors need more than the whole power budget."""


class DegenerateAnalog(BeamformingError):
    """No element admits a useful analog weight."""


class DegenerateBeam(BeamformingError):
    """The effective beam ``Q P b`` vanished."""


class DegenerateInput(BeamformingError, ValueError):
    pass


class SingularUpdate(UserWarning):
    """``Q P`` lost column rank; the digital update fell back to ridge."""


class ControlKind(str, enum.Enum):
    AMPLITUDE_ONLY = "amplitude"
    BINARY_AMPLITUDE = "binary"
    LORENTZIAN_PHASE = "lorentzian"

    @classmethod
    def parse(cls, name: str) -> "ControlKind":
        key = str(name).strip().lower().replace("_", "").replace("-", "").replace(" ", "")
        aliases = {
            "amplitude": cls.AMPLITUDE_ONLY, "amplitudeonly": cls.AMPLITUDE_ONLY,
            "binary": cls.BINARY_AMPLITUDE, "binaryamplitude": cls.BINARY_AMPLITUDE, "01": cls.BINARY_AMPLITUDE,
            "lorentzian": cls.LORENTZIAN_PHASE, "lorentzianphase": cls.LORENTZIAN_PHASE, "phase": cls.LORENTZIAN_PHASE,
        }
        if key not in aliases:
            raise ValueError(f"unknown control mode {name!r}")
        return aliases[key]


@dataclass(frozen=True)
class ControlMode:
    kind: ControlKind
    scaled: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", ControlKind.parse(self.kind) if not isinstance(self.kind, ControlKind) else self.kind)

    def __str__(self):
        return f"{self.kind.value}{'_scaling' if self.scaled else ''}"


@dataclass(frozen=True, eq=False)
class AnalogBeamformer:
    q: np.ndarray
    scale_a: float
    mode: ControlMode

    def constraint_violation(self) -> float:
        """Largest distance of any ``q(i)`` from the mode's set scaled by ``scale_a``."""
        a, q = self.scale_a, self.q
        kind = self.mode.kind
        if kind is ControlKind.AMPLITUDE_ONLY:
            re = q.real
            return float(np.max(np.maximum.reduce([np.abs(q.imag), -re, re - a])))
        if kind is ControlKind.BINARY_AMPLITUDE:
            return float(np.max(np.minimum(np.abs(q), np.abs(q - a))))
        return float(np.max(np.abs(np.abs(q - 0.5j * a) - 0.5 * a)))


@dataclass(frozen=True, eq=False)
class DigitalBeamformer:
    b: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.b)):
            raise DegenerateBeam("digital beamformer has non-finite entries")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Users and power budget. Channels may be :class:`Channel` objects or vectors."""

    du_channels: tuple
    eu_channels: tuple
    transmit_power: float
    noise_power: float
    energy_floor: float

    def __post_init__(self):
        object.__setattr__(self, "du_channels", tuple(self.du_channels))
        object.__setattr__(self, "eu_channels", tuple(self.eu_channels))
        if len(self.du_channels) < 1:
            raise ValueError("a scenario needs at least one DU")
        if not (self.transmit_power > 0 and self.noise_power > 0):
            raise ValueError("transmit and noise power must be positive")
        if self.energy_floor < 0:
            raise ValueError("energy floor must be non-negative")
        sizes = {as_vector(h).shape for h in self.du_channels + self.eu_channels}
        if len(sizes) != 1:
            raise ValueError(f"channels disagree in size: {sorted(sizes)}")

    @property
    def du_vectors(self):
        return [as_vector(h) for h in self.du_channels]

    @property
    def eu_vectors(self):
        return [as_vector(h) for h in self.eu_channels]


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 200
    tolerance: float = 1e-4
    global_search: bool = False
    binary_scale_rule: str = "mean"         # "mean" (mean-and-prune) or "median"
    lorentzian_scale_rule: str = "closed_form"  # or "half"
    monotone_safeguard: bool = True
    feasibility_slack_db: float = 0.5
    on_infeasible: str = "raise"            # or "saturate"


@dataclass
class SolveReport:
    min_rate: float
    per_du_rates: np.ndarray
    per_eu_energy: np.ndarray
    residual_history: list
    iterations: int
    feasible: bool
    converged: bool = True
    scale_a: float = 1.0
    rate_history: list = field(default_factory=list)
    target_min_rate: float = float("nan")
    relative_residual: float = float("nan")


# ---------------------------------------------------------------------------
# Fully-digital beams
# ---------------------------------------------------------------------------

def energy_weights(scenario: Scenario) -> np.ndarray:
    """omega_l = sqrt(E0 / (P_t (h_l^H h_l)^2)) for each EU."""
    g = np.array([np.vdot(h, h).real for h in scenario.eu_vectors])
    return np.sqrt(scenario.energy_floor / (scenario.transmit_power * g ** 2)) if g.size else g


def fd_asymptotic(scenario: Scenario, on_infeasible: str = "raise") -> np.ndarray:
    """Fully-digital beam that is max-min optimal for orthogonal channels.

    Each EU gets exactly the weight needed to harvest ``E0``; the remaining
    power is split so that all DUs see equal SNR.

    With ``on_infeasible="saturate"`` an over-demanding energy floor does not
    raise: the EU weights are shrunk to use the whole budget and the DUs get
    nothing.
    """
    du, eu = scenario.du_vectors, scenario.eu_vectors
    g_du = np.array([np.vdot(h, h).real for h in du])
    g_eu = np.array([np.vdot(h, h).real for h in eu])
    if np.any(g_du == 0) or np.any(g_eu == 0):
        raise DegenerateInput("zero channel")
    w_eu = energy_weights(scenario)
    used = float(np.sum(w_eu ** 2 * g_eu))
    if used >= 1.0:
        if on_infeasible != "saturate":
            raise EnergyInfeasible(f"EU floors need {used:.3g}x the power budget")
        w_eu = w_eu / np.sqrt(used)
        w_du = np.zeros_like(g_du)
    else:
        w_du = np.sqrt((1.0 - used) / (g_du ** 2 * np.sum(1.0 / g_du)))
    f = np.zeros_like(du[0])
    for w, h in zip(w_du, du):
        f = f + w * h
    for w, h in zip(w_eu, eu):
        f = f + w * h
    return f


def mf_baseline(scenario: Scenario) -> np.ndarray:
    """Normalized sum of all user channels."""
    s = np.sum(scenario.du_vectors + scenario.eu_vectors, axis=0)
    n = np.linalg.norm(s)
    if n == 0:
        raise DegenerateInput("user channels sum to zero")
    return s / n


# ---------------------------------------------------------------------------
# Digital update
# ---------------------------------------------------------------------------

def effective_beam(q, P, b) -> np.ndarray:
    pm = P.matrix if isinstance(P, PropagationMatrix) else P
    bv = b.b if isinstance(b, DigitalBeamformer) else b
    qv = q.q if isinstance(q, AnalogBeamformer) else q
    return qv * (pm @ bv)


def digital_ls_update(P, q, f) -> DigitalBeamformer:
    """Least-squares ``b`` minimizing ``||f - Q P b||``.

    A rank-deficient ``Q P`` triggers a :class:`SingularUpdate` warning and a
    ridge solve with weight ``1e-12 * trace(A^H A) / N_RF``.
    """
    pm = P.matrix if isinstance(P, PropagationMatrix) else np.asarray(P)
    qv = q.q if isinstance(q, AnalogBeamformer) else np.asarray(q)
    A = qv[:, None] * pm
    b, _, rank, _ = np.linalg.lstsq(A, f, rcond=None)
    if rank < A.shape[1]:
        gram = A.conj().T @ A
        tr = np.trace(gram).real
        if tr == 0:
            raise DegenerateBeam("Q P is identically zero")
        warnings.warn(f"Q P has rank {rank} < {A.shape[1]}; using ridge fallback", SingularUpdate, stacklevel=2)
        b = np.linalg.solve(gram + 1e-12 * tr / A.shape[1] * np.eye(A.shape[1]), A.conj().T @ f)
    return DigitalBeamformer(b)


def analog_target(f, P, b) -> np.ndarray:
    """x(i) = f(i) / (P(i,:) b); elements the feed cannot reach get 0."""
    pm = P.matrix if isinstance(P, PropagationMatrix) else P
    bv = b.b if isinstance(b, DigitalBeamformer) else b
    pb = pm @ bv
    x = np.zeros_like(f)
    ok = np.abs(pb) > 0
    x[ok] = f[ok] / pb[ok]
    return x


# ---------------------------------------------------------------------------
# Analog updates
# ---------------------------------------------------------------------------

def analog_amplitude(x, scaled: bool = False) -> AnalogBeamformer:
    re = np.asarray(x).real
    mode = ControlMode(ControlKind.AMPLITUDE_ONLY, scaled)
    if not np.any(re > 0):
        raise DegenerateAnalog("no element with positive real part")
    if scaled:
        q = np.maximum(re, 0.0)
        return AnalogBeamformer(q.astype(complex), float(q.max()), mode)
    return AnalogBeamformer(np.clip(re, 0.0, 1.0).astype(complex), 1.0, mode)


def binary_scale_mean(x) -> float:
    """Scaling for binary amplitude: mean of the active set, pruned to a fixed point.

    Start from all elements with positive real part, set ``a`` to their mean
    real part, drop those below ``a / 2``, repeat until nothing is dropped.
    """
    return _binary_scale(x, np.mean)


def binary_scale_median(x) -> float:
    """Same pruning loop with the median, the minimizer of the absolute error."""
    return _binary_scale(x, np.median)


def _binary_scale(x, center) -> float:
    active = np.asarray(x).real
    active = active[active > 0]
    if active.size == 0:
        raise DegenerateAnalog("no element with positive real part")
    while True:
        a = float(center(active))
        keep = active >= a / 2
        if keep.all():
            return a
        active = active[keep]


def binary_objective(x, a) -> float:
    """Sum over elements of the distance from ``x(i)`` to the nearer of ``{0, a}``."""
    x = np.asarray(x)
    return float(np.sum(np.minimum(np.abs(x), np.abs(x - a))))


def analog_binary(x, scaled: bool = False, scale: float | None = None,
                  scale_rule: str = "mean") -> AnalogBeamformer:
    """Threshold at half the level: ``q = a`` if ``Re x > a/2`` else 0 (ties go to 0)."""
    re = np.asarray(x).real
    mode = ControlMode(ControlKind.BINARY_AMPLITUDE, scaled)
    if not scaled:
        a = 1.0
    elif scale is not None:
        a = float(scale)
    elif scale_rule == "mean":
        a = binary_scale_mean(x)
    elif scale_rule == "median":
        a = binary_scale_median(x)
    else:
        raise ValueError(f"unknown scale_rule {scale_rule!r}")
    q = np.where(re > a / 2, a, 0.0).astype(complex)
    return AnalogBeamformer(q, a, mode)


def lorentzian_objective(x, a) -> float:
    """Sum of distances from ``x(i)`` to the circle of diameter ``a`` centred at ``j a / 2``."""
    x = np.asarray(x)
    return float(np.sum(np.abs(np.abs(x - 0.5j * a) - 0.5 * a)))


def lorentzian_anchor_phase(p: complex) -> float:
    """Phase placing ``p`` on the scaled circle, ``-2 atan((Re p - Im p)/(Re p + Im p))``."""
    return float(-2.0 * np.arctan2(p.real - p.imag, p.real + p.imag))


def _largest_upper(x) -> complex:
    x = np.asarray(x)
    upper = np.flatnonzero(x.imag > 0)
    if upper.size == 0:
        raise DegenerateAnalog("no element with positive imaginary part")
    return complex(x[upper[np.argmax(np.abs(x[upper]))]])


def lorentzian_scale(x, global_search: bool = False, rule: str = "closed_form",
                     grid_points: int = 1201) -> float:
    """Common scale for the Lorentzian circle.

    ``closed_form`` fits the circle through the largest upper-half-plane
    element ``p``: ``a = |p|^2 / Im p``. ``half`` returns the modulus of
    ``p^2 / (2 Im p)``, half that value, for comparison only.
    ``global_search`` minimizes :func:`lorentzian_objective` over a log grid
    on ``[1e-3, 1e3] |p|``, polishes the best cell with a bounded scalar
    search and keeps the closed-form value if that is still lower.
    """
    p = _largest_upper(x)
    if global_search:
        a_grid = lorentzian_scale_search(x, abs(p), grid_points)
        a_cf = abs(p) ** 2 / p.imag
        return a_cf if lorentzian_objective(x, a_cf) <= lorentzian_objective(x, a_grid) else a_grid
    if rule == "closed_form":
        return abs(p) ** 2 / p.imag
    if rule == "half":
        return abs(p * p / (2.0 * p.imag))
    raise ValueError(f"unknown rule {rule!r}")


def lorentzian_scale_search(x, ref: float, grid_points: int = 1201) -> float:
    x = np.asarray(x)
    grid = ref * np.logspace(-3, 3, grid_points)
    # |x - j a/2|^2 = |x|^2 - a Im x + a^2/4, evaluated in real arithmetic
    mag2, im = np.abs(x) ** 2, x.imag
    half = 0.5 * grid[:, None]
    d = np.sqrt(np.maximum(mag2[None, :] - grid[:, None] * im[None, :] + half * half, 0.0))
    vals = np.sum(np.abs(d - half), axis=1)
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
    res = minimize_scalar(lambda a: lorentzian_objective(x, a), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * hi})
    return float(res.x) if res.fun <= vals[i] else float(grid[i])


def analog_lorentzian(x, scaled: bool = False, global_search: bool = False, scale: float | None = None,
                      rule: str = "closed_form") -> AnalogBeamformer:
    """Nearest point on the (scaled) Lorentzian circle, ``phi = arg(2x - a j)``."""
    x = np.asarray(x, dtype=complex)
    mode = ControlMode(ControlKind.LORENTZIAN_PHASE, scaled)
    if not scaled:
        a = 1.0
    elif scale is not None:
        a = float(scale)
    else:
        a = lorentzian_scale(x, global_search, rule)
    phi = np.angle(2.0 * x - 1j * a)
    q = 0.5 * a * (1j + np.exp(1j * phi))
    return AnalogBeamformer(q, a, mode)


def analog_update(x, mode: ControlMode, opts: SolverOptions, scale: float | None = None) -> AnalogBeamformer:
    kind = mode.kind
    if kind is ControlKind.AMPLITUDE_ONLY:
        return analog_amplitude(x, mode.scaled)
    if kind is ControlKind.BINARY_AMPLITUDE:
        return analog_binary(x, mode.scaled, scale, opts.binary_scale_rule)
    return analog_lorentzian(x, mode.scaled, opts.global_search, scale, opts.lorentzian_scale_rule)


def initial_analog(n: int, mode: ControlMode) -> AnalogBeamformer:
    if mode.kind is ControlKind.LORENTZIAN_PHASE:
        q = np.full(n, 0.5 * (1j + 1.0))
    else:
        q = np.ones(n, dtype=complex)
    return AnalogBeamformer(q, 1.0, mode)


# ---------------------------------------------------------------------------
# Power normalization and descaling
# ---------------------------------------------------------------------------

def normalize_digital(b: DigitalBeamformer, q: AnalogBeamformer, P) -> DigitalBeamformer:
    n = np.linalg.norm(effective_beam(q, P, b))
    if not n > 0:
        raise DegenerateBeam("effective beam is zero")
    return DigitalBeamformer(b.b / n)


def descale(q: AnalogBeamformer, b: DigitalBeamformer):
    """Return ``(Q / a, a b)`` in unit-constraint form."""
    a = q.scale_a
    if not a > 0:
        raise DegenerateAnalog("scale must be positive")
    return replace(q, q=q.q / a, scale_a=1.0), DigitalBeamformer(b.b * a)


# ---------------------------------------------------------------------------
# Alternating optimization
# ---------------------------------------------------------------------------

def _residual(f, q, P, b):
    return float(np.linalg.norm(f - effective_beam(q, P, b)))


def _shape_residual(f, g) -> float:
    """``min_c ||f - c g|| / ||f||``: residual after the best complex rescaling of ``g``."""
    c = np.vdot(g, f) / np.vdot(g, g).real
    return float(np.linalg.norm(f - c * g) / np.linalg.norm(f))


def _is_feasible(energies, floor, slack_db):
    return bool(np.all(energies >= floor * 10.0 ** (-slack_db / 10.0)))


def alternating_optimize(scenario: Scenario, P: PropagationMatrix, mode: ControlMode,
                         opts: SolverOptions | None = None, target: np.ndarray | None = None):
    """Hybrid beamformer approximating the fully-digital target.

    Each outer iteration solves the digital least squares for the current
    ``Q``, projects ``x = f / (P b)`` onto the mode's analog set, normalizes
    ``b`` to unit transmit power and evaluates the minimum DU rate. The loop
    stops once that rate moves by less than ``opts.tolerance``.

    ``residual_history`` holds ``||f - Q P b||`` after every half-update,
    measured before the power normalization (which the next least-squares
    step undoes). For the scaled binary and Lorentzian modes the fresh scale
    is kept only if it does not raise that residual over the element-wise
    update at the previous scale, unless ``opts.monotone_safeguard`` is off.

    Returns ``(analog, digital, report)`` with the analog part descaled to
    its unit constraint set and ``||Q P b|| = 1``.
    """
    opts = opts or SolverOptions()
    f = fd_asymptotic(scenario, opts.on_infeasible) if target is None else np.asarray(target, dtype=complex)
    target_rates, _ = link_metrics(scenario, f / np.linalg.norm(f))
    q = initial_analog(f.shape[0], mode)

    history: list[float] = []
    rates_hist: list[float] = []
    best = None
    prev_rate = None
    converged = False
    it = 0
    for it in range(1, opts.max_iterations + 1):
        b = digital_ls_update(P, q, f)
        history.append(_residual(f, q, P, b))

        x = analog_target(f, P, b)
        try:
            cand = analog_update(x, mode, opts)
        except DegenerateAnalog:
            cand = None
        if mode.scaled and mode.kind is not ControlKind.AMPLITUDE_ONLY and (opts.monotone_safeguard or cand is None):
            keep = analog_update(x, mode, opts, scale=q.scale_a)
            if cand is None or _residual(f, keep, P, b) < _residual(f, cand, P, b):
                cand = keep
        if cand is None:
            raise DegenerateAnalog(f"analog update failed at iteration {it}")
        q = cand
        history.append(_residual(f, q, P, b))

        try:
            b_n = normalize_digital(b, q, P)
        except DegenerateBeam:
            if best is None:
                raise
            break
        rates, _ = link_metrics(scenario, effective_beam(q, P, b_n))
        r_min = float(rates.min())
        rates_hist.append(r_min)
        if best is None or r_min > best[0]:
            best = (r_min, q, b_n)
        if prev_rate is not None and abs(r_min - prev_rate) < opts.tolerance:
            converged = True
            break
        prev_rate = r_min

    if converged:
        q_out, b_out = q, b_n
    else:
        warnings.warn("alternating optimization hit the iteration cap; returning best iterate", RuntimeWarning,
                      stacklevel=2)
        _, q_out, b_out = best
    scale = q_out.scale_a
    q_out, b_out = descale(q_out, b_out)
    f_eff = effective_beam(q_out, P, b_out)
    rates, energies = link_metrics(scenario, f_eff)
    report = SolveReport(
        min_rate=float(rates.min()),
        per_du_rates=rates,
        per_eu_energy=energies,
        residual_history=history,
        iterations=it,
        feasible=_is_feasible(energies, scenario.energy_floor, opts.feasibility_slack_db),
        converged=converged,
        scale_a=float(scale),
        rate_history=rates_hist,
        target_min_rate=float(target_rates.min()),
        relative_residual=_shape_residual(f, f_eff),
    )
    return q_out, b_out, report


def digital_report(scenario: Scenario, f: np.ndarray, slack_db: float = 0.5) -> SolveReport:
    """Report for a fully-digital beam (normalized to unit power first)."""
    f_eff = f / np.linalg.norm(f)
    rates, energies = link_metrics(scenario, f_eff)
    return SolveReport(float(rates.min()), rates, energies, [], 0,
                       _is_feasible(energies, scenario.energy_floor, slack_db))
