"""
Near-field resolution function of a circular array.

Three evaluators of ``|a(p1)^H a(p2)|``:

* :func:`resolution_exact` sums the N terms with exact distances;
* :func:`resolution_closed_form` uses the Bessel-series form obtained from the
  second-order distance expansion and the Jacobi-Anger identity;
* :func:`resolution_upper_bound` is the large-argument envelope
  ``sqrt(2 / (pi xi1))``.

The phase of each antenna term is expanded as
``eta1 cos x + eta2 sin x + eta3 cos 2x + eta4 sin 2x + const``. Writing the
first pair as ``xi1 sin(x + xi2)`` forces ``xi2 = atan2(eta1, eta2)``, and
likewise ``xi4 = atan2(eta3, eta4)``. The single-argument arctangent
(``convention="principal"``) is off by pi in ``xi4`` whenever ``eta4 < 0``,
which flips the sign of every odd series term. Odd terms are purely
imaginary relative to the even ones, so this conjugates the partial sum and
leaves its modulus unchanged; only the complex value depends on the choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import j0, jv

from .geometry import Channel, CircularArray, PolarPoint, steering_vector

CONVENTIONS = ("atan2", "principal")
_J_POWERS = np.array([1.0, 1j, -1.0, -1j])


class SeriesNotConverged(RuntimeError):
    """Raised when the Bessel series hits its term cap before converging."""


@dataclass(frozen=True)
class ResolutionParams:
    eta1: float
    eta2: float
    eta3: float
    eta4: float
    xi1: float
    xi2: float
    xi3: float
    xi4: float
    xi5: complex


@dataclass(frozen=True)
class BesselSeriesConfig:
    abs_tolerance: float = 1e-12
    max_terms: int | None = None  # default: 4 * (ceil(xi1) + ceil(xi3)) + 64

    def __post_init__(self):
        if not self.abs_tolerance > 0:
            raise ValueError("abs_tolerance must be positive")
        if self.max_terms is not None and self.max_terms < 1:
            raise ValueError("max_terms must be positive")


@dataclass(frozen=True)
class SeriesResult:
    value: float
    n_max: int
    converged: bool
    in_fresnel_region: bool


def resolution_exact(array: CircularArray, p1: PolarPoint, p2: PolarPoint) -> float:
    """Direct N-term evaluation of ``|a(p1)^H a(p2)|``."""
    return float(min(abs(np.vdot(steering_vector(array, p1), steering_vector(array, p2))), 1.0))


def _arctan(num, den, convention):
    if convention == "atan2":
        return math.atan2(num, den)
    if convention == "principal":
        if den == 0.0:
            return math.copysign(math.pi / 2, num) if num else 0.0
        return math.atan(num / den)
    raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")


def resolution_params(array: CircularArray, p1: PolarPoint, p2: PolarPoint,
                      convention: str = "atan2") -> ResolutionParams:
    R, lam = array.radius, array.wavelength
    s1, s2 = math.sin(p1.theta), math.sin(p2.theta)
    lin = 2.0 * math.pi * R / lam
    quad = math.pi * R * R / (2.0 * lam)
    eta1 = lin * (s2 * math.cos(p2.phi) - s1 * math.cos(p1.phi))
    eta2 = lin * (s2 * math.sin(p2.phi) - s1 * math.sin(p1.phi))
    w1, w2 = s1 * s1 / p1.r, s2 * s2 / p2.r
    eta3 = quad * (w2 * math.cos(2 * p2.phi) - w1 * math.cos(2 * p1.phi))
    eta4 = quad * (w2 * math.sin(2 * p2.phi) - w1 * math.sin(2 * p1.phi))
    const = (math.pi * R * R / lam) * (w2 / 2 - w1 / 2 + 1 / p1.r - 1 / p2.r)
    return ResolutionParams(
        eta1, eta2, eta3, eta4,
        xi1=math.hypot(eta1, eta2),
        xi2=_arctan(eta1, eta2, convention),
        xi3=math.hypot(eta3, eta4),
        xi4=_arctan(eta3, eta4, convention),
        xi5=complex(math.cos(const), math.sin(const)),
    )


def default_term_cap(params: ResolutionParams) -> int:
    return 4 * (math.ceil(params.xi1) + math.ceil(params.xi3)) + 64


def bessel_series(params: ResolutionParams, cfg: BesselSeriesConfig | None = None,
                  block: int = 64) -> tuple[complex, int, bool]:
    """Symmetric partial sum of the resolution series.

    Terms are added in pairs ``n, -n``; summation stops once three
    consecutive pairs are all below ``abs_tolerance``. Returns
    ``(sum, n_max, converged)``; the sum still carries the ``xi5`` factor.
    """
    cfg = cfg or BesselSeriesConfig()
    cap = cfg.max_terms or default_term_cap(params)
    rot = 2 * params.xi2 - params.xi4 - math.pi / 2

    def terms(n):
        return _J_POWERS[n % 4] * jv(n, params.xi3) * jv(2 * n, params.xi1) * np.exp(1j * n * rot)

    total = complex(terms(np.array([0]))[0])
    quiet = 0
    start = 1
    while start <= cap:
        n = np.arange(start, min(start + block, cap + 1))
        pos, neg = terms(n), terms(-n)
        small = np.maximum(np.abs(pos), np.abs(neg)) < cfg.abs_tolerance
        for i in range(n.size):
            total += pos[i] + neg[i]
            quiet = quiet + 1 if small[i] else 0
            if quiet >= 3:
                return params.xi5 * total, int(n[i]), True
        start = int(n[-1]) + 1
    return params.xi5 * total, cap, False


def closed_form_series(array: CircularArray, p1: PolarPoint, p2: PolarPoint,
                       cfg: BesselSeriesConfig | None = None, convention: str = "atan2") -> SeriesResult:
    """Closed-form resolution with truncation diagnostics.

    Raises
    ------
    SeriesNotConverged
        If the term cap is reached before the tail falls below tolerance.
    """
    in_region = bool(min(p1.r, p2.r) >= array.fresnel_bound)
    if p1 == p2:
        return SeriesResult(1.0, 0, True, in_region)
    params = resolution_params(array, p1, p2, convention)
    total, n_max, ok = bessel_series(params, cfg)
    if not ok:
        raise SeriesNotConverged(f"series not converged after {n_max} terms (xi1={params.xi1:.3g}, xi3={params.xi3:.3g})")
    return SeriesResult(float(min(abs(total), 1.0)), n_max, ok, in_region)


def resolution_closed_form(array: CircularArray, p1: PolarPoint, p2: PolarPoint,
                           cfg: BesselSeriesConfig | None = None, convention: str = "atan2") -> float:
    """Bessel-series resolution; see :func:`closed_form_series` for diagnostics."""
    return closed_form_series(array, p1, p2, cfg, convention).value


def resolution_upper_bound(params: ResolutionParams) -> float:
    """``sqrt(2 / (pi xi1))``; 1 when ``xi1 == 0`` where the envelope diverges."""
    if params.xi1 == 0.0:
        return 1.0
    return math.sqrt(2.0 / (math.pi * params.xi1))


def radial_argument(array: CircularArray, r1: float, r2: float, theta: float, form: str = "radius") -> float:
    """Argument of J0 for two points on the same ray.

    ``form="radius"`` gives ``pi R^2 sin^2(theta) / (2 lambda) * (1/r2 - 1/r1)``;
    ``form="count"`` substitutes ``R = N lambda / (4 pi)`` to get
    ``lambda N^2 sin^2(theta) (r1 - r2) / (32 pi r1 r2)``, which agrees with
    the first only under the default radius.
    """
    s2 = math.sin(theta) ** 2
    if form == "radius":
        R = array.radius
        return math.pi * R * R * s2 / (2.0 * array.wavelength) * (1.0 / r2 - 1.0 / r1)
    if form == "count":
        n = array.n_antennas
        return array.wavelength * n * n * s2 * (r1 - r2) / (32.0 * math.pi * r1 * r2)
    raise ValueError(f"unknown form {form!r}")


def resolution_radial(array: CircularArray, r1: float, r2: float, theta: float, phi: float = 0.0,
                      form: str = "radius") -> float:
    """Same-direction resolution ``|J0(...)|``; independent of ``phi``."""
    if not (r1 > 0 and r2 > 0):
        raise ValueError("ranges must be positive")
    return float(abs(j0(radial_argument(array, r1, r2, theta, form))))


def cross_coherence(h1, h2) -> float:
    """``|h1^H h2| / N`` for two channels (or raw vectors) of equal length."""
    v1 = h1.vector if isinstance(h1, Channel) else np.asarray(h1)
    v2 = h2.vector if isinstance(h2, Channel) else np.asarray(h2)
    if v1.shape != v2.shape:
        raise ValueError(f"dimension mismatch: {v1.shape} vs {v2.shape}")
    return float(abs(np.vdot(v1, v2)) / v1.shape[0])
