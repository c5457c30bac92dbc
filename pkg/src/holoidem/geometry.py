"""
Circular-array geometry, spherical-wave steering vectors and channels.

The array lies in the ``xoy`` plane, centred on the origin. A point is
addressed by ``(r, theta, phi)`` with ``theta`` the polar angle measured
from the ``+z`` axis and ``phi`` the azimuth measured from ``+x``.

Random draws go through :func:`derive_seed`, which maps a master seed and a
tuple of integer keys to an independent ``numpy.random.SeedSequence``
(``SeedSequence(master, spawn_key=keys)``). Sub-streams therefore depend only
on their keys, never on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .units import db_to_linear, wavelength_from_frequency

TWO_PI = 2.0 * np.pi


class OutOfValidity(ValueError):
    """Raised when an approximation is requested outside its domain."""


def derive_seed(master, *keys):
    """Deterministic sub-seed for ``(master, *keys)``."""
    if isinstance(master, np.random.SeedSequence):
        return np.random.SeedSequence(master.entropy, spawn_key=tuple(master.spawn_key) + tuple(keys))
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CircularArray:
    """N antennas evenly spaced on a ring of radius ``radius``.

    When ``radius`` is omitted the half-wavelength arc spacing
    ``R = N * wavelength / (4 pi)`` is used, so that ``2 pi R / wavelength``
    equals ``N / 2``.
    """

    n_antennas: int
    wavelength: float
    radius: float | None = None

    def __post_init__(self):
        if int(self.n_antennas) != self.n_antennas or self.n_antennas < 1:
            raise ValueError(f"n_antennas must be a positive integer, got {self.n_antennas!r}")
        if not self.wavelength > 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength!r}")
        object.__setattr__(self, "n_antennas", int(self.n_antennas))
        if self.radius is None:
            object.__setattr__(self, "radius", self.n_antennas * self.wavelength / (4.0 * np.pi))
        elif not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius!r}")

    @classmethod
    def from_frequency(cls, n_antennas, frequency_hz, radius=None):
        return cls(n_antennas, wavelength_from_frequency(frequency_hz), radius)

    @cached_property
    def antenna_angles(self) -> np.ndarray:
        """psi_n = 2 pi (n - 1) / N for n = 1..N."""
        return TWO_PI * np.arange(self.n_antennas) / self.n_antennas

    @property
    def wavenumber(self) -> float:
        return TWO_PI / self.wavelength

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def fresnel_bound(self) -> float:
        """Lower edge of the Fresnel region, 0.5 * sqrt(D^3 / wavelength)."""
        return 0.5 * np.sqrt(self.diameter ** 3 / self.wavelength)

    @property
    def rayleigh_distance(self) -> float:
        return 2.0 * self.diameter ** 2 / self.wavelength

    def positions(self) -> np.ndarray:
        """Cartesian antenna positions, shape (N, 3)."""
        psi = self.antenna_angles
        return np.stack([self.radius * np.cos(psi), self.radius * np.sin(psi), np.zeros_like(psi)], axis=1)


@dataclass(frozen=True)
class PolarPoint:
    """Position (r, theta, phi); ``phi`` is reduced to [0, 2 pi)."""

    r: float
    theta: float
    phi: float

    def __post_init__(self):
        if not np.isfinite(self.r) or not self.r > 0:
            raise ValueError(f"r must be positive, got {self.r!r}")
        if not 0.0 <= self.theta <= np.pi:
            raise ValueError(f"theta must lie in [0, pi], got {self.theta!r}")
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "phi", float(np.mod(self.phi, TWO_PI)))

    @classmethod
    def from_cartesian(cls, x, y, z):
        r = float(np.sqrt(x * x + y * y + z * z))
        return cls(r, float(np.arccos(np.clip(z / r, -1.0, 1.0))), float(np.arctan2(y, x)))

    def to_cartesian(self) -> np.ndarray:
        st = np.sin(self.theta)
        return self.r * np.array([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)])


def _check_index(array: CircularArray, n: int) -> int:
    if not 1 <= n <= array.n_antennas:
        raise IndexError(f"antenna index {n} outside 1..{array.n_antennas}")
    return n - 1


def distances(array: CircularArray, p: PolarPoint) -> np.ndarray:
    """Exact distances from ``p`` to every antenna, shape (N,)."""
    R, r = array.radius, p.r
    sq = r * r + R * R - 2.0 * r * R * np.sin(p.theta) * np.cos(p.phi - array.antenna_angles)
    return np.sqrt(np.maximum(sq, 0.0))


def exact_distance(array: CircularArray, p: PolarPoint, n: int) -> float:
    """Exact distance from ``p`` to antenna ``n`` (1-based)."""
    i = _check_index(array, n)
    R, r = array.radius, p.r
    sq = r * r + R * R - 2.0 * r * R * np.sin(p.theta) * np.cos(p.phi - array.antenna_angles[i])
    return float(np.sqrt(max(sq, 0.0)))


def fresnel_distances(array: CircularArray, p: PolarPoint) -> np.ndarray:
    R, r = array.radius, p.r
    if r <= R:
        raise OutOfValidity(f"expansion needs r > R (r={r}, R={R})")
    sc = np.sin(p.theta) * np.cos(p.phi - array.antenna_angles)
    return (r - R * sc
            + R * R / (2.0 * r) * (1.0 - sc * sc)
            - R ** 3 / (2.0 * r * r) * sc
            - R ** 4 / (8.0 * r ** 3))


def fresnel_distance(array: CircularArray, p: PolarPoint, n: int) -> float:
    """Fourth-order expansion of the distance to antenna ``n`` (1-based)."""
    i = _check_index(array, n)
    return float(fresnel_distances(array, p)[i])


def steering_vector(array: CircularArray, p: PolarPoint) -> np.ndarray:
    """Unit-norm polar-domain response, ``exp(j k (r - r_n)) / sqrt(N)``."""
    phase = array.wavenumber * (p.r - distances(array, p))
    return np.exp(1j * phase) / np.sqrt(array.n_antennas)


def steering_matrix(array: CircularArray, points: np.ndarray) -> np.ndarray:
    """Steering vectors for many points at once.

    ``points`` has shape (M, 3) holding (r, theta, phi) rows; returns (M, N).
    """
    pts = np.asarray(points, dtype=float)
    r, th, ph = pts[:, 0:1], pts[:, 1:2], pts[:, 2:3]
    R = array.radius
    d = np.sqrt(np.maximum(r * r + R * R - 2.0 * r * R * np.sin(th) * np.cos(ph - array.antenna_angles), 0.0))
    return np.exp(1j * array.wavenumber * (r - d)) / np.sqrt(array.n_antennas)


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathComponent:
    gain: complex
    anchor: PolarPoint

    def __post_init__(self):
        if not np.isfinite(self.gain):
            raise ValueError("path gain must be finite")


@dataclass(frozen=True)
class ChannelGenConfig:
    """Knobs of the path-gain model.

    LoS amplitude follows Friis, ``sqrt(Gt * Gr) * wavelength / (4 pi r)``, with
    a uniform random phase. NLoS gains are circularly-symmetric complex
    Gaussian with standard deviation ``nlos_ratio * |alpha_LoS|``; scatterers
    sit at the user's elevation, uniform (by area) in the annulus
    ``[scatter_min_range, user range]``.
    """

    tx_gain_dbi: float = 10.0
    rx_gain_dbi: float = 10.0
    nlos_ratio: float = 0.1
    scatter_min_range: float = 1.0
    scatter_max_range: float | None = None

    def los_amplitude(self, wavelength, r):
        g = float(db_to_linear(self.tx_gain_dbi + self.rx_gain_dbi))
        return np.sqrt(g) * wavelength / (4.0 * np.pi * r)


@dataclass(frozen=True, eq=False)
class Channel:
    """Multipath channel ``h`` together with the paths that produced it."""

    vector: np.ndarray
    los: PathComponent
    nlos: tuple[PathComponent, ...] = field(default_factory=tuple)

    @property
    def n_antennas(self) -> int:
        return self.vector.shape[0]

    @classmethod
    def from_paths(cls, array: CircularArray, los: PathComponent, nlos: Sequence[PathComponent] = ()):
        nlos = tuple(nlos)
        n = array.n_antennas
        h = np.sqrt(n) * los.gain * steering_vector(array, los.anchor)
        if nlos:
            scatter = np.zeros(n, dtype=complex)
            for path in nlos:
                scatter += path.gain * steering_vector(array, path.anchor)
            h = h + np.sqrt(n / len(nlos)) * scatter
        h.setflags(write=False)
        return cls(h, los, nlos)

    def recompute(self, array: CircularArray) -> np.ndarray:
        return Channel.from_paths(array, self.los, self.nlos).vector


def generate_channel(array: CircularArray, user: PolarPoint, n_paths: int,
                     config: ChannelGenConfig | None = None, seed=0) -> Channel:
    """Draw a channel with one LoS path to ``user`` and ``n_paths`` NLoS paths."""
    if n_paths < 0:
        raise ValueError("n_paths must be non-negative")
    config = config or ChannelGenConfig()
    rng = np.random.default_rng(seed)

    amp = config.los_amplitude(array.wavelength, user.r)
    los = PathComponent(complex(amp * np.exp(1j * rng.uniform(0.0, TWO_PI))), user)

    r_lo = config.scatter_min_range
    r_hi = max(config.scatter_max_range or user.r, r_lo)
    if r_lo <= array.radius:
        raise ValueError("scatter_min_range must exceed the array radius")
    nlos = []
    for _ in range(n_paths):
        g = config.nlos_ratio * amp * (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2.0)
        r = np.sqrt(rng.uniform(r_lo ** 2, r_hi ** 2))
        nlos.append(PathComponent(complex(g), PolarPoint(r, user.theta, rng.uniform(0.0, TWO_PI))))
    return Channel.from_paths(array, los, nlos)


# ---------------------------------------------------------------------------
# Waveguide feed network
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PropagationMatrix:
    matrix: np.ndarray
    gamma: float
    beta: float
    feed_angles: np.ndarray
    arc_lengths: np.ndarray

    @property
    def n_rf(self) -> int:
        return self.matrix.shape[1]


def propagation_matrix(array: CircularArray, n_rf: int, gamma: float, beta: float | None = None) -> PropagationMatrix:
    """Feed-to-antenna propagation through the ring waveguide.

    Feeds sit at ``2 pi (k - 1) / n_rf`` on the antenna ring. The path from
    feed ``n`` to antenna ``m`` has length ``R * ((psi_m - feed_n) mod 2 pi)``
    and the entry is ``exp(-gamma l) exp(j beta l)`` (attenuating for
    ``gamma > 0``). ``beta`` defaults to the free-space wavenumber.
    """
    n = array.n_antennas
    if int(n_rf) != n_rf or not 1 <= n_rf <= n:
        raise ValueError(f"n_rf must be an integer in 1..{n}, got {n_rf!r}")
    n_rf = int(n_rf)
    if beta is None:
        beta = array.wavenumber
    # integer arithmetic keeps co-located feed/antenna pairs at exactly l = 0
    m_idx = np.arange(n)[:, None]
    k_idx = np.arange(n_rf)[None, :]
    frac = np.mod(m_idx * n_rf - k_idx * n, n * n_rf) / (n * n_rf)
    arc = array.radius * TWO_PI * frac
    mat = np.exp((-gamma + 1j * beta) * arc)
    feeds = TWO_PI * np.arange(n_rf) / n_rf
    return PropagationMatrix(mat, float(gamma), float(beta), feeds, arc)
