"""Per-user rate and harvested energy for a unit-power effective beam."""

import numpy as np

from .geometry import Channel


def as_vector(h):
    return h.vector if isinstance(h, Channel) else np.asarray(h, dtype=complex)


def received_gain(h, f_eff) -> float:
    """``|h^H f|^2``."""
    return float(abs(np.vdot(as_vector(h), f_eff)) ** 2)


def du_rate(h, f_eff, transmit_power, noise_power) -> float:
    """Achievable rate in bits/s/Hz, ``log2(1 + P_t |h^H f|^2 / sigma^2)``."""
    return float(np.log2(1.0 + transmit_power * received_gain(h, f_eff) / noise_power))


def eu_energy(h, f_eff, transmit_power) -> float:
    """Harvested power in watts under a linear harvester, ``P_t |h^H f|^2``."""
    return float(transmit_power * received_gain(h, f_eff))


def link_metrics(scenario, f_eff):
    """Rates of all DUs and energies of all EUs for ``f_eff``."""
    rates = np.array([du_rate(h, f_eff, scenario.transmit_power, scenario.noise_power)
                      for h in scenario.du_channels])
    energies = np.array([eu_energy(h, f_eff, scenario.transmit_power) for h in scenario.eu_channels])
    return rates, energies
