"""Near-field beam focusing and hybrid beamforming for circular holographic MIMO arrays."""

__version__ = "0.1.0"

from .beamforming import (AnalogBeamformer, ControlKind, ControlMode, DigitalBeamformer, EnergyInfeasible,
                          Scenario, SolveReport, SolverOptions, alternating_optimize, descale, fd_asymptotic,
                          mf_baseline)
from .geometry import (Channel, ChannelGenConfig, CircularArray, OutOfValidity, PathComponent, PolarPoint,
                       exact_distance, fresnel_distance, generate_channel, propagation_matrix, steering_vector)
from .metrics import du_rate, eu_energy
from .resolution import (BesselSeriesConfig, SeriesNotConverged, resolution_closed_form, resolution_exact,
                         resolution_params, resolution_radial, resolution_upper_bound)

__all__ = [
    "AnalogBeamformer", "BesselSeriesConfig", "Channel", "ChannelGenConfig", "CircularArray", "ControlKind",
    "ControlMode", "DigitalBeamformer", "EnergyInfeasible", "OutOfValidity", "PathComponent", "PolarPoint",
    "Scenario", "SeriesNotConverged", "SolveReport", "SolverOptions", "alternating_optimize", "descale",
    "du_rate", "eu_energy", "exact_distance", "fd_asymptotic", "fresnel_distance", "generate_channel",
    "mf_baseline", "propagation_matrix", "resolution_closed_form", "resolution_exact", "resolution_params",
    "resolution_radial", "resolution_upper_bound", "steering_vector",
]
