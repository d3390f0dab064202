"""Simulation and calibration toolkit for one-step GHZ preparation of qutrit/ququart
qubits coupled to a single cavity mode with nonidentical couplings."""

from .calibrate import (
    CalibrationResult,
    ConditionReport,
    InfeasibleCalibration,
    Margins,
    Thresholds,
    calibrate,
    condition_report,
    feasibility_search,
    occupation_probability,
)
from .config import ConfigError, ExperimentConfig
from .evolve import PropagationError, PropagatorConfig, propagate_static, propagate_timedep
from .hamiltonians import DeviceModel, ModelError, PulseSpec, SpectatorQubit, TimeDependentHamiltonian
from .hilbert import BasisError, CompositeBasis, StateVector, build_basis, initial_product_state
from .metrics import fidelity_analytic, fidelity_numeric, fidelity_report, leakage_report
from .noise import NoiseChannel, build_channels, run_trajectories
from .protocol import CouplingOptions, Schedule, build_ghz_schedule, ideal_ghz, run_protocol

__version__ = "0.1.0"

__all__ = [
    "BasisError", "CalibrationResult", "CompositeBasis", "ConditionReport", "ConfigError", "CouplingOptions",
    "DeviceModel", "ExperimentConfig", "InfeasibleCalibration", "Margins", "ModelError", "NoiseChannel",
    "PropagationError", "PropagatorConfig", "PulseSpec", "Schedule", "SpectatorQubit", "StateVector",
    "Thresholds", "TimeDependentHamiltonian", "build_basis", "build_channels", "build_ghz_schedule", "calibrate",
    "condition_report", "feasibility_search", "fidelity_analytic", "fidelity_numeric", "fidelity_report",
    "ideal_ghz", "initial_product_state", "leakage_report", "occupation_probability", "propagate_static",
    "propagate_timedep", "run_protocol", "run_trajectories",
]
