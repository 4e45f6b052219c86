"""Nonlocal LWR traffic simulation with a controlled leader and Lyapunov diagnostics."""

from __future__ import annotations

from .config import PRESETS, load_config, parse_config_text
from .diagnostics import (DiagnosticsRecord, DiagnosticsSeries, WindowParams, check_mass,
                          check_max_principle, decay_rate, exp_bound, identity_residuals,
                          lyapunov_density, lyapunov_velocity, nonlocal_argument_R, window)
from .errors import (ConfigurationError, ControlInfeasibleError, DomainError,
                     MaxPrincipleViolation, NonlocalLWRError, StepSizeError,
                     UnsupportedKernelError)
from .macro import MacroState, cfl_dt, godunov_step, nonlocal_velocities, run_macro
from .micro import MicroState, micro_init, micro_lyapunov, micro_step, micro_velocities, run_micro
from .model import (Kernel, VelocityModel, WeightTable, kernel_weights, validate_kernel,
                    velocity, velocity_inverse)
from .scenario import GridSpec, InitialProfile, ScenarioConfig

__version__ = "0.1.0"

__all__ = [
    "PRESETS", "load_config", "parse_config_text",
    "DiagnosticsRecord", "DiagnosticsSeries", "WindowParams", "check_mass",
    "check_max_principle", "decay_rate", "exp_bound", "identity_residuals",
    "lyapunov_density", "lyapunov_velocity", "nonlocal_argument_R", "window",
    "ConfigurationError", "ControlInfeasibleError", "DomainError", "MaxPrincipleViolation",
    "NonlocalLWRError", "StepSizeError", "UnsupportedKernelError",
    "MacroState", "cfl_dt", "godunov_step", "nonlocal_velocities", "run_macro",
    "MicroState", "micro_init", "micro_lyapunov", "micro_step", "micro_velocities", "run_micro",
    "Kernel", "VelocityModel", "WeightTable", "kernel_weights", "validate_kernel",
    "velocity", "velocity_inverse",
    "GridSpec", "InitialProfile", "ScenarioConfig",
]
