"""Fluid-model pricing and repositioning for ride-hailing fleets."""
from .model import (ConfigError, FluidPoint, NetworkConfig, SystemState, acceptance_probability,
                    load_config, pickup_class_probabilities, save_config)
from .instances import DEFAULT_K0, DEFAULT_ZETA, ZONES, load_instance
from .fluid import FluidProblemKind, FluidSolution, solve_fluid, verify_optimality_conditions
from .lp import APModel
from .simulator import SimConfig, SimulationRecord, run
from .policies import (NoRepositioning, StateDependentPolicy, StaticPolicy, build_policy,
                       static_probabilities)
from .experiments import ReportBundle, SuiteConfig, render_reports, run_suite

__version__ = "0.1.0"

__all__ = [
    "APModel", "ConfigError", "DEFAULT_K0", "DEFAULT_ZETA", "FluidPoint", "FluidProblemKind",
    "FluidSolution", "NetworkConfig", "NoRepositioning", "ReportBundle", "SimConfig",
    "SimulationRecord", "StateDependentPolicy", "StaticPolicy", "SuiteConfig", "SystemState", "ZONES",
    "acceptance_probability", "build_policy", "load_config", "load_instance",
    "pickup_class_probabilities", "render_reports", "run", "run_suite", "save_config", "solve_fluid",
    "static_probabilities", "verify_optimality_conditions",
]
