"""Simulation of endless polarization tracking with time-multiplexed pilot signals.

Two pilots (0 deg and 45 deg) share fiber with a probe signal in separate time
slots.  A gated receiver measures their residual intensity errors behind a
three-waveplate actuator, and a controller keeps both pilots aligned while the
link is scrambled.
"""
from .controller import ActuatorState, ControlConfig, Controller, StaticPlant, converge
from .engine import ClockFailure, RunArtifacts, simulate
from .metrics import ccdf, chirp_excursion_report, run_scenario, sphere_spots, sweep
from .scenario import ConfigError, ScenarioConfig, load_scenario, preset, save_scenario

__version__ = "0.1.0"

__all__ = [
    "ActuatorState", "ClockFailure", "ConfigError", "ControlConfig", "Controller", "RunArtifacts",
    "ScenarioConfig", "StaticPlant", "ccdf", "chirp_excursion_report", "converge", "load_scenario",
    "preset", "run_scenario", "save_scenario", "simulate", "sphere_spots", "sweep",
]
