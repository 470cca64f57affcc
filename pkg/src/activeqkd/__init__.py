"""Discrete-event simulator of a one-way, phase-encoded BB84 link with active
phase and polarization compensation."""
from .config import RunConfig, ConfigError, load, preset, validate
from .engine import RunTraces, simulate

__version__ = "0.1.0"

__all__ = ["RunConfig", "ConfigError", "RunTraces", "load", "preset", "simulate", "validate"]
