"""Optical channel model: loss, phase and polarization drift, double-AMZI interference."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation

# Stokes vector of the polarization that Bob's PBS passes.
PBS_AXIS = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class ChannelConfig:
    """Fibre link between Alice and Bob.

    The phase drift is an integrated Ornstein-Uhlenbeck process: the drift
    velocity wanders with correlation time ``drift_correlation_s`` and its
    scale is set so that the mean absolute drift over ``drift_window_s``
    equals ``drift_rate_deg_per_s``.  ``drift_bias_deg_per_s`` adds a
    deterministic ramp (used by the accelerated-drift profile).
    """

    length_km: float = 20.3
    loss_db: float = 5.3
    drift_rate_deg_per_s: float = 0.18
    shock_rate_per_hour: float = 0.5
    shock_magnitude_deg: float = 60.0
    pol_drift_rate: float = 2 * math.pi / 1800.0
    drift_correlation_s: float = 3600.0
    drift_window_s: float = 1000.0
    drift_bias_deg_per_s: float = 0.0
    pol_axis_wander: float = 0.02


@dataclass(frozen=True)
class InterferometerConfig:
    visibility: float = 0.9912
    interfering_fraction: float = 0.5
    reference_split: float = 0.18


@dataclass(frozen=True)
class DriftState:
    """Instantaneous channel drift.

    ``phase_offset_deg`` is never wrapped: the stretcher has a finite range,
    so the absolute accumulated phase matters.
    """

    phase_offset_deg: float = 0.0
    pol_rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    phase_velocity_deg_per_s: float = 0.0
    pol_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)


def transmittance(loss_db: float) -> float:
    if not loss_db >= 0:
        raise ValueError(f"loss_db must be >= 0, got {loss_db}")
    return 10.0 ** (-loss_db / 10.0)


def velocity_scale(cfg: ChannelConfig) -> float:
    """Stationary std (deg/s) of the drift velocity, calibrated to the mean rate."""
    if cfg.drift_rate_deg_per_s == 0:
        return 0.0
    T, tau = cfg.drift_window_s, cfg.drift_correlation_s
    x = T / tau
    # series form avoids cancellation for small x
    shape = 2.0 * (x - 1.0 + math.exp(-x)) if x > 1e-3 else x * x * (1.0 - x / 3.0)
    std_window_per_unit_v = tau * math.sqrt(shape)
    return cfg.drift_rate_deg_per_s * T / (math.sqrt(2.0 / math.pi) * std_window_per_unit_v)


def initial_drift(cfg: ChannelConfig, rng: np.random.Generator, phase_offset_deg: float = 0.0) -> DriftState:
    """Draw a drift state with the velocity from its stationary distribution."""
    v = rng.normal(0.0, velocity_scale(cfg)) if cfg.drift_rate_deg_per_s > 0 else 0.0
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return DriftState(phase_offset_deg=phase_offset_deg, phase_velocity_deg_per_s=float(v),
                      pol_axis=tuple(float(a) for a in axis))


def _ou_increment(v: float, dt: float, sigma: float, tau: float, rng: np.random.Generator) -> tuple[float, float]:
    """Exact joint update of (integrated phase increment, velocity) over dt."""
    x = dt / tau
    a = math.exp(-x)
    mean_dphi = v * tau * (1.0 - a)
    mean_v = v * a
    if sigma == 0.0:
        return mean_dphi, mean_v
    var_v = sigma**2 * (1.0 - a * a)
    if x > 1e-4:
        var_phi = sigma**2 * tau**2 * (2.0 * x - 3.0 + 4.0 * a - a * a)
    else:
        var_phi = sigma**2 * tau**2 * (2.0 / 3.0) * x**3
    cov = sigma**2 * tau * (1.0 - a) ** 2
    # 2x2 Cholesky by hand; the covariance is nearly singular for tiny dt
    l11 = math.sqrt(max(var_phi, 0.0))
    l21 = cov / l11 if l11 > 0 else 0.0
    l22 = math.sqrt(max(var_v - l21 * l21, 0.0))
    z1, z2 = rng.standard_normal(2)
    return mean_dphi + l11 * z1, mean_v + l21 * z1 + l22 * z2


def advance_drift(state: DriftState, dt: float, rng: np.random.Generator, cfg: ChannelConfig) -> DriftState:
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return state
    phase = state.phase_offset_deg
    v = state.phase_velocity_deg_per_s
    sigma = velocity_scale(cfg)
    if sigma > 0 or v != 0:
        dphi, v = _ou_increment(v, dt, sigma, cfg.drift_correlation_s, rng)
        phase += dphi
    phase += cfg.drift_bias_deg_per_s * dt

    if cfg.shock_rate_per_hour > 0:
        n_shocks = rng.poisson(cfg.shock_rate_per_hour * dt / 3600.0)
        if n_shocks:
            signs = rng.choice((-1.0, 1.0), size=n_shocks)
            phase += cfg.shock_magnitude_deg * float(signs.sum())

    rot = state.pol_rotation
    axis = state.pol_axis
    if cfg.pol_drift_rate > 0:
        ax = np.asarray(axis, dtype=float)
        if cfg.pol_axis_wander > 0:
            ax = ax + rng.normal(0.0, cfg.pol_axis_wander * math.sqrt(dt), size=3)
            ax /= np.linalg.norm(ax)
        step = Rotation.from_rotvec(ax * cfg.pol_drift_rate * dt)
        net = step * Rotation.from_rotvec(np.asarray(rot, dtype=float))
        rot = tuple(float(r) for r in net.as_rotvec())
        axis = tuple(float(a) for a in ax)

    return replace(state, phase_offset_deg=phase, phase_velocity_deg_per_s=v,
                   pol_rotation=rot, pol_axis=axis)


def interference_probabilities(residual_phase_deg, visibility: float):
    """Port probabilities (p_port0, p_port1) of Bob's AMZI for a given phase.

    Works elementwise on arrays.
    """
    if not 0.0 <= visibility <= 1.0:
        raise ValueError(f"visibility must lie in [0, 1], got {visibility}")
    c = visibility * np.cos(np.radians(residual_phase_deg))
    p0 = 0.5 * (1.0 + c)
    p1 = 1.0 - p0
    if np.ndim(p0) == 0:
        return float(p0), float(p1)
    return p0, p1


def _corrected_stokes(state: DriftState, controller_axes) -> np.ndarray:
    # controller rotation acts after the fibre rotation
    net = Rotation.from_rotvec(np.asarray(controller_axes, dtype=float)) * Rotation.from_rotvec(
        np.asarray(state.pol_rotation, dtype=float))
    return net.apply(PBS_AXIS)


def mismatch_angle(state: DriftState, controller_axes) -> float:
    """Poincare-sphere angle between the launched and the corrected state."""
    cos_theta = float(np.clip(_corrected_stokes(state, controller_axes) @ PBS_AXIS, -1.0, 1.0))
    return math.acos(cos_theta)


def polarization_coupling(state: DriftState, controller_axes) -> float:
    """Fraction of light passing Bob's polarizer: cos^2 of half the mismatch angle."""
    cos_theta = float(np.clip(_corrected_stokes(state, controller_axes) @ PBS_AXIS, -1.0, 1.0))
    return 0.5 * (1.0 + cos_theta)
