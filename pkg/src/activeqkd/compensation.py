"""Active compensation: fibre-stretcher phase lock and polarization walker.

The stretcher lock holds APD2 (reference pulses, dark output port) on its
fringe minimum.  Each integration window the voltage is dithered by
``+/- dither_amplitude_v``; after a +/- pair the controller recovers the
phase error at the dither centre from the two count rates,

    rate(phi) = mid - half * cos(phi)
    sin(e) ~ (r+ - r-) / (2 half sin d)
    cos(e) ~ (mid - (r+ + r-)/2) / (half cos d)

and applies a proportional-integral correction.  ``mid`` and ``half`` come
from a voltage scan taken when the lock is started (:func:`fit_fringe_drift`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .physics import DriftState, polarization_coupling


@dataclass(frozen=True)
class FeedbackSample:
    apd2_rate: float
    signal_rate: float
    window_s: float


@dataclass
class StretcherController:
    voltage: float = 0.0
    v_min: float = -5.0
    v_max: float = 5.0
    coeff_deg_per_volt: float = 294.0
    dither_amplitude_v: float = 0.02
    integration_window_s: float = 0.2
    reset_count: int = 0
    gain: float = 0.3
    integral_gain: float = 0.03
    sift_gate_deg: float = 25.0
    enabled: bool = True
    # fringe calibration, counts/s
    fringe_mid: float | None = None
    fringe_half: float | None = None
    # loop state
    center_v: float = 0.0
    dither_sign: int = 1
    integrator_deg: float = 0.0
    error_estimate_deg: float | None = None
    # lock verdict for the epochs since the previous verdict; None while a pair is open
    decision: bool | None = None
    _half_rate: float | None = field(default=None, repr=False)
    _resume_v: float = field(default=0.0, repr=False)

    def __post_init__(self):
        if self.coeff_deg_per_volt <= 0:
            raise ValueError("coeff_deg_per_volt must be > 0")
        if not self.v_min <= self.voltage <= self.v_max:
            raise ValueError("voltage outside [v_min, v_max]")
        self.center_v = self.voltage

    @property
    def calibrated(self) -> bool:
        return self.fringe_mid is not None and self.fringe_half is not None and self.fringe_half > 0

    def applied_voltage(self) -> float:
        if not self.enabled or self.dither_sign == 0:
            return self.center_v
        return self.center_v + self.dither_sign * self.dither_amplitude_v

    def start(self, voltage: float | None = None) -> float:
        """Arm the loop at ``voltage`` (default: current centre); returns the applied voltage."""
        if voltage is not None:
            if not self.v_min + self.dither_amplitude_v <= voltage <= self.v_max - self.dither_amplitude_v:
                voltage = 0.0
            self.center_v = voltage
        self.dither_sign = 1
        self._half_rate = None
        self.voltage = self.applied_voltage()
        return self.voltage


def phase_from_voltage(v: float, coeff_deg_per_volt: float = 294.0) -> float:
    return coeff_deg_per_volt * v


def lockin_error_deg(r_plus: float, r_minus: float, mid: float, half: float, dither_deg: float) -> float:
    """Phase error (deg) at the dither centre from the +/- count rates."""
    d = math.radians(dither_deg)
    s = (r_plus - r_minus) / (2.0 * half * math.sin(d))
    c = (mid - 0.5 * (r_plus + r_minus)) / (half * math.cos(d))
    return math.degrees(math.atan2(s, c))


def step_stretcher(ctl: StretcherController, sample: FeedbackSample) -> tuple[float, bool]:
    """Feed one integration window to the lock; returns (new voltage, reset happened).

    ``sample`` must have been measured at ``ctl.voltage``.
    """
    if sample.window_s <= 0:
        raise ValueError("feedback sample window must be > 0")
    if sample.window_s < ctl.integration_window_s * (1 - 1e-9):
        raise ValueError("feedback sample shorter than the integration window")
    ctl.decision = None
    if not ctl.enabled:
        ctl.decision = True
        return ctl.voltage, False
    if not ctl.calibrated:
        raise RuntimeError("stretcher lock used before fringe calibration")

    if ctl.dither_sign == 0:
        # first window after a reset: undithered at 0 V, discarded; then resume
        # at the voltage that gives the same phase modulo 360 degrees
        ctl.decision = False
        ctl.dither_sign = 1
        ctl.center_v = ctl._resume_v
        ctl.voltage = ctl.applied_voltage()
        return ctl.voltage, False

    if ctl._half_rate is None:
        ctl._half_rate = sample.apd2_rate
    else:
        first = ctl._half_rate
        r_plus, r_minus = (first, sample.apd2_rate) if ctl.dither_sign < 0 else (sample.apd2_rate, first)
        ctl._half_rate = None
        dither_deg = phase_from_voltage(ctl.dither_amplitude_v, ctl.coeff_deg_per_volt)
        err = lockin_error_deg(r_plus, r_minus, ctl.fringe_mid, ctl.fringe_half, dither_deg)
        ctl.error_estimate_deg = err
        ctl.decision = abs(err) <= ctl.sift_gate_deg
        correction = ctl.gain * err + ctl.integrator_deg
        ctl.integrator_deg += ctl.integral_gain * err
        ctl.center_v -= correction / ctl.coeff_deg_per_volt

    ctl.dither_sign = -ctl.dither_sign
    lo = ctl.v_min + ctl.dither_amplitude_v
    hi = ctl.v_max - ctl.dither_amplitude_v
    if not lo <= ctl.center_v <= hi:
        wrapped = (ctl.center_v * ctl.coeff_deg_per_volt + 180.0) % 360.0 - 180.0
        ctl._resume_v = wrapped / ctl.coeff_deg_per_volt
        ctl.center_v = 0.0
        ctl.voltage = 0.0
        ctl.dither_sign = 0
        ctl._half_rate = None
        ctl.reset_count += 1
        return 0.0, True
    ctl.voltage = ctl.applied_voltage()
    return ctl.voltage, False


def fit_fringe(voltages, rates, coeff_deg_per_volt: float = 294.0) -> tuple[float, float, float]:
    """Least-squares fit of rate = mid - half*cos(phase - phase_min).

    Returns (mid, half, phase_min_deg) with phase_min in (-180, 180].
    """
    phi = np.radians(coeff_deg_per_volt * np.asarray(voltages, dtype=float))
    A = np.column_stack([np.ones_like(phi), -np.cos(phi), -np.sin(phi)])
    (mid, a, b), *_ = np.linalg.lstsq(A, np.asarray(rates, dtype=float), rcond=None)
    return float(mid), float(math.hypot(a, b)), math.degrees(math.atan2(b, a))


def fit_fringe_drift(voltages, rates, times, coeff_deg_per_volt: float = 294.0,
                     max_drift_deg_per_s: float = 60.0, step_deg_per_s: float = 0.25
                     ) -> tuple[float, float, float, float]:
    """Fringe fit that also allows a linear phase drift during the scan.

    Model: rate = mid - half*cos(coeff*V + w*t - phase_min).  ``w`` is found by
    a grid search (the model is linear in the rest).  Returns
    (mid, half, phase_min_deg, w_deg_per_s); the fringe minimum at time t sits
    at coeff*V = phase_min - w*t.
    """
    theta = coeff_deg_per_volt * np.asarray(voltages, dtype=float)
    t = np.asarray(times, dtype=float)
    y = np.asarray(rates, dtype=float)
    best = None
    for w in np.arange(-max_drift_deg_per_s, max_drift_deg_per_s + 0.5 * step_deg_per_s, step_deg_per_s):
        phi = np.radians(theta + w * t)
        A = np.column_stack([np.ones_like(phi), -np.cos(phi), -np.sin(phi)])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        sse = float(np.sum((A @ coef - y) ** 2))
        if best is None or sse < best[0]:
            best = (sse, coef, float(w))
    _, (mid, a, b), w = best
    return float(mid), float(math.hypot(a, b)), math.degrees(math.atan2(b, a)), w


def lock_voltage_for(phase_min_deg: float, coeff_deg_per_volt: float = 294.0) -> float:
    """Voltage closest to 0 V that sits on the fringe minimum."""
    wrapped = (phase_min_deg + 180.0) % 360.0 - 180.0
    return wrapped / coeff_deg_per_volt


def qber_phase(delta_phi_deg: float) -> float:
    """Mean error probability for a phase error spread uniformly over ``delta_phi_deg`` (peak to peak).

    (1/D) * integral_{-D/2}^{D/2} (1 - cos x)/2 dx = 1/2 - sin(D/2)/D.
    """
    if not delta_phi_deg >= 0:
        raise ValueError(f"phase range must be >= 0, got {delta_phi_deg}")
    D = math.radians(delta_phi_deg)
    if D < 1e-3:
        return D * D / 48.0 - D**4 / 3840.0
    return 0.5 - math.sin(D / 2.0) / D


@dataclass
class PolarizationWalker:
    """Coordinate-wise hill climber on the three controller axes (radians of retardance)."""

    axes: np.ndarray = field(default_factory=lambda: np.zeros(3))
    step_size: float = 0.05
    best_rate: float | None = None
    epoch_s: float = 1.0
    enabled: bool = True
    next_axis: int = 0
    directions: np.ndarray = field(default_factory=lambda: np.ones(3))
    pending: tuple[int, float] | None = None

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        self.axes = np.asarray(self.axes, dtype=float).copy()
        self.directions = np.asarray(self.directions, dtype=float).copy()


def walk_polarization(walker: PolarizationWalker, sample: FeedbackSample) -> np.ndarray:
    """One decision epoch; ``sample.signal_rate`` was measured at ``walker.axes``.

    A trial step is kept iff the summed signal rate did not drop below the
    rate measured just before it.  After a rejected trial the next epoch
    re-measures the baseline instead of trusting a stale value.
    """
    if not walker.enabled:
        return walker.axes.copy()
    rate = sample.signal_rate
    if walker.pending is not None:
        axis, delta = walker.pending
        walker.pending = None
        if rate >= walker.best_rate:
            walker.best_rate = rate
        else:
            walker.axes[axis] -= delta
            walker.directions[axis] = -walker.directions[axis]
            walker.best_rate = None
            return walker.axes.copy()
    else:
        walker.best_rate = rate

    axis = walker.next_axis
    walker.next_axis = (axis + 1) % 3
    delta = walker.directions[axis] * walker.step_size
    walker.axes[axis] += delta
    walker.pending = (axis, delta)
    return walker.axes.copy()


def coupling_rate(state: DriftState, axes, peak_rate: float) -> float:
    """Noise-free summed signal rate for a given controller setting (test oracle helper)."""
    return peak_rate * polarization_coupling(state, axes)
