import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from activeqkd.compensation import (FeedbackSample, PolarizationWalker, StretcherController, coupling_rate, fit_fringe,
                                    fit_fringe_drift, lock_voltage_for, lockin_error_deg, phase_from_voltage,
                                    qber_phase, step_stretcher, walk_polarization)
from activeqkd.physics import DriftState, polarization_coupling

MID, HALF = 1000.0, 990.0


def rate(residual_deg):
    return MID - HALF * math.cos(math.radians(residual_deg))


def locked_controller(**kw):
    ctl = StretcherController(**kw)
    ctl.fringe_mid, ctl.fringe_half = MID, HALF
    ctl.start()
    return ctl


def run_loop(ctl, drift, seconds):
    """Closed loop against the noise-free fringe; ``drift(t)`` is the fibre phase."""
    w = ctl.integration_window_s
    out = []
    for k in range(int(round(seconds / w))):
        t = k * w
        res = drift(t) + ctl.coeff_deg_per_volt * ctl.voltage
        v, reset = step_stretcher(ctl, FeedbackSample(rate(res), 0.0, w))
        out.append((t, res, v, reset))
    return out


@pytest.mark.parametrize("v, deg", [(0.0, 0.0), (5.0, 1470.0), (10.0, 2940.0)])
def test_phase_from_voltage(v, deg):
    assert phase_from_voltage(v) == pytest.approx(deg)


def test_full_span_wavelengths():
    assert phase_from_voltage(10.0) / 360.0 == pytest.approx(8.17, abs=0.01)


def test_zero_window_rejected():
    ctl = locked_controller()
    with pytest.raises(ValueError):
        step_stretcher(ctl, FeedbackSample(1.0, 1.0, 0.0))


def test_uncalibrated_lock_refuses():
    ctl = StretcherController()
    with pytest.raises(RuntimeError):
        step_stretcher(ctl, FeedbackSample(1.0, 1.0, 0.2))


def test_fixed_point_at_fringe_minimum():
    ctl = locked_controller()
    hist = run_loop(ctl, lambda t: 0.0, 4.0)
    centres = {round(v - ctl.dither_amplitude_v * s, 12) for (_, _, v, _), s in zip(hist, [-1, 1] * 20)}
    assert all(abs(c) < 1e-9 for c in centres)
    assert max(abs(v) for _, _, v, _ in hist) == pytest.approx(ctl.dither_amplitude_v)


@given(st.floats(-179, 179), st.floats(0.5, 30))
def test_lockin_recovers_error(err, dither_deg):
    rp, rm = rate(err + dither_deg), rate(err - dither_deg)
    assert lockin_error_deg(rp, rm, MID, HALF, dither_deg) == pytest.approx(err, abs=1e-6)


def test_ramp_forces_reset_to_zero():
    ctl = locked_controller()
    hist = run_loop(ctl, lambda t: -30.0 * t, 120.0)
    resets = [i for i, h in enumerate(hist) if h[3]]
    assert resets and ctl.reset_count == len(resets)
    for i in resets:
        assert hist[i][2] == 0.0
        # the window after the reset is measured at exactly 0 V
        assert ctl.v_min <= hist[i - 1][2] <= ctl.v_max
    assert all(ctl.v_min <= v <= ctl.v_max for _, _, v, _ in hist)


def test_reset_window_is_discarded():
    ctl = locked_controller()
    w = ctl.integration_window_s
    verdicts, resets, residuals = [], [], []
    for k in range(600):
        res = -30.0 * k * w + ctl.coeff_deg_per_volt * ctl.voltage
        _, reset = step_stretcher(ctl, FeedbackSample(rate(res), 0.0, w))
        verdicts.append(ctl.decision)
        resets.append(reset)
        residuals.append((res + 180.0) % 360.0 - 180.0)
    first = resets.index(True)
    assert verdicts[first + 1] is False
    # after the 0 V window the loop resumes at the phase-equivalent voltage
    assert abs(residuals[first + 2]) <= 20.0


def test_static_offset_converges():
    ctl = locked_controller()
    hist = run_loop(ctl, lambda t: 500.0, 120.0)
    t = np.array([h[0] for h in hist])
    res = np.abs((np.array([h[1] for h in hist]) + 180) % 360 - 180)
    assert np.any(res[t <= 60.0] <= 10.3)
    assert np.mean(res[t >= 60.0] <= 10.3) >= 0.99


def test_step_is_deterministic():
    a, b = locked_controller(), locked_controller()
    ha = run_loop(a, lambda t: 3.0 * t, 30.0)
    hb = run_loop(b, lambda t: 3.0 * t, 30.0)
    assert ha == hb


@settings(deadline=None, max_examples=50)
@given(st.lists(st.floats(0, 5000), min_size=1, max_size=60))
def test_voltage_stays_in_range(rates):
    ctl = locked_controller()
    for r in rates:
        v, reset = step_stretcher(ctl, FeedbackSample(r, 0.0, 0.2))
        assert ctl.v_min <= v <= ctl.v_max
        if reset:
            assert v == 0.0


def test_fit_fringe_recovers_parameters():
    volts = np.arange(16) * 25.0 / 294.0
    rates = [MID - HALF * math.cos(math.radians(294 * v - 40.0)) for v in volts]
    mid, half, phase_min = fit_fringe(volts, rates)
    assert (mid, half, phase_min) == pytest.approx((MID, HALF, 40.0), abs=1e-6)


def test_fit_fringe_drift_recovers_rate():
    volts = np.arange(16) * 25.0 / 294.0
    t = (np.arange(16) + 0.5) * 0.2
    rates = [MID - HALF * math.cos(math.radians(294 * v + 20.0 * ti - 40.0)) for v, ti in zip(volts, t)]
    mid, half, phase_min, w = fit_fringe_drift(volts, rates, t)
    assert w == pytest.approx(20.0)
    assert (mid, half, phase_min) == pytest.approx((MID, HALF, 40.0), abs=1e-6)


def test_lock_voltage_wraps():
    assert lock_voltage_for(500.0) == pytest.approx(140.0 / 294.0)


@pytest.mark.parametrize("d, q", [(0.0, 0.0), (20.6, 0.0027), (720.0, 0.5)])
def test_qber_phase_examples(d, q):
    assert qber_phase(d) == pytest.approx(q, abs=1e-4)


def test_qber_phase_rejects_negative():
    with pytest.raises(ValueError):
        qber_phase(-1.0)


def _quad_oracle(d_deg):
    D = math.radians(d_deg)
    val, _ = quad(lambda x: (1 - math.cos(x)) / 2, -D / 2, D / 2)
    return val / D


@given(st.floats(1e-3, 3600))
def test_qber_phase_matches_quadrature(d):
    assert qber_phase(d) == pytest.approx(_quad_oracle(d), abs=1e-9)


@given(st.floats(0, 360), st.floats(0, 360))
def test_qber_phase_monotone(a, b):
    lo, hi = sorted((a, b))
    assert qber_phase(lo) <= qber_phase(hi) + 1e-15


@given(st.floats(1, 1e6))
def test_qber_phase_tends_to_half(d):
    assert abs(qber_phase(d) - 0.5) <= 1.0 / math.radians(d) + 1e-12


def test_qber_phase_small_angle_continuity():
    d = math.degrees(1e-3)
    assert qber_phase(d * 0.999999) == pytest.approx(qber_phase(d * 1.000001), rel=1e-5)


# -- polarization walker ------------------------------------------------------

def oracle_sample(state, walker):
    return FeedbackSample(0.0, coupling_rate(state, walker.axes, 1000.0), 1.0)


def test_walker_at_optimum_stays():
    state = DriftState()
    w = PolarizationWalker()
    for _ in range(18):
        walk_polarization(w, oracle_sample(state, w))
    # at most one trial step can be pending at any time
    assert polarization_coupling(state, w.axes) >= math.cos(w.step_size / 2) ** 2 - 1e-12
    if w.pending is None:
        assert polarization_coupling(state, w.axes) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("axis", [1, 2])
def test_walker_moves_toward_optimum(axis):
    rot = np.zeros(3)
    rot[axis] = 0.05
    state = DriftState(pol_rotation=tuple(rot))
    w = PolarizationWalker(step_size=0.05, next_axis=axis, directions=-np.ones(3))
    before = polarization_coupling(state, w.axes)
    walk_polarization(w, oracle_sample(state, w))
    walk_polarization(w, oracle_sample(state, w))
    assert w.axes[axis] == pytest.approx(-0.05)
    assert polarization_coupling(state, w.axes) > before


def test_walker_rejects_bad_step():
    rot = np.zeros(3)
    rot[1] = 0.05
    state = DriftState(pol_rotation=tuple(rot))
    w = PolarizationWalker(step_size=0.05, next_axis=1)  # first trial goes the wrong way
    walk_polarization(w, oracle_sample(state, w))
    walk_polarization(w, oracle_sample(state, w))
    assert w.axes[1] == 0.0 and w.directions[1] == -1.0


def test_walker_disabled_is_inert():
    w = PolarizationWalker(enabled=False)
    walk_polarization(w, FeedbackSample(0.0, 5.0, 1.0))
    assert np.all(w.axes == 0)


def test_walker_step_size_positive():
    with pytest.raises(ValueError):
        PolarizationWalker(step_size=0.0)


def test_walker_improves_noisy_rate():
    # frozen drift, Poisson-noisy summed rate: coupling ends higher than it started, across seeds
    state = DriftState(pol_rotation=(0.3, -0.6, 0.4))
    start = polarization_coupling(state, np.zeros(3))
    gains = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        w = PolarizationWalker(step_size=0.05)
        for _ in range(300):
            counts = rng.poisson(800.0 * polarization_coupling(state, w.axes))
            walk_polarization(w, FeedbackSample(0.0, float(counts), 1.0))
        gains.append(polarization_coupling(state, w.axes) - start)
    gains = np.array(gains)
    assert gains.mean() > 3 * gains.std() / math.sqrt(gains.size)
    assert np.mean(gains > 0) >= 0.9
