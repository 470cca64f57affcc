import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from activeqkd.detectors import Apd, ApdConfig, Cause, bernoulli_positions, geometric_sum, photon_click_prob

QUIET = ApdConfig(dark_prob_per_gate=0.0, afterpulse_prob=0.0)


def test_dark_only_click_probability():
    apd = Apd(ApdConfig(dark_prob_per_gate=1e-6))
    assert apd.click_probability(0.0) == pytest.approx(1e-6, rel=1e-9)


def test_saturation():
    assert Apd(ApdConfig()).click_probability(1e4) == pytest.approx(1.0, abs=1e-12)


def test_photon_click_prob_value():
    assert photon_click_prob(0.2, 0.11) == pytest.approx(1 - math.exp(-0.022), rel=1e-12)
    assert float(photon_click_prob(0.2, 0.11)) == pytest.approx(0.02176, abs=5e-6)


def test_negative_mean_rejected():
    apd = Apd(ApdConfig())
    with pytest.raises(ValueError):
        apd.click_probability(-1.0)
    with pytest.raises(ValueError):
        apd.gate(-1.0, np.random.default_rng(0))


def test_reset_clears_afterpulse_state():
    apd = Apd(ApdConfig(dark_prob_per_gate=0.0, afterpulse_prob=0.05))
    apd.force_click()
    apd.reset_afterpulse_state()
    assert apd.click_probability(0.0) == 0.0
    apd.reset_afterpulse_state()
    assert apd.click_probability(0.0) == 0.0


def test_forced_click_arms_next_gate():
    apd = Apd(ApdConfig(dark_prob_per_gate=0.0, afterpulse_prob=0.05, afterpulse_ratio=0.5))
    apd.force_click()
    assert apd.click_probability(0.0) == pytest.approx(0.05)
    apd.gate(0.0, np.random.default_rng(1))  # may afterpulse; second gate sees at least the decayed trap
    assert apd.afterpulse_prob_now() >= 0.025 - 1e-15


def test_trap_expires():
    apd = Apd(ApdConfig(dark_prob_per_gate=0.0, afterpulse_prob=0.05, afterpulse_decay_gates=3))
    apd.force_click()
    apd.clock += 3
    assert apd.afterpulse_prob_now() == 0.0


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 1e-2))
def test_click_probability_monotone(m1, m2, dark):
    lo, hi = sorted((m1, m2))
    apd = Apd(ApdConfig(dark_prob_per_gate=dark))
    assert apd.click_probability(lo) <= apd.click_probability(hi)
    quieter = Apd(ApdConfig(dark_prob_per_gate=dark / 2))
    assert quieter.click_probability(lo) <= apd.click_probability(lo)


def test_armed_state_raises_click_probability():
    cfg = ApdConfig(afterpulse_prob=0.01)
    armed, idle = Apd(cfg), Apd(cfg)
    armed.force_click()
    idle.clock = armed.clock
    assert armed.click_probability(0.1) > idle.click_probability(0.1)


def test_no_noise_no_clicks():
    apd = Apd(QUIET)
    offs, _ = apd.gate_block(1_000_000, np.empty(0, np.int64), np.random.default_rng(0))
    assert offs.size == 0


@pytest.mark.parametrize("p", [1e-6, 1e-3])
def test_dark_rate_binomial(p):
    n = 10_000_000
    apd = Apd(ApdConfig(dark_prob_per_gate=p, afterpulse_prob=0.0))
    offs, causes = apd.gate_block(n, np.empty(0, np.int64), np.random.default_rng(42))
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(offs.size - n * p) <= 3 * sigma + 1
    assert np.all(causes == Cause.DARK)


def test_afterpulses_per_click_converge():
    cfg = ApdConfig(dark_prob_per_gate=0.0, afterpulse_prob=0.05, afterpulse_decay_gates=8, afterpulse_ratio=0.5)
    apd = Apd(cfg)
    spacing = 40  # far beyond the trap window, so primaries do not interact
    n_primary = 1_000_000
    photons = np.arange(n_primary, dtype=np.int64) * spacing
    offs, causes = apd.gate_block(n_primary * spacing, photons, np.random.default_rng(5))
    per_click = np.count_nonzero(causes == Cause.AFTERPULSE) / n_primary
    assert per_click == pytest.approx(cfg.afterpulses_per_click(), rel=0.05)
    s = geometric_sum(0.05, 0.5, 8)
    assert cfg.afterpulses_per_click() == pytest.approx(s / (1 - s))


def test_gate_and_block_agree():
    # the gate-by-gate and block paths implement the same afterpulse semantics
    cfg = ApdConfig(dark_prob_per_gate=0.0, afterpulse_prob=0.1, afterpulse_decay_gates=4, afterpulse_ratio=0.5)
    rng = np.random.default_rng(11)
    n = 60_000
    apd = Apd(cfg)
    primary = after = 0
    for _ in range(n):
        ev = apd.gate(0.2, rng)
        if ev is not None:
            primary += ev.cause == Cause.PHOTON
            after += ev.cause == Cause.AFTERPULSE
    ratio_gate = after / primary

    apd2 = Apd(cfg)
    photons = bernoulli_positions(rng, 20 * n, float(photon_click_prob(0.2, cfg.efficiency)))
    _, causes = apd2.gate_block(20 * n, photons, rng)
    ratio_block = np.count_nonzero(causes == Cause.AFTERPULSE) / np.count_nonzero(causes == Cause.PHOTON)
    assert ratio_gate == pytest.approx(ratio_block, rel=0.15)


def test_block_state_carries_across_blocks():
    cfg = ApdConfig(dark_prob_per_gate=0.0, afterpulse_prob=1.0 - 1e-12, afterpulse_decay_gates=1,
                    afterpulse_ratio=0.5)
    apd = Apd(cfg)
    rng = np.random.default_rng(0)
    offs, _ = apd.gate_block(10, np.array([9]), rng)
    assert offs.tolist() == [9]
    offs, causes = apd.gate_block(10, np.empty(0, np.int64), rng)
    # a near-certain afterpulse in the first gate of the next block, which cascades on
    assert offs[0] == 0 and causes[0] == Cause.AFTERPULSE


def test_events_carry_absolute_index():
    apd = Apd(QUIET)
    offs, causes = apd.gate_block(100, np.array([3, 7]), np.random.default_rng(0))
    ev = apd.events(1000, offs, causes)
    assert [e.clock_index for e in ev] == [1003, 1007]
    assert all(e.cause == Cause.PHOTON for e in ev)


@given(st.integers(0, 5000), st.floats(0, 1))
def test_bernoulli_positions_valid(n, p):
    pos = bernoulli_positions(np.random.default_rng(0), n, p)
    assert np.all(np.diff(pos) > 0)
    assert pos.size == 0 or (pos[0] >= 0 and pos[-1] < n)
