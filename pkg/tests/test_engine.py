import numpy as np
import pytest

from activeqkd import preset, simulate
from activeqkd.detectors import Cause
from activeqkd.engine import Simulation, substream, wrap_deg


def test_substreams_reproducible_and_distinct():
    a = substream(5, "drift").random(4)
    assert np.array_equal(a, substream(5, "drift").random(4))
    assert not np.array_equal(a, substream(5, "alice").random(4))
    assert not np.array_equal(a, substream(6, "drift").random(4))


def test_wrap_deg():
    assert wrap_deg([180.0, -180.0, 370.0, -10.0]).tolist() == [-180.0, -180.0, 10.0, -10.0]


def _epoch(cfg, mu, seed=0):
    sim = Simulation(cfg.replace(seed=seed))
    sim.mu_signal = mu
    rng = np.random.default_rng(seed)
    a_bases = rng.integers(0, 2, sim.n, dtype=np.uint8)
    a_bits = rng.integers(0, 2, sim.n, dtype=np.uint8)
    b_bases = rng.integers(0, 2, sim.n, dtype=np.uint8)
    return sim._signal_epoch(0.0, 0.0, 0.0, 1.0, a_bases, a_bits, b_bases), a_bases, a_bits, b_bases


def test_double_clicks_are_discarded():
    res, *_ = _epoch(preset("paper_defaults"), mu=20.0)
    assert res.double_clicks > 0
    assert res.signal_clicks == 2 * res.double_clicks + res.single_idx.size
    assert np.all(np.diff(res.single_idx) > 0)


def test_ideal_epoch_matches_alice():
    res, a_bases, a_bits, b_bases = _epoch(preset("noise_free"), mu=0.5)
    idx = res.single_idx
    assert idx.size > 0
    assert np.all(res.single_cause == Cause.PHOTON)
    match = a_bases[idx] == b_bases[idx]
    assert np.array_equal(res.single_bit[match], a_bits[idx][match])


def test_click_rate_matches_poisson():
    cfg = preset("noise_free")
    res, *_ = _epoch(cfg, mu=0.1, seed=3)
    n = Simulation(cfg).n
    p = -np.expm1(-0.1 * cfg.detectors.apd0.efficiency)
    assert abs(res.signal_clicks - n * p) <= 4 * np.sqrt(n * p)


def test_transport_does_not_change_results():
    cfg = preset("paper_defaults").replace(duration_s=5.0)
    a = simulate(cfg)
    b = simulate(cfg.replace(transport="tcp:127.0.0.1:0"))
    assert np.array_equal(a.sift_index, b.sift_index)
    assert np.array_equal(a.sift_bob, b.sift_bob)
    assert np.array_equal(a.epoch_voltage_v, b.epoch_voltage_v)


def test_seed_changes_run():
    cfg = preset("paper_defaults").replace(duration_s=2.0)
    assert not np.array_equal(simulate(cfg).sift_index, simulate(cfg.replace(seed=2)).sift_index)


def test_trace_shapes(default_run):
    tr = default_run
    n = tr.epoch_time_s.size
    assert tr.duration_s == pytest.approx(tr.config.duration_s)
    for arr in (tr.epoch_voltage_v, tr.epoch_reset, tr.epoch_residual_deg, tr.epoch_locked, tr.epoch_clicks,
                tr.epoch_coupling):
        assert arr.size == n
    m = tr.sift_index.size
    assert tr.sift_alice.size == tr.sift_bob.size == tr.sift_cause.size == tr.sift_residual_deg.size == m
    assert np.all(np.diff(tr.sift_index.astype(np.int64)) > 0)
    assert tr.reset_count == int(tr.epoch_reset.sum())


def test_disabled_controller_holds_zero_volts():
    tr = simulate(preset("noise_free").replace(duration_s=2.0))
    assert np.all(tr.epoch_voltage_v == 0.0)
    assert np.all(tr.epoch_locked)
