"""Seeded event loop that runs one key-distribution session.

Simulated time advances in feedback epochs of ``controller.integration_window_s``.
Within an epoch the stretcher voltage is constant and the fibre phase is
interpolated linearly between the drift states at the epoch edges.  Clicks
are rare, so photon arrivals are drawn sparsely (Bernoulli positions plus
thinning) instead of gate by gate.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .compensation import (FeedbackSample, PolarizationWalker, StretcherController, fit_fringe_drift,
                           lock_voltage_for, step_stretcher, walk_polarization)
from .config import RunConfig
from .detectors import Apd, DetectorId, bernoulli_positions
from .physics import DriftState, advance_drift, initial_drift, polarization_coupling, transmittance
from .protocol.encoding import alice_emit_block
from .protocol.parties import Alice, Bob, SessionAborted
from .protocol.transport import open_pair
from .protocol.wire import ProtocolError

log = logging.getLogger(__name__)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named subsystem; stable across runs and platforms."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


def wrap_deg(x):
    return (np.asarray(x) + 180.0) % 360.0 - 180.0


@dataclass
class RunTraces:
    """Everything needed to recompute the figures of merit after a run."""

    config: RunConfig
    epoch_time_s: np.ndarray = field(default_factory=lambda: np.empty(0))
    epoch_voltage_v: np.ndarray = field(default_factory=lambda: np.empty(0))
    epoch_reset: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    epoch_residual_deg: np.ndarray = field(default_factory=lambda: np.empty(0))
    epoch_locked: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    epoch_clicks: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    epoch_coupling: np.ndarray = field(default_factory=lambda: np.empty(0))
    sift_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint64))
    sift_alice: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint8))
    sift_bob: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint8))
    sift_cause: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint8))
    sift_residual_deg: np.ndarray = field(default_factory=lambda: np.empty(0))
    reset_count: int = 0
    double_clicks: int = 0
    estimated_qber: float | None = None

    @property
    def duration_s(self) -> float:
        return self.epoch_time_s.size * self.config.controller.integration_window_s


@dataclass
class _EpochResult:
    single_idx: np.ndarray
    single_bit: np.ndarray
    single_cause: np.ndarray
    single_residual: np.ndarray
    signal_clicks: int
    double_clicks: int
    apd2_clicks: int


class Simulation:
    def __init__(self, cfg: RunConfig, capture_wire: bool = False):
        self.cfg = cfg
        self.capture_wire = capture_wire
        seed = cfg.seed
        self.rng_drift = substream(seed, "drift")
        self.rng_alice = substream(seed, "alice")
        self.rng_bob = substream(seed, "bob")
        self.rng_signal = substream(seed, "signal")
        self.rng_reference = substream(seed, "reference")
        self.rng_sample = substream(seed, "alice-sample")
        self.apd_rngs = [substream(seed, f"apd{i}") for i in range(3)]
        d = cfg.detectors
        self.apds = [Apd(d.apd0, DetectorId.APD0), Apd(d.apd1, DetectorId.APD1), Apd(d.apd2, DetectorId.APD2)]
        k = cfg.controller
        self.ctl = StretcherController(v_min=k.v_min, v_max=k.v_max, coeff_deg_per_volt=k.coeff_deg_per_volt,
                                       dither_amplitude_v=k.dither_amplitude_v,
                                       integration_window_s=k.integration_window_s, gain=k.gain,
                                       integral_gain=k.integral_gain, sift_gate_deg=k.sift_gate_deg,
                                       enabled=k.enabled)
        w = cfg.walker
        self.walker = PolarizationWalker(step_size=w.step_size, epoch_s=w.epoch_s, enabled=w.enabled)
        self.drift: DriftState = initial_drift(cfg.channel, self.rng_drift, cfg.initial.phase_offset_deg)
        self.window = k.integration_window_s
        self.n = cfg.gates_per_epoch
        T = transmittance(cfg.channel.loss_db)
        itf = cfg.interferometer
        # mean photons in the central time bin at Bob, before polarization filtering
        self.mu_signal = cfg.source.signal_mean_photons * T * itf.interfering_fraction
        self.mu_reference = cfg.source.reference_mean_photons * T * itf.interfering_fraction * itf.reference_split
        self.visibility = itf.visibility
        self.alice: Alice | None = None
        self.bob: Bob | None = None

    # -- physics of one epoch ------------------------------------------------
    def _residual(self, offsets: np.ndarray, phi0: float, phi1: float, voltage: float) -> np.ndarray:
        frac = (offsets + 0.5) / self.n
        return phi0 + (phi1 - phi0) * frac + self.ctl.coeff_deg_per_volt * voltage

    def _reference_clicks(self, phi0: float, phi1: float, voltage: float, coupling: float) -> int:
        V = self.visibility
        m = self.mu_reference * coupling * self.apds[2].cfg.efficiency
        p_max = -np.expm1(-m * 0.5 * (1.0 + V))
        rng = self.rng_reference
        cand = bernoulli_positions(rng, self.n, p_max)
        if cand.size:
            res = self._residual(cand, phi0, phi1, voltage)
            p = -np.expm1(-m * 0.5 * (1.0 - V * np.cos(np.radians(res))))
            cand = cand[rng.random(cand.size) * p_max < p]
        offsets, _ = self.apds[2].gate_block(self.n, cand, self.apd_rngs[2])
        return int(offsets.size)

    def _signal_epoch(self, phi0, phi1, voltage, coupling, a_bases, a_bits, b_bases) -> _EpochResult:
        V = self.visibility
        eta0, eta1 = self.apds[0].cfg.efficiency, self.apds[1].cfg.efficiency
        m = self.mu_signal * coupling
        p_max = -np.expm1(-m * max(eta0, eta1))
        rng = self.rng_signal
        cand = bernoulli_positions(rng, self.n, p_max)
        ph0 = ph1 = np.empty(0, dtype=np.int64)
        if cand.size:
            res = self._residual(cand, phi0, phi1, voltage)
            delta = 90.0 * a_bases[cand] + 180.0 * a_bits[cand] - 90.0 * b_bases[cand] + res
            p0 = 0.5 * (1.0 + V * np.cos(np.radians(delta)))
            a0 = -np.expm1(-m * eta0 * p0)
            a1 = -np.expm1(-m * eta1 * (1.0 - p0))
            z = 1.0 - (1.0 - a0) * (1.0 - a1)
            u = rng.random((2, cand.size))
            ok = u[0] * p_max < z
            only0 = a0 * (1.0 - a1)
            only1 = (1.0 - a0) * a1
            r = u[1] * z
            click0 = ok & ((r < only0) | (r >= only0 + only1))
            click1 = ok & (r >= only0)
            ph0, ph1 = cand[click0], cand[click1]
        off0, cause0 = self.apds[0].gate_block(self.n, ph0, self.apd_rngs[0])
        off1, cause1 = self.apds[1].gate_block(self.n, ph1, self.apd_rngs[1])
        both = np.intersect1d(off0, off1, assume_unique=True)
        s0 = ~np.isin(off0, both, assume_unique=True)
        s1 = ~np.isin(off1, both, assume_unique=True)
        idx = np.concatenate([off0[s0], off1[s1]])
        bits = np.concatenate([np.zeros(s0.sum(), np.uint8), np.ones(s1.sum(), np.uint8)])
        causes = np.concatenate([cause0[s0], cause1[s1]])
        order = np.argsort(idx, kind="stable")
        idx, bits, causes = idx[order], bits[order], causes[order]
        return _EpochResult(idx, bits, causes, self._residual(idx, phi0, phi1, voltage),
                            int(off0.size + off1.size), int(both.size), 0)

    # -- lock acquisition ----------------------------------------------------
    def _calibrate(self) -> None:
        k = self.cfg.controller
        volts = np.arange(k.scan_points) * k.scan_step_deg / k.coeff_deg_per_volt
        rates = []
        for v in volts:
            nxt = advance_drift(self.drift, self.window, self.rng_drift, self.cfg.channel)
            coupling = polarization_coupling(self.drift, self.walker.axes)
            clicks = self._reference_clicks(self.drift.phase_offset_deg, nxt.phase_offset_deg, v, coupling)
            rates.append(clicks / self.window)
            self.drift = nxt
        times = (np.arange(k.scan_points) + 0.5) * self.window
        mid, half, phase_min, w = fit_fringe_drift(volts, rates, times, k.coeff_deg_per_volt)
        self.ctl.fringe_mid, self.ctl.fringe_half = mid, half
        start = 0.0
        if k.acquire_on_start:
            # extrapolate the fringe minimum to the middle of the first session window
            t0 = (k.scan_points + 0.5) * self.window
            start = lock_voltage_for(phase_min - w * t0, k.coeff_deg_per_volt)
            # steady-state integrator for a constant drift rate: one pair's worth of drift
            self.ctl.integrator_deg = 2.0 * self.window * w
        self.ctl.start(start)
        log.debug("fringe fit mid=%.1f half=%.1f min=%.1f deg drift=%.2f deg/s; start at %.3f V",
                  mid, half, phase_min, w, start)

    # -- main loop -----------------------------------------------------------
    def run(self) -> RunTraces:
        cfg = self.cfg
        alice_end, bob_end = open_pair(cfg.transport, capture=self.capture_wire)
        self.alice = Alice(alice_end, cfg.protocol.sample_fraction, self.rng_sample)
        self.bob = Bob(bob_end, cfg.protocol.reveal_batch, estimate=cfg.mode == "protocol-estimate")
        self.alice.start()
        try:
            traces = self._session()
        except (ProtocolError, SessionAborted):
            raise
        finally:
            self.alice.join(5.0)
            alice_end.close()
            bob_end.close()
        if self.alice.error is not None:
            raise SessionAborted(f"alice aborted: {self.alice.error}")
        return traces

    def _session(self) -> RunTraces:
        cfg = self.cfg
        bob, alice, ctl, walker = self.bob, self.alice, self.ctl, self.walker
        bob.start()
        if ctl.enabled:
            self._calibrate()
        else:
            ctl.start(0.0)

        n_epochs = int(round(cfg.duration_s / self.window))
        walker_epochs = max(1, int(round(walker.epoch_s / self.window)))
        coeff = ctl.coeff_deg_per_volt
        tr = {k: [] for k in ("t", "v", "reset", "res", "clicks", "coupling")}
        locked = np.zeros(n_epochs, dtype=bool)
        diag_idx, diag_cause, diag_res = [], [], []
        undecided: list[int] = []
        walker_counts = 0
        double_clicks = 0
        last_verdict = True

        for e in range(n_epochs):
            g0 = e * self.n
            nxt = advance_drift(self.drift, self.window, self.rng_drift, cfg.channel)
            phi0, phi1 = self.drift.phase_offset_deg, nxt.phase_offset_deg
            voltage = ctl.voltage
            coupling = polarization_coupling(self.drift, walker.axes)

            a_bases, a_bits = alice_emit_block(self.rng_alice, self.n)
            alice.prepare(g0, a_bases, a_bits)
            b_bases = self.rng_bob.integers(0, 2, size=self.n, dtype=np.uint8)

            res = self._signal_epoch(phi0, phi1, voltage, coupling, a_bases, a_bits, b_bases)
            apd2 = self._reference_clicks(phi0, phi1, voltage, coupling) if ctl.enabled else 0
            bob.record(g0 + res.single_idx, b_bases[res.single_idx], res.single_bit)
            diag_idx.append(g0 + res.single_idx)
            diag_cause.append(res.single_cause)
            diag_res.append(res.single_residual)
            double_clicks += res.double_clicks

            tr["t"].append(e * self.window)
            tr["v"].append(voltage)
            tr["res"].append(float(wrap_deg(0.5 * (phi0 + phi1) + coeff * voltage)))
            tr["clicks"].append(res.single_idx.size)
            tr["coupling"].append(coupling)
            self.drift = nxt

            sample = FeedbackSample(apd2 / self.window, res.signal_clicks / self.window, self.window)
            _, reset = step_stretcher(ctl, sample)
            tr["reset"].append(reset)
            undecided.append(e)
            if ctl.decision is not None:
                last_verdict = ctl.decision
                locked[undecided] = ctl.decision
                bob.settle(ctl.decision, g0 + self.n)
                undecided = []

            walker_counts += res.signal_clicks
            if (e + 1) % walker_epochs == 0:
                span = walker_epochs * self.window
                walk_polarization(walker, FeedbackSample(apd2 / self.window, walker_counts / span, span))
                walker_counts = 0

        if undecided:
            locked[undecided] = last_verdict
            bob.settle(last_verdict, n_epochs * self.n)
        bob.stop()

        a_idx, a_bits = alice.key.indices, alice.key.bits
        b_idx, b_bits = bob.key.indices, bob.key.bits
        if a_idx.size != b_idx.size or np.any(a_idx != b_idx):
            raise ProtocolError("sifted keys are not index-aligned")
        d_idx = np.concatenate(diag_idx) if diag_idx else np.empty(0, np.int64)
        pos = np.searchsorted(d_idx, b_idx.astype(np.int64))
        d_cause = np.concatenate(diag_cause) if diag_cause else np.empty(0, np.uint8)
        d_res = np.concatenate(diag_res) if diag_res else np.empty(0)

        return RunTraces(
            config=cfg,
            epoch_time_s=np.asarray(tr["t"], dtype=float),
            epoch_voltage_v=np.asarray(tr["v"], dtype=float),
            epoch_reset=np.asarray(tr["reset"], dtype=bool),
            epoch_residual_deg=np.asarray(tr["res"], dtype=float),
            epoch_locked=locked,
            epoch_clicks=np.asarray(tr["clicks"], dtype=np.int64),
            epoch_coupling=np.asarray(tr["coupling"], dtype=float),
            sift_index=b_idx,
            sift_alice=a_bits,
            sift_bob=b_bits,
            sift_cause=d_cause[pos] if pos.size else np.empty(0, np.uint8),
            sift_residual_deg=wrap_deg(d_res[pos]) if pos.size else np.empty(0),
            reset_count=ctl.reset_count,
            double_clicks=double_clicks,
            estimated_qber=bob.estimated_qber,
        )


def simulate(cfg: RunConfig, capture_wire: bool = False) -> RunTraces:
    return Simulation(cfg, capture_wire).run()
