"""Gated InGaAs APD click model with dark counts and afterpulsing.

Each click arms an afterpulse trap: the gate ``k`` steps later
(1 <= k <= afterpulse_decay_gates) fires spuriously with probability
``afterpulse_prob * afterpulse_ratio**(k-1)``.  Traps from different clicks
act independently, so the armed probability of a gate is
``1 - prod(1 - p_i)`` over all live traps.  The same semantics are
implemented gate by gate (:meth:`Apd.gate`) and block-wise for the
simulation engine (:meth:`Apd.gate_block`).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class DetectorId(IntEnum):
    APD0 = 0
    APD1 = 1
    APD2 = 2


class Cause(IntEnum):
    PHOTON = 0
    DARK = 1
    AFTERPULSE = 2


@dataclass(frozen=True)
class ApdConfig:
    efficiency: float = 0.11
    dark_prob_per_gate: float = 1e-6
    afterpulse_prob: float = 0.0
    afterpulse_decay_gates: int = 8
    afterpulse_ratio: float = 0.5

    def afterpulse_profile(self) -> np.ndarray:
        """Per-gate afterpulse probability for gates 1..decay_gates after a click."""
        k = np.arange(self.afterpulse_decay_gates)
        return self.afterpulse_prob * self.afterpulse_ratio**k

    def afterpulses_per_click(self) -> float:
        """Expected afterpulses per primary click, cascades included.

        Overlaps between traps and with other clicks are neglected, which
        is accurate for the sparse click trains of a QKD receiver.
        """
        s = float(self.afterpulse_profile().sum())
        return s / (1.0 - s)


@dataclass(frozen=True)
class DetectionEvent:
    """One click.  ``cause`` is ground truth for diagnostics; the protocol layer never sees it."""

    clock_index: int
    detector: DetectorId
    cause: Cause


def bernoulli_positions(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    """Sorted indices in [0, n) of successes of n i.i.d. Bernoulli(p) trials."""
    if p <= 0.0 or n == 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(n, dtype=np.int64)
    k = int(rng.binomial(n, p))
    if k == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)


def photon_click_prob(mean_photons, efficiency: float):
    return -np.expm1(-np.asarray(mean_photons, dtype=float) * efficiency)


class Apd:
    """A single gated detector with afterpulse memory.  Single owner, not thread safe."""

    def __init__(self, cfg: ApdConfig, detector: DetectorId = DetectorId.APD0):
        self.cfg = cfg
        self.detector = detector
        self.clock = 0
        # absolute gate indices of recent clicks that still arm a trap
        self._recent = np.empty(0, dtype=np.int64)
        self._profile = cfg.afterpulse_profile()

    # -- gate-by-gate -----------------------------------------------------
    def afterpulse_prob_now(self) -> float:
        if self.cfg.afterpulse_prob == 0 or self._recent.size == 0:
            return 0.0
        lag = self.clock - self._recent  # >= 1
        live = lag <= self.cfg.afterpulse_decay_gates
        if not live.any():
            return 0.0
        p = self._profile[lag[live] - 1]
        return float(-np.expm1(np.log1p(-p).sum()))

    def click_probability(self, mean_photons: float) -> float:
        """Probability that the next gate clicks."""
        if mean_photons < 0:
            raise ValueError("mean_photons must be >= 0")
        p_photon = float(photon_click_prob(mean_photons, self.cfg.efficiency))
        p_quiet = (1.0 - p_photon) * (1.0 - self.cfg.dark_prob_per_gate) * (1.0 - self.afterpulse_prob_now())
        return 1.0 - p_quiet

    def gate(self, mean_photons: float, rng: np.random.Generator) -> DetectionEvent | None:
        if mean_photons < 0:
            raise ValueError("mean_photons must be >= 0")
        p_photon = float(photon_click_prob(mean_photons, self.cfg.efficiency))
        p_after = self.afterpulse_prob_now()
        u = rng.random(3)
        event = None
        if u[0] < p_photon:
            cause = Cause.PHOTON
        elif u[1] < self.cfg.dark_prob_per_gate:
            cause = Cause.DARK
        elif u[2] < p_after:
            cause = Cause.AFTERPULSE
        else:
            cause = None
        if cause is not None:
            event = DetectionEvent(self.clock, self.detector, cause)
            self._arm(np.array([self.clock], dtype=np.int64))
        self.clock += 1
        return event

    def force_click(self) -> None:
        """Register a click in the current gate regardless of light (test and calibration hook)."""
        self._arm(np.array([self.clock], dtype=np.int64))
        self.clock += 1

    def reset_afterpulse_state(self) -> None:
        self._recent = np.empty(0, dtype=np.int64)

    def _arm(self, clicks: np.ndarray) -> None:
        if self.cfg.afterpulse_prob == 0:
            return
        horizon = int(clicks.max()) - self.cfg.afterpulse_decay_gates
        keep = self._recent[self._recent >= horizon]
        self._recent = np.concatenate([keep, clicks])

    # -- block-wise -------------------------------------------------------
    def gate_block(self, n: int, photon_offsets: np.ndarray, rng: np.random.Generator):
        """Run ``n`` consecutive gates.

        ``photon_offsets`` are the (sorted, unique) offsets inside the block
        where a photon was detected; the caller samples them because the
        photon statistics of APD0 and APD1 are coupled through the
        interferometer.  Returns ``(offsets, causes)`` of all clicks, sorted.
        """
        g0 = self.clock
        photon_offsets = np.asarray(photon_offsets, dtype=np.int64)
        dark = bernoulli_positions(rng, n, self.cfg.dark_prob_per_gate)
        dark = np.setdiff1d(dark, photon_offsets, assume_unique=True)
        offsets = np.concatenate([photon_offsets, dark])
        causes = np.concatenate([np.full(photon_offsets.size, Cause.PHOTON, dtype=np.uint8),
                                 np.full(dark.size, Cause.DARK, dtype=np.uint8)])

        if self.cfg.afterpulse_prob > 0:
            W = self.cfg.afterpulse_decay_gates
            clicked = set(offsets.tolist())
            extra: list[int] = []
            sources = np.concatenate([self._recent - g0, offsets])
            while sources.size:
                u = rng.random((sources.size, W))
                hit_src, hit_k = np.nonzero(u < self._profile)
                targets = sources[hit_src] + hit_k + 1
                targets = np.unique(targets[(targets >= 0) & (targets < n)])
                fresh = [t for t in targets.tolist() if t not in clicked]
                clicked.update(fresh)
                extra.extend(fresh)
                sources = np.asarray(fresh, dtype=np.int64)
            if extra:
                offsets = np.concatenate([offsets, np.asarray(extra, dtype=np.int64)])
                causes = np.concatenate([causes, np.full(len(extra), Cause.AFTERPULSE, dtype=np.uint8)])
            live = np.concatenate([self._recent, offsets + g0])
            self._recent = live[live >= g0 + n - W]

        order = np.argsort(offsets, kind="stable")
        self.clock += n
        return offsets[order], causes[order]

    def events(self, g0: int, offsets: np.ndarray, causes: np.ndarray) -> list[DetectionEvent]:
        return [DetectionEvent(int(g0 + o), self.detector, Cause(int(c))) for o, c in zip(offsets, causes)]


def geometric_sum(p: float, ratio: float, n: int) -> float:
    if ratio == 1.0:
        return p * n
    return p * (1.0 - ratio**n) / (1.0 - ratio)


__all__ = [
    "Apd", "ApdConfig", "Cause", "DetectionEvent", "DetectorId",
    "bernoulli_positions", "photon_click_prob", "geometric_sum",
]
