"""BB84 phase encoding, Alice's pulse source and Bob's single-shot measurement."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..detectors import Apd, DetectionEvent
from ..physics import InterferometerConfig, interference_probabilities


class Basis(IntEnum):
    Z = 0
    X = 1


# phase (deg) applied by Alice's modulator for (basis, bit)
PHASE_TABLE = {(Basis.Z, 0): 0.0, (Basis.Z, 1): 180.0, (Basis.X, 0): 90.0, (Basis.X, 1): 270.0}
_DECODE = {v: k for k, v in PHASE_TABLE.items()}
# Bob's modulator phase per measurement basis
BOB_PHASE = {Basis.Z: 0.0, Basis.X: 90.0}


def encode_phase(basis: Basis, bit: int) -> float:
    return PHASE_TABLE[(Basis(basis), int(bit))]


def decode_phase(phase_deg: float) -> tuple[Basis, int]:
    key = float(phase_deg) % 360.0
    if key not in _DECODE:
        raise ValueError(f"{phase_deg} is not a BB84 phase")
    return _DECODE[key]


def encode_phase_array(bases: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Vectorised table lookup: 90*basis + 180*bit."""
    return 90.0 * bases + 180.0 * bits


@dataclass(frozen=True)
class QubitPrep:
    clock_index: int
    basis: Basis
    bit: int
    phase_deg: float


@dataclass(frozen=True)
class PulsePair:
    """Signal and reference pulse of one clock cycle.  Only the signal is modulated."""

    clock_index: int
    alice_phase_deg: float
    signal_mean_photons: float = 0.2
    reference_mean_photons: float = 4.8
    delay_ns: float = 40.0


def alice_emit(rng: np.random.Generator, clock_index: int, signal_mean_photons: float = 0.2,
               reference_ratio: float = 24.0, delay_ns: float = 40.0) -> tuple[QubitPrep, PulsePair]:
    basis = Basis(int(rng.integers(2)))
    bit = int(rng.integers(2))
    phase = encode_phase(basis, bit)
    prep = QubitPrep(clock_index, basis, bit, phase)
    pulse = PulsePair(clock_index, phase, signal_mean_photons, signal_mean_photons * reference_ratio, delay_ns)
    return prep, pulse


def alice_emit_block(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Bases and bits for ``n`` consecutive clock cycles (uint8 arrays)."""
    v = rng.integers(0, 4, size=n, dtype=np.uint8)
    return v >> 1, v & 1


def port_probabilities(prep_phase_deg, bob_basis, residual_phase_deg, visibility: float):
    """Per-photon probabilities of reaching APD0 (bit 0) and APD1 (bit 1)."""
    bob_phase = 90.0 * np.asarray(bob_basis, dtype=float)
    return interference_probabilities(np.asarray(prep_phase_deg) - bob_phase + residual_phase_deg, visibility)


def error_probability(bit: int, prep_phase_deg: float, bob_basis: Basis, residual_phase_deg: float,
                      visibility: float) -> float:
    """Probability that a photon lands in the port of the wrong bit."""
    p0, p1 = port_probabilities(prep_phase_deg, bob_basis, residual_phase_deg, visibility)
    return p1 if bit == 0 else p0


@dataclass(frozen=True)
class MeasureOutcome:
    clock_index: int
    basis: Basis
    apd0: DetectionEvent | None
    apd1: DetectionEvent | None

    @property
    def single(self) -> bool:
        return (self.apd0 is None) != (self.apd1 is None)

    @property
    def bit(self) -> int | None:
        if not self.single:
            return None
        return 0 if self.apd0 is not None else 1


def bob_measure(prep_phase_deg: float, bob_basis: Basis, residual_phase_deg: float, optics: InterferometerConfig,
                detectors: tuple[Apd, Apd], rng: np.random.Generator, mean_photons: float,
                clock_index: int = 0) -> MeasureOutcome:
    """Measure one signal pulse carrying ``mean_photons`` at Bob's AMZI input (central bin).

    A Poisson pulse splits into independent Poisson streams on the two ports,
    so each detector is gated with its share of the mean photon number.
    """
    p0, p1 = port_probabilities(prep_phase_deg, bob_basis, residual_phase_deg, optics.visibility)
    e0 = detectors[0].gate(mean_photons * p0, rng)
    e1 = detectors[1].gate(mean_photons * p1, rng)
    return MeasureOutcome(clock_index, Basis(bob_basis), e0, e1)


def sift(bob_indices: np.ndarray, bob_bases: np.ndarray, alice_basis_of) -> np.ndarray:
    """Indices kept after basis reconciliation.

    ``alice_basis_of`` maps an index array to Alice's bases.  Bob must only
    report gates with exactly one signal-detector click.
    """
    bob_indices = np.asarray(bob_indices, dtype=np.uint64)
    if bob_indices.size == 0:
        return bob_indices
    match = np.asarray(alice_basis_of(bob_indices)) == np.asarray(bob_bases)
    return bob_indices[match]
