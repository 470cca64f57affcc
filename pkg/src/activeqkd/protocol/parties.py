"""Alice and Bob sifting state machines on top of a frame endpoint."""
from __future__ import annotations

import logging
import threading

import numpy as np

from . import wire
from .transport import Endpoint, TransportError
from .wire import Ctrl, MsgType, ProtocolError

log = logging.getLogger(__name__)


class SessionAborted(Exception):
    pass


class _Key:
    def __init__(self):
        self._idx: list[np.ndarray] = []
        self._bits: list[np.ndarray] = []

    def extend(self, idx: np.ndarray, bits: np.ndarray) -> None:
        if idx.size:
            self._idx.append(np.asarray(idx, dtype=np.uint64))
            self._bits.append(np.asarray(bits, dtype=np.uint8))

    def drop(self, idx: np.ndarray) -> None:
        if not idx.size or not self._idx:
            return
        # samples only ever come from the newest chunk
        last_idx, last_bits = self._idx[-1], self._bits[-1]
        keep = ~np.isin(last_idx, idx)
        self._idx[-1], self._bits[-1] = last_idx[keep], last_bits[keep]

    def lookup(self, idx: np.ndarray) -> np.ndarray:
        last_idx, last_bits = self._idx[-1], self._bits[-1]
        pos = np.searchsorted(last_idx, idx)
        if np.any(pos >= last_idx.size) or np.any(last_idx[np.minimum(pos, last_idx.size - 1)] != idx):
            raise ProtocolError("sample index not in the latest sifted block")
        return last_bits[pos]

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate(self._idx) if self._idx else np.empty(0, dtype=np.uint64)

    @property
    def bits(self) -> np.ndarray:
        return np.concatenate(self._bits) if self._bits else np.empty(0, dtype=np.uint8)


class Alice:
    """Holds her preparations until Bob has settled them and answers basis reveals."""

    def __init__(self, endpoint: Endpoint, sample_fraction: float = 0.0, rng: np.random.Generator | None = None):
        self.endpoint = endpoint
        self.sample_fraction = sample_fraction
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.key = _Key()
        self.error: Exception | None = None
        self._lock = threading.Lock()
        self._starts: list[int] = []
        self._blocks: list[tuple[np.ndarray, np.ndarray]] = []
        self._thread: threading.Thread | None = None

    def prepare(self, g0: int, bases: np.ndarray, bits: np.ndarray) -> None:
        with self._lock:
            self._starts.append(g0)
            self._blocks.append((bases, bits))

    def _lookup(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with self._lock:
            starts = np.asarray(self._starts, dtype=np.int64)
            blocks = list(self._blocks)
        idx = idx.astype(np.int64)
        which = np.searchsorted(starts, idx, side="right") - 1
        bases = np.empty(idx.size, dtype=np.uint8)
        bits = np.empty(idx.size, dtype=np.uint8)
        for b in np.unique(which):
            sel = which == b
            if b < 0:
                raise ProtocolError("reveal refers to an unknown clock index")
            off = idx[sel] - starts[b]
            bb, bt = blocks[b]
            if off.max() >= bb.size:
                raise ProtocolError("reveal refers to an unknown clock index")
            bases[sel] = bb[off]
            bits[sel] = bt[off]
        return bases, bits

    def _commit(self, clock: int) -> None:
        with self._lock:
            while self._starts and self._starts[0] + self._blocks[0][0].size <= clock:
                self._starts.pop(0)
                self._blocks.pop(0)

    def handle(self, frame: wire.SiftFrame) -> tuple[list[wire.SiftFrame], bool]:
        """Process one inbound frame; returns (replies, session finished)."""
        if frame.msg_type == MsgType.BASIS_REVEAL:
            idx, bob_bases = wire.parse_basis_reveal(frame)
            if idx.size > 1 and np.any(np.diff(idx.astype(np.int64)) <= 0):
                raise ProtocolError("reveal indices must be strictly increasing")
            bases, bits = self._lookup(idx) if idx.size else (np.empty(0, np.uint8), np.empty(0, np.uint8))
            kept_mask = bases == bob_bases
            kept = idx[kept_mask]
            self.key.extend(kept, bits[kept_mask])
            replies = [wire.sift_keep(kept)]
            if self.sample_fraction > 0:
                n_s = int(self.rng.binomial(kept.size, self.sample_fraction)) if kept.size else 0
                pick = np.sort(self.rng.choice(kept.size, size=n_s, replace=False)) if n_s else np.empty(0, int)
                s_idx, s_bits = kept[pick], bits[kept_mask][pick]
                self.key.drop(s_idx)
                replies.append(wire.qber_sample(s_idx, s_bits))
            return replies, False
        if frame.msg_type == MsgType.SESSION_CTRL:
            cmd, clock = wire.parse_session_ctrl(frame)
            if cmd == Ctrl.COMMIT:
                self._commit(clock)
            elif cmd == Ctrl.STOP:
                return [wire.session_ctrl(Ctrl.STOP, clock)], True
            return [], False
        raise ProtocolError(f"Alice cannot handle {frame.msg_type.name}")

    def serve(self) -> None:
        try:
            while True:
                frame = self.endpoint.recv_frame(timeout=None)
                replies, done = self.handle(frame)
                for r in replies:
                    self.endpoint.send_frame(r)
                if done:
                    return
        except (ProtocolError, TransportError) as exc:
            self.error = exc
            log.error("alice: session aborted: %s", exc)
            try:
                self.endpoint.send_frame(wire.session_ctrl(Ctrl.STOP, 0))
            except Exception:
                pass

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve, name="alice", daemon=True)
        self._thread.start()

    def join(self, timeout: float | None = 30.0) -> None:
        if self._thread is not None:
            self._thread.join(timeout)


class Bob:
    """Buffers detections until the phase lock gives a verdict, then sifts or discards them.

    Outbound frames carry clock indices and bases only.
    """

    def __init__(self, endpoint: Endpoint, reveal_batch: int = 4096, estimate: bool = False,
                 timeout: float = 30.0):
        self.endpoint = endpoint
        self.reveal_batch = reveal_batch
        self.estimate = estimate
        self.timeout = timeout
        self.key = _Key()
        self.suspended = False
        self.sample_bits = 0
        self.sample_errors = 0
        self._pending: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    def _recv(self, expected: MsgType) -> wire.SiftFrame:
        frame = self.endpoint.recv_frame(timeout=self.timeout)
        if frame.msg_type == MsgType.SESSION_CTRL and expected != MsgType.SESSION_CTRL:
            cmd, _ = wire.parse_session_ctrl(frame)
            if cmd == Ctrl.STOP:
                raise SessionAborted("Alice stopped the session")
        if frame.msg_type != expected:
            raise ProtocolError(f"expected {expected.name}, got {frame.msg_type.name}")
        return frame

    def start(self) -> None:
        self.endpoint.send_frame(wire.session_ctrl(Ctrl.START, 0))

    def record(self, idx: np.ndarray, bases: np.ndarray, bits: np.ndarray) -> None:
        if idx.size:
            self._pending.append((idx.astype(np.uint64), bases.astype(np.uint8), bits.astype(np.uint8)))

    def settle(self, locked: bool, upto_clock: int) -> None:
        pending, self._pending = self._pending, []
        if not locked:
            if not self.suspended:
                self.endpoint.send_frame(wire.session_ctrl(Ctrl.SUSPEND, upto_clock))
                self.suspended = True
        else:
            if self.suspended:
                self.endpoint.send_frame(wire.session_ctrl(Ctrl.RESUME, upto_clock))
                self.suspended = False
            if pending:
                idx = np.concatenate([p[0] for p in pending])
                bases = np.concatenate([p[1] for p in pending])
                bits = np.concatenate([p[2] for p in pending])
                for s in range(0, idx.size, self.reveal_batch):
                    self._reveal(idx[s:s + self.reveal_batch], bases[s:s + self.reveal_batch],
                                 bits[s:s + self.reveal_batch])
        self.endpoint.send_frame(wire.session_ctrl(Ctrl.COMMIT, upto_clock))

    def _reveal(self, idx: np.ndarray, bases: np.ndarray, bits: np.ndarray) -> None:
        self.endpoint.send_frame(wire.basis_reveal(idx, bases))
        kept = wire.parse_sift_keep(self._recv(MsgType.SIFT_KEEP))
        pos = np.searchsorted(idx, kept)
        if np.any(pos >= idx.size) or np.any(idx[np.minimum(pos, idx.size - 1)] != kept):
            raise ProtocolError("SIFT_KEEP lists an index Bob never revealed")
        self.key.extend(kept, bits[pos])
        if self.estimate:
            s_idx, s_bits = wire.parse_qber_sample(self._recv(MsgType.QBER_SAMPLE))
            mine = self.key.lookup(s_idx) if s_idx.size else s_bits
            self.sample_bits += int(s_idx.size)
            self.sample_errors += int(np.count_nonzero(mine != s_bits))
            self.key.drop(s_idx)

    def stop(self) -> None:
        self.endpoint.send_frame(wire.session_ctrl(Ctrl.STOP, 0))
        self._recv(MsgType.SESSION_CTRL)

    @property
    def estimated_qber(self) -> float | None:
        return self.sample_errors / self.sample_bits if self.sample_bits else None


__all__ = ["Alice", "Bob", "SessionAborted"]
