"""Byte transports between Alice and Bob: in-process queues or a TCP socket."""
from __future__ import annotations

import queue
import socket
import threading

from .wire import FrameReader, SiftFrame, frame_decode, frame_encode, ProtocolError


class TransportError(Exception):
    pass


class Endpoint:
    """One side of a duplex frame channel.  ``sent`` captures outbound bytes when enabled."""

    def __init__(self, capture: bool = False):
        self.sent: list[bytes] | None = [] if capture else None

    def send_frame(self, frame: SiftFrame) -> None:
        data = frame_encode(frame)
        if self.sent is not None:
            self.sent.append(data)
        self._send(data)

    def recv_frame(self, timeout: float | None = 30.0) -> SiftFrame:
        raise NotImplementedError

    def _send(self, data: bytes) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class _QueueEndpoint(Endpoint):
    def __init__(self, tx: queue.Queue, rx: queue.Queue, capture: bool = False):
        super().__init__(capture)
        self._tx, self._rx = tx, rx

    def _send(self, data: bytes) -> None:
        self._tx.put(data)

    def recv_frame(self, timeout: float | None = 30.0) -> SiftFrame:
        try:
            data = self._rx.get(timeout=timeout)
        except queue.Empty:
            raise TransportError("in-process channel timed out") from None
        return frame_decode(data)


def inproc_pair(capture: bool = False) -> tuple[Endpoint, Endpoint]:
    """Returns (alice_end, bob_end)."""
    a2b, b2a = queue.Queue(), queue.Queue()
    return _QueueEndpoint(a2b, b2a, capture), _QueueEndpoint(b2a, a2b, capture)


class _SocketEndpoint(Endpoint):
    def __init__(self, sock: socket.socket, capture: bool = False):
        super().__init__(capture)
        self._sock = sock
        self._reader = FrameReader()
        self._ready: list[SiftFrame] = []

    def _send(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv_frame(self, timeout: float | None = 30.0) -> SiftFrame:
        self._sock.settimeout(timeout)
        while not self._ready:
            try:
                chunk = self._sock.recv(1 << 16)
            except (OSError, socket.timeout) as exc:
                raise TransportError(f"recv failed: {exc}") from exc
            if not chunk:
                raise TransportError("peer closed the connection")
            self._ready.extend(self._reader.feed(chunk))
        return self._ready.pop(0)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def parse_transport(spec: str) -> tuple[str, str | None, int | None]:
    if spec == "inproc":
        return "inproc", None, None
    parts = spec.split(":")
    if len(parts) != 3 or parts[0] != "tcp":
        raise ValueError(f"transport must be 'inproc' or 'tcp:host:port', got {spec!r}")
    try:
        port = int(parts[2])
    except ValueError:
        raise ValueError(f"bad TCP port in {spec!r}") from None
    if not 0 <= port <= 65535:
        raise ValueError(f"bad TCP port in {spec!r}")
    return "tcp", parts[1], port


def tcp_pair(host: str, port: int, capture: bool = False, timeout: float = 10.0) -> tuple[Endpoint, Endpoint]:
    """Alice listens on (host, port), Bob connects.  Port 0 picks a free port."""
    try:
        server = socket.create_server((host, port))
    except OSError as exc:
        raise TransportError(f"cannot listen on {host}:{port}: {exc}") from exc
    server.settimeout(timeout)
    accepted: dict = {}

    def _accept():
        try:
            accepted["sock"], _ = server.accept()
        except OSError as exc:
            accepted["error"] = exc

    t = threading.Thread(target=_accept, daemon=True)
    t.start()
    try:
        client = socket.create_connection(server.getsockname()[:2], timeout=timeout)
    except OSError as exc:
        server.close()
        raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
    t.join(timeout)
    server.close()
    if "sock" not in accepted:
        client.close()
        raise TransportError(f"accept failed: {accepted.get('error')}")
    for s in (accepted["sock"], client):
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return _SocketEndpoint(accepted["sock"], capture), _SocketEndpoint(client, capture)


def open_pair(spec: str, capture: bool = False) -> tuple[Endpoint, Endpoint]:
    kind, host, port = parse_transport(spec)
    if kind == "inproc":
        return inproc_pair(capture)
    return tcp_pair(host, port, capture)


__all__ = ["Endpoint", "TransportError", "ProtocolError", "inproc_pair", "tcp_pair", "open_pair", "parse_transport"]
