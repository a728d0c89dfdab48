"""Frame transports and the communication ledger.

Two interchangeable transports: blocking in-process queues (each party
on its own thread) and TCP. A ledgered endpoint wraps either one and
accounts every frame that passes through it, sent or received, so each
party independently holds the complete ledger; in a two-party session
both copies must agree. Matrix elements of data frames are the
accounted payload; frame headers, matrix headers and control frames are
overhead, reported separately so the analytic footprint numbers are
recoverable exactly from the ledger.
"""

from __future__ import annotations

import queue
import socket
import time
from dataclasses import dataclass, field

from ..errors import ProtocolError, TransportError
from .frames import (
    DATA_FRAME_TYPES,
    HEADER_LEN,
    Frame,
    MsgType,
    decode_frame,
    encode_frame,
    matrix_data_bytes,
    validate_header,
)

DIRECTIONS = ("active_to_passive", "passive_to_active")


@dataclass
class CommLedger:
    """Counts for one run, split by direction.

    `rounds` counts data-frame exchanges during training; the
    `inference_*` fields track post-training exchanges (held-out
    evaluation) separately so the training round law stays intact.
    """

    rounds: int = 0
    data_bytes: dict = field(
        default_factory=lambda: {d: 0 for d in DIRECTIONS}
    )
    overhead_bytes: dict = field(
        default_factory=lambda: {d: 0 for d in DIRECTIONS}
    )
    inference_rounds: int = 0
    inference_bytes: int = 0

    @property
    def total_data_bytes(self) -> int:
        return sum(self.data_bytes.values())

    @property
    def total_overhead_bytes(self) -> int:
        return sum(self.overhead_bytes.values())

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "data_bytes": dict(self.data_bytes),
            "overhead_bytes": dict(self.overhead_bytes),
            "inference_rounds": self.inference_rounds,
            "inference_bytes": self.inference_bytes,
        }


class QueueEndpoint:
    """One side of an in-process pair; recv blocks on the peer's queue."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._inbox = inbox
        self._outbox = outbox

    def send(self, frame: Frame) -> None:
        self._outbox.put(encode_frame(frame))

    def recv(self, timeout: float = 120.0) -> Frame:
        try:
            data = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportError("timed out waiting for a frame") from None
        frame, _ = decode_frame(data)
        return frame

    def close(self) -> None:
        pass


def inprocess_pair() -> tuple[QueueEndpoint, QueueEndpoint]:
    a_to_p: queue.Queue = queue.Queue()
    p_to_a: queue.Queue = queue.Queue()
    active = QueueEndpoint(inbox=p_to_a, outbox=a_to_p)
    passive = QueueEndpoint(inbox=a_to_p, outbox=p_to_a)
    return active, passive


class TcpEndpoint:
    """Framed TCP: one connection per run, frames strictly ordered."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send(self, frame: Frame) -> None:
        try:
            self._sock.sendall(encode_frame(frame))
        except OSError as e:
            raise TransportError(f"send failed: {e}") from e

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        got = 0
        while got < n:
            try:
                chunk = self._sock.recv(n - got)
            except OSError as e:
                raise TransportError(f"recv failed: {e}") from e
            if not chunk:
                raise TransportError("connection closed mid-frame")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def recv(self, timeout: float = 120.0) -> Frame:
        self._sock.settimeout(timeout)
        header = self._read_exact(HEADER_LEN)
        msg_type, length = validate_header(header)
        payload = self._read_exact(length) if length else b""
        return Frame(msg_type, payload)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def tcp_listen(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    return srv


def tcp_accept(server: socket.socket, timeout: float = 120.0) -> TcpEndpoint:
    server.settimeout(timeout)
    try:
        conn, _ = server.accept()
    except OSError as e:
        raise TransportError(f"accept failed: {e}") from e
    return TcpEndpoint(conn)


def tcp_connect(host: str, port: int, timeout: float = 120.0, retries: int = 50) -> TcpEndpoint:
    last = None
    for _ in range(retries):
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return TcpEndpoint(sock)
        except OSError as e:
            last = e
            time.sleep(0.1)
    raise TransportError(f"connect to {host}:{port} failed: {last}")


class LedgeredEndpoint:
    """Accounting wrapper around a transport endpoint.

    `party` names the side holding this endpoint ("active"/"passive");
    sends are attributed to this party's outgoing direction, receives to
    the peer's. Accounting happens after a successful send, so a
    transport failure is never double-counted on retry. Setting
    `inference_phase` moves subsequent data frames into the inference
    buckets (both parties flip it at the same protocol point).
    """

    def __init__(self, endpoint, party: str):
        if party not in ("active", "passive"):
            raise ProtocolError(f"unknown party {party!r}")
        self._ep = endpoint
        self.party = party
        self.ledger = CommLedger()
        self.inference_phase = False
        self.transcript: list[tuple[str, MsgType]] = []

    def _account(self, frame: Frame, direction: str) -> None:
        wire_len = HEADER_LEN + len(frame.payload)
        if frame.msg_type in DATA_FRAME_TYPES:
            data = matrix_data_bytes(frame.payload)
            if self.inference_phase:
                self.ledger.inference_rounds += 1
                self.ledger.inference_bytes += data
            else:
                self.ledger.rounds += 1
                self.ledger.data_bytes[direction] += data
            self.ledger.overhead_bytes[direction] += wire_len - data
        else:
            self.ledger.overhead_bytes[direction] += wire_len

    def send(self, frame: Frame) -> None:
        self._ep.send(frame)
        out = "active_to_passive" if self.party == "active" else "passive_to_active"
        self.transcript.append(("send", frame.msg_type))
        self._account(frame, out)

    def recv(self, timeout: float = 120.0) -> Frame:
        frame = self._ep.recv(timeout)
        into = "passive_to_active" if self.party == "active" else "active_to_passive"
        self.transcript.append(("recv", frame.msg_type))
        self._account(frame, into)
        if frame.msg_type is MsgType.ERROR:
            raise ProtocolError(
                f"peer error: {frame.payload.decode('utf-8', 'replace')}"
            )
        return frame

    def close(self) -> None:
        self._ep.close()
