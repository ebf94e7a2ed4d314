"""Wire messages, binary codec, Com(T) accounting and the two transports.

Frame layout (all little-endian)::

    type:u8 | agent_id:u32 | round:u64 | l:u32 | d:u32 | payload (float64 row-major)

On TCP every frame is preceded by a 4-byte big-endian length.
"""
from __future__ import annotations

import json
import logging
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import FSCLBError, ProtocolError, TransportError

log = logging.getLogger(__name__)

HEADER = struct.Struct("<BIQII")
HEADER_SIZE = HEADER.size  # 21
LENGTH = struct.Struct(">I")

UPLOAD = 0x01
DOWNLOAD = 0x02
FEDLIN_UPLOAD = 0x11
FEDLIN_DOWNLOAD = 0x12
CTRL_INIT = 0x30
CTRL_ACK = 0x31
CTRL_BYE = 0x3F
CTRL_ERROR = 0x7F


@dataclass
class UploadMsg:
    agent_id: int
    round: int
    S_loc: np.ndarray
    rho_loc: float
    b_loc: np.ndarray
    # theory side channel: exact local gram, never encoded nor counted
    exact_gram: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def l(self):
        return self.S_loc.shape[0]

    @property
    def d(self):
        return self.S_loc.shape[1]


@dataclass
class DownloadMsg:
    agent_id: int
    round: int
    S: np.ndarray
    theta_hat: np.ndarray
    log_det: float
    Hdiag: np.ndarray
    Delta: float

    @property
    def l(self):
        return self.S.shape[0]

    @property
    def d(self):
        return self.S.shape[1]


@dataclass
class FedLinUpload:
    agent_id: int
    round: int
    dV: np.ndarray
    db: np.ndarray

    @property
    def d(self):
        return self.db.shape[0]


@dataclass
class FedLinDownload:
    agent_id: int
    round: int
    V_inv: np.ndarray
    theta_hat: np.ndarray
    log_det: float

    @property
    def d(self):
        return self.theta_hat.shape[0]


def messages_equal(a, b) -> bool:
    if type(a) is not type(b):
        return False
    for f in fields(a):
        if not f.compare:
            continue
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
            if not np.array_equal(np.asarray(x), np.asarray(y)):
                return False
        elif x != y:
            return False
    return True


# ---------------------------------------------------------------- volumes

def message_volume(msg) -> int:
    """Scalar count charged to Com(T) for one message.

    FedLinUCB uploads are charged ``d^2`` (the correlation matrix only), the
    convention under which its per-communication total is ``2d^2 + d + 1``.
    """
    if isinstance(msg, UploadMsg):
        return msg.l * msg.d + msg.d + 1
    if isinstance(msg, DownloadMsg):
        return msg.l * msg.d + msg.d + msg.l + 2
    if isinstance(msg, FedLinUpload):
        return msg.d * msg.d
    if isinstance(msg, FedLinDownload):
        return msg.d * msg.d + msg.d + 1
    raise ProtocolError(f"no volume rule for {type(msg).__name__}")


def fedlinucb_reference_volume(d: int) -> int:
    """Per-communication FedLinUCB volume as quoted in the literature (``d^2 + d``)."""
    return d * d + d


# ------------------------------------------------------------------ codec

def _pack(kind, agent_id, round_index, l, d, *arrays) -> bytes:
    head = HEADER.pack(kind, int(agent_id), int(round_index), int(l), int(d))
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return head + body


def encode(msg) -> bytes:
    if isinstance(msg, UploadMsg):
        return _pack(UPLOAD, msg.agent_id, msg.round, msg.l, msg.d,
                     msg.S_loc, msg.b_loc, np.array([msg.rho_loc]))
    if isinstance(msg, DownloadMsg):
        return _pack(DOWNLOAD, msg.agent_id, msg.round, msg.l, msg.d,
                     msg.S, msg.theta_hat, msg.Hdiag, np.array([msg.log_det, msg.Delta]))
    if isinstance(msg, FedLinUpload):
        return _pack(FEDLIN_UPLOAD, msg.agent_id, msg.round, 0, msg.d, msg.dV, msg.db)
    if isinstance(msg, FedLinDownload):
        return _pack(FEDLIN_DOWNLOAD, msg.agent_id, msg.round, 0, msg.d,
                     msg.V_inv, msg.theta_hat, np.array([msg.log_det]))
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def encode_control(kind: int, payload: dict | None = None) -> bytes:
    body = json.dumps(payload or {}, sort_keys=True).encode("utf-8")
    return HEADER.pack(kind, 0, 0, 0, 0) + body


def _payload_len(kind, l, d):
    if kind == UPLOAD:
        return l * d + d + 1
    if kind == DOWNLOAD:
        return l * d + d + l + 2
    if kind == FEDLIN_UPLOAD:
        return d * d + d
    if kind == FEDLIN_DOWNLOAD:
        return d * d + d + 1
    raise ProtocolError(f"unknown message type byte 0x{kind:02x}")


def frame_size(msg) -> int:
    """Encoded length in bytes, without the TCP length prefix."""
    if isinstance(msg, (UploadMsg, DownloadMsg)):
        kind, l = (UPLOAD if isinstance(msg, UploadMsg) else DOWNLOAD), msg.l
    elif isinstance(msg, FedLinUpload):
        kind, l = FEDLIN_UPLOAD, 0
    elif isinstance(msg, FedLinDownload):
        kind, l = FEDLIN_DOWNLOAD, 0
    else:
        raise ProtocolError(f"cannot size {type(msg).__name__}")
    return HEADER_SIZE + 8 * _payload_len(kind, l, msg.d)


def decode(frame: bytes):
    """Inverse of :func:`encode`; control frames decode to ``(type, dict)``."""
    if len(frame) < HEADER_SIZE:
        raise ProtocolError(f"truncated frame: {len(frame)} bytes < header")
    kind, agent_id, round_index, l, d = HEADER.unpack_from(frame)
    body = frame[HEADER_SIZE:]
    if kind in (CTRL_INIT, CTRL_ACK, CTRL_BYE, CTRL_ERROR):
        try:
            return kind, json.loads(body.decode("utf-8") or "{}")
        except ValueError as exc:
            raise ProtocolError(f"bad control payload: {exc}") from None
    n = _payload_len(kind, l, d)
    if len(body) != 8 * n:
        raise ProtocolError(
            f"type 0x{kind:02x} with l={l}, d={d} needs {8 * n} payload bytes, got {len(body)}")
    vals = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if kind == UPLOAD:
        S = vals[: l * d].reshape(l, d)
        return UploadMsg(agent_id, round_index, S, float(vals[-1]), vals[l * d: l * d + d].copy())
    if kind == DOWNLOAD:
        o = l * d
        return DownloadMsg(agent_id, round_index, vals[:o].reshape(l, d).copy(),
                           vals[o:o + d].copy(), float(vals[o + d + l]),
                           vals[o + d:o + d + l].copy(), float(vals[o + d + l + 1]))
    if kind == FEDLIN_UPLOAD:
        return FedLinUpload(agent_id, round_index, vals[: d * d].reshape(d, d).copy(),
                            vals[d * d:].copy())
    return FedLinDownload(agent_id, round_index, vals[: d * d].reshape(d, d).copy(),
                          vals[d * d: d * d + d].copy(), float(vals[-1]))


serialize_upload = encode


def deserialize_upload(frame: bytes) -> UploadMsg:
    msg = decode(frame)
    if not isinstance(msg, UploadMsg):
        raise ProtocolError(f"expected an upload frame, got {type(msg).__name__}")
    return msg


# ----------------------------------------------------------------- ledger

class CommLedger:
    """Counts communications and the scalars/bytes they move."""

    def __init__(self):
        self._lock = threading.Lock()
        self.switching_count = 0
        self.uploaded_scalars = 0
        self.downloaded_scalars = 0
        self.uploaded_bytes = 0
        self.downloaded_bytes = 0

    def record(self, upload, download) -> tuple[int, int]:
        up, down = message_volume(upload), message_volume(download)
        with self._lock:
            self.switching_count += 1
            self.uploaded_scalars += up
            self.downloaded_scalars += down
            self.uploaded_bytes += frame_size(upload)
            self.downloaded_bytes += frame_size(download)
        return up, down

    @property
    def total_scalars(self) -> int:
        return self.uploaded_scalars + self.downloaded_scalars

    @property
    def total_bytes(self) -> int:
        return self.uploaded_bytes + self.downloaded_bytes

    def as_dict(self) -> dict:
        return {
            "switching_count": self.switching_count,
            "uploaded_scalars": self.uploaded_scalars,
            "downloaded_scalars": self.downloaded_scalars,
            "total_scalars": self.total_scalars,
            "uploaded_bytes": self.uploaded_bytes,
            "downloaded_bytes": self.downloaded_bytes,
            "total_bytes": self.total_bytes,
        }


# ------------------------------------------------------------- transports

class Transport:
    """Synchronous request/response to the server; every exchange is ledgered."""

    def __init__(self):
        self.ledger = CommLedger()

    def request(self, msg):
        reply = self._exchange(msg)
        self.ledger.record(msg, reply)
        return reply

    def _exchange(self, msg):
        raise NotImplementedError

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class InProcTransport(Transport):
    def __init__(self, server):
        super().__init__()
        self.server = server

    def _exchange(self, msg):
        return self.server.handle(msg)


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise TransportError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def send_frame(sock, frame: bytes) -> None:
    try:
        sock.sendall(LENGTH.pack(len(frame)) + frame)
    except OSError as exc:
        raise TransportError(str(exc)) from exc


def recv_frame(sock) -> bytes:
    try:
        (n,) = LENGTH.unpack(_recv_exact(sock, LENGTH.size))
        return _recv_exact(sock, n)
    except OSError as exc:
        raise TransportError(str(exc)) from exc


class TcpTransport(Transport):
    """Client side of the TCP transport.

    ``init`` is sent as a control frame right after connecting; the server
    builds its state from it (see :func:`serve_tcp`).
    """

    def __init__(self, host: str, port: int, init: dict, timeout: float = 60.0):
        super().__init__()
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach {host}:{port}: {exc}") from exc
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        send_frame(self.sock, encode_control(CTRL_INIT, init))
        kind, body = decode(recv_frame(self.sock))
        if kind != CTRL_ACK:
            raise TransportError(f"server refused init: {body}")

    def _exchange(self, msg):
        send_frame(self.sock, encode(msg))
        reply = decode(recv_frame(self.sock))
        if isinstance(reply, tuple):
            raise TransportError(f"server error: {reply[1]}")
        return reply

    def close(self):
        if self.sock is None:
            return
        try:
            send_frame(self.sock, encode_control(CTRL_BYE))
        except TransportError:
            pass
        self.sock.close()
        self.sock = None


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        server = None
        while True:
            try:
                frame = recv_frame(sock)
            except TransportError:
                return
            try:
                msg = decode(frame)
                if isinstance(msg, tuple):
                    kind, body = msg
                    if kind == CTRL_BYE:
                        self.server.sessions += 1
                        return
                    if kind == CTRL_INIT:
                        server = self.server.factory(body)
                        send_frame(sock, encode_control(CTRL_ACK))
                        continue
                    raise ProtocolError(f"unexpected control frame 0x{kind:02x}")
                if server is None:
                    raise ProtocolError("data frame before init")
                with self.server.lock:
                    reply = server.handle(msg)
                send_frame(sock, encode(reply))
            except FSCLBError as exc:
                log.warning("rejecting frame: %s", exc)
                send_frame(sock, encode_control(CTRL_ERROR, {"error": str(exc)}))


class TcpServer(socketserver.TCPServer):
    """Single-threaded server: one connection and one request in flight at a time."""

    allow_reuse_address = True

    def __init__(self, address, factory):
        super().__init__(address, _Handler)
        self.factory = factory
        self.lock = threading.Lock()
        self.sessions = 0

    @property
    def port(self) -> int:
        return self.server_address[1]


def serve_tcp(host: str, port: int, factory, max_sessions: int | None = None) -> None:
    """Blocking serve loop; returns after ``max_sessions`` clients said goodbye."""
    with TcpServer((host, port), factory) as srv:
        log.info("listening on %s:%d", host, srv.port)
        while max_sessions is None or srv.sessions < max_sessions:
            srv.handle_request()


def start_background_server(factory, host: str = "127.0.0.1", port: int = 0) -> TcpServer:
    """Start a :class:`TcpServer` on a daemon thread; caller shuts it down."""
    srv = TcpServer((host, port), factory)
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    return srv
