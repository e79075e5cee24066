"""Socket server around the broker core.

Threading model: one reader thread per accepted connection and one ticker,
all funnelling into a queue drained by a single broker thread. The core
therefore runs strictly single-threaded; reader threads never touch it.

Three listeners: signaling, plain payload, and TLS payload. The TLS
listener uses a fresh self-signed certificate generated at startup, which
is all a closed operator domain needs -- gateways connect without
verification and rely on the channel for confidentiality only.
"""

from __future__ import annotations

import ipaddress
import logging
import queue
import socket
import ssl
import tempfile
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

from msbc.interconnect.broker import Broker, BrokerConfig
from msbc.interconnect.directory import SubscriptionDirectory
from msbc.interconnect.events import EventLog

log = logging.getLogger("msbc.interconnect")

_RECV_SIZE = 65536


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    signal_port: int = 0  # 0 picks an ephemeral port
    payload_port: int = 0
    payload_tls_port: int = 0
    keepalive_interval_ms: float = 5000.0
    keepalive_misses: int = 3
    buffer_max_packets: int = 1024
    buffer_max_bytes: int = 4 * 1024 * 1024
    max_frame_size: int = 16384

    def broker_config(self) -> BrokerConfig:
        return BrokerConfig(
            keepalive_interval_ms=self.keepalive_interval_ms,
            keepalive_misses=self.keepalive_misses,
            buffer_max_packets=self.buffer_max_packets,
            buffer_max_bytes=self.buffer_max_bytes,
            max_frame_size=self.max_frame_size,
        )

    @property
    def tick_ms(self) -> float:
        # Frequent enough to keep watchdog latency within one interval slice.
        return min(1000.0, max(5.0, self.keepalive_interval_ms / 4))


def now_ms() -> float:
    return time.monotonic() * 1000.0


class _SocketOutbox:
    """Outbox writing straight to sockets from the broker thread."""

    def __init__(self, server: "BrokerServer"):
        self._server = server

    def send(self, conn_id: int, data: bytes) -> None:
        sock = self._server._socket_for(conn_id)
        if sock is None:
            return
        try:
            sock.sendall(data)
        except OSError:
            self._server._queue.put(("disconnect", conn_id))

    def close(self, conn_id: int) -> None:
        self._server._drop_socket(conn_id)


class BrokerServer:
    def __init__(
        self,
        directory: SubscriptionDirectory,
        config: ServerConfig | None = None,
        events: EventLog | None = None,
    ):
        self.config = config or ServerConfig()
        self.events = events or EventLog()
        self.broker = Broker(directory, _SocketOutbox(self), self.config.broker_config(), self.events)
        self._queue: queue.Queue = queue.Queue()
        self._sockets: dict[int, socket.socket] = {}
        self._lock = threading.Lock()
        self._next_conn = 0
        self._listeners: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self.signal_endpoint = ""
        self.payload_endpoint = ""
        self.payload_tls_endpoint = ""

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        cfg = self.config
        tls_context = _self_signed_context()
        signal_l = self._listen(cfg.signal_port)
        payload_l = self._listen(cfg.payload_port)
        tls_l = self._listen(cfg.payload_tls_port)
        self.signal_endpoint = _endpoint_of(signal_l)
        self.payload_endpoint = _endpoint_of(payload_l)
        self.payload_tls_endpoint = _endpoint_of(tls_l)
        self.broker.configure_endpoints(self.payload_endpoint, self.payload_tls_endpoint)
        self._spawn(self._accept_loop, signal_l, False, None)
        self._spawn(self._accept_loop, payload_l, False, None)
        self._spawn(self._accept_loop, tls_l, True, tls_context)
        self._spawn(self._broker_loop)
        self._spawn(self._tick_loop)
        log.info(
            "broker up: signal=%s payload=%s payload+tls=%s",
            self.signal_endpoint,
            self.payload_endpoint,
            self.payload_tls_endpoint,
        )

    def stop(self) -> None:
        self._stop.set()
        for listener in self._listeners:
            _quiet_close(listener)
        self._queue.put(("halt",))
        with self._lock:
            sockets = list(self._sockets.values())
            self._sockets.clear()
        for sock in sockets:
            _quiet_close(sock)
        for thread in self._threads:
            thread.join(timeout=5)

    def __enter__(self) -> "BrokerServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- internals -----------------------------------------------------------

    def _listen(self, port: int) -> socket.socket:
        sock = socket.create_server((self.config.host, port), backlog=64)
        self._listeners.append(sock)
        return sock

    def _spawn(self, target, *args) -> None:
        thread = threading.Thread(target=target, args=args, daemon=True)
        thread.start()
        self._threads.append(thread)

    def _accept_loop(self, listener: socket.socket, secure: bool, tls_context) -> None:
        while not self._stop.is_set():
            try:
                sock, addr = listener.accept()
            except OSError:
                return
            threading.Thread(
                target=self._serve_conn, args=(sock, addr, secure, tls_context), daemon=True
            ).start()

    def _serve_conn(self, sock: socket.socket, addr, secure: bool, tls_context) -> None:
        if tls_context is not None:
            try:
                sock = tls_context.wrap_socket(sock, server_side=True)
            except (OSError, ssl.SSLError):
                _quiet_close(sock)
                return
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        with self._lock:
            conn_id = self._next_conn
            self._next_conn += 1
            self._sockets[conn_id] = sock
        self._queue.put(("connect", conn_id, secure, f"{addr[0]}:{addr[1]}"))
        while not self._stop.is_set():
            try:
                data = sock.recv(_RECV_SIZE)
            except OSError:
                break
            if not data:
                break
            self._queue.put(("bytes", conn_id, data))
        self._queue.put(("disconnect", conn_id))

    def _broker_loop(self) -> None:
        while True:
            item = self._queue.get()
            kind = item[0]
            if kind == "halt":
                return
            try:
                if kind == "bytes":
                    self.broker.on_bytes(item[1], item[2], now_ms())
                elif kind == "connect":
                    self.broker.on_connect(item[1], secure=item[2], peer=item[3])
                elif kind == "disconnect":
                    if self._socket_for(item[1]) is not None or item[1] in self.broker.conns:
                        self._drop_socket(item[1])
                        self.broker.on_disconnect(item[1], now_ms())
                elif kind == "tick":
                    self.broker.on_tick(now_ms())
            except Exception:
                log.exception("broker dispatch failed for %s", kind)

    def _tick_loop(self) -> None:
        # absolute deadlines: wakeup jitter must not accumulate into drift,
        # or the watchdog's one-tick detection slack quietly erodes
        interval = self.config.tick_ms / 1000.0
        deadline = time.monotonic() + interval
        while not self._stop.wait(max(0.0, deadline - time.monotonic())):
            self._queue.put(("tick",))
            deadline += interval
            if deadline < time.monotonic():  # stalled; skip, don't burst
                deadline = time.monotonic() + interval

    def _socket_for(self, conn_id: int) -> socket.socket | None:
        with self._lock:
            return self._sockets.get(conn_id)

    def _drop_socket(self, conn_id: int) -> None:
        with self._lock:
            sock = self._sockets.pop(conn_id, None)
        if sock is not None:
            _quiet_close(sock)


def _endpoint_of(listener: socket.socket) -> str:
    host, port = listener.getsockname()[:2]
    return f"{host}:{port}"


def _quiet_close(sock: socket.socket) -> None:
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass


def _self_signed_context() -> ssl.SSLContext:
    """Ephemeral server certificate; peers connect without verification."""
    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import ec
    from cryptography.x509.oid import NameOID

    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "m2m-is")])
    now = datetime.now(timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - timedelta(days=1))
        .not_valid_after(now + timedelta(days=365))
        .add_extension(
            x509.SubjectAlternativeName(
                [
                    x509.DNSName("localhost"),
                    x509.IPAddress(ipaddress.ip_address("127.0.0.1")),
                ]
            ),
            critical=False,
        )
        .sign(key, hashes.SHA256())
    )
    context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    with tempfile.TemporaryDirectory() as tmp:
        cert_path = Path(tmp) / "cert.pem"
        key_path = Path(tmp) / "key.pem"
        cert_path.write_bytes(cert.public_bytes(serialization.Encoding.PEM))
        key_path.write_bytes(
            key.private_bytes(
                serialization.Encoding.PEM,
                serialization.PrivateFormat.PKCS8,
                serialization.NoEncryption(),
            )
        )
        context.load_cert_chain(cert_path, key_path)
    return context


def client_tls_context() -> ssl.SSLContext:
    """Client side of the operator-domain TLS policy: encrypt, don't verify."""
    context = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
    context.check_hostname = False
    context.verify_mode = ssl.CERT_NONE
    return context
