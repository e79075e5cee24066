"""Transport-free broker core.

The broker terminates every gateway dialog (back-to-back user agent): wire
ids, seq numbers, and txn ids are rewritten on each leg, so the two sides of
a device entry never see each other's identifiers. All I/O happens through
an Outbox and all timing through explicit ``now_ms`` arguments, which keeps
the core single-threaded and replayable.

Connection lifecycle: a fresh connection is untyped until its first frame.
An INVITE makes it the session's signaling connection; a service-wire PING
carrying ``Call-ID`` binds it as the payload connection of that dialog.

Event kinds logged here: session_established, session_closed, commissioned,
decommissioned, released, rebound, peer_down, peer_up, buffering,
buffer_flush, buffer_dropped, packet_dropped, watchdog_expired,
protocol_error, denied.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Protocol

from msbc.session import (
    Keepalive,
    SendSignal,
    Session,
    SessionState,
    Unacceptable,
    accept,
    answer_offer,
    liveness,
    on_signal,
    receive_invite,
    reject,
)
from msbc.interconnect.directory import SubscriptionDirectory, lookup_provider
from msbc.interconnect.events import Event, EventLog
from msbc.interconnect.wiretable import End, Entry, EntryState, WireAllocator, WireTable
from msbc.wire import (
    Access,
    ControlMessage,
    DeliveryReport,
    Frame,
    MAX_FRAME_SIZE,
    Method,
    ProtocolViolation,
    Role,
    Security,
    SignalMessage,
    StreamParser,
    TxnGenerator,
    Verb,
    WirePacket,
    encode_frame,
)
from msbc.wire.types import STATUS_NO_SUCH_WIRE, STATUS_PEER_UNAVAILABLE


class Outbox(Protocol):
    def send(self, conn_id: int, data: bytes) -> None: ...

    def close(self, conn_id: int) -> None: ...


@dataclass
class BrokerConfig:
    keepalive_interval_ms: float = 5000.0
    keepalive_misses: int = 3
    buffer_max_packets: int = 1024
    buffer_max_bytes: int = 4 * 1024 * 1024
    max_frame_size: int = 16384
    subscriber_id: str = "m2m-is"
    authorize_timeout_ms: float | None = None

    @property
    def silence_budget_ms(self) -> float:
        return self.keepalive_interval_ms * self.keepalive_misses

    @property
    def authorize_deadline_ms(self) -> float:
        if self.authorize_timeout_ms is not None:
            return self.authorize_timeout_ms
        return self.silence_budget_ms


@dataclass
class _Conn:
    parser: StreamParser
    secure: bool = False
    peer: str = ""
    kind: str = "new"  # new | signal | payload
    session_id: str = ""


@dataclass
class _BrokerSession:
    id: str
    session: Session
    role: Role
    subscriber: str
    provider: str | None
    conn_signal: int | None = None
    conn_payload: int | None = None
    allocator: WireAllocator = field(default_factory=WireAllocator)
    releasing: dict[str, int] = field(default_factory=dict)
    last_ping_ms: float = -1e18


@dataclass
class _PendingAuth:
    kind: str  # commission | reattach
    asgw_id: str
    ctid: str
    wire: int
    deadline_ms: float
    requester: str = ""  # lgw session id for commissions


@dataclass
class _Relay:
    src_session: str
    src_txn: str
    src_wire: int
    src_seq: int


@dataclass
class _Buffered:
    payload: bytes
    src_session: str
    src_txn: str
    src_wire: int
    src_seq: int


class Broker:
    def __init__(
        self,
        directory: SubscriptionDirectory,
        outbox: Outbox,
        config: BrokerConfig | None = None,
        events: EventLog | None = None,
    ):
        self.directory = directory
        self.outbox = outbox
        self.config = config or BrokerConfig()
        self.events = events or EventLog()
        self.table = WireTable()
        self.conns: dict[int, _Conn] = {}
        self.sessions: dict[str, _BrokerSession] = {}
        self.txns = TxnGenerator(prefix="b")
        self.pending_auth: dict[tuple[str, str], _PendingAuth] = {}
        self.pending_relay: dict[tuple[str, str], _Relay] = {}
        self.payload_endpoints: dict[Security, str] = {}
        self.now_ms = 0.0

    def configure_endpoints(self, plain: str, secure: str) -> None:
        self.payload_endpoints = {Security.PLAIN: plain, Security.SECURE: secure}

    # -- connection lifecycle ------------------------------------------------

    def on_connect(self, conn_id: int, secure: bool = False, peer: str = "") -> None:
        self.conns[conn_id] = _Conn(
            parser=StreamParser(max_payload=MAX_FRAME_SIZE), secure=secure, peer=peer
        )

    def on_bytes(self, conn_id: int, data: bytes, now_ms: float) -> None:
        self.now_ms = now_ms
        conn = self.conns.get(conn_id)
        if conn is None:
            return
        try:
            frames = conn.parser.feed(data)
        except ProtocolViolation as exc:
            self._drop_conn(conn_id, f"unparseable: {exc.reason}")
            return
        for frame in frames:
            if conn_id not in self.conns:  # an earlier frame closed us
                return
            self._dispatch(conn_id, conn, frame)

    def on_disconnect(self, conn_id: int, now_ms: float) -> None:
        self.now_ms = now_ms
        conn = self.conns.pop(conn_id, None)
        if conn is None or not conn.session_id:
            return
        bs = self.sessions.get(conn.session_id)
        if bs is None:
            return
        if conn_id == bs.conn_signal:
            bs.conn_signal = None
            self._session_lost(bs, "connection-lost")
        elif conn_id == bs.conn_payload:
            bs.conn_payload = None  # session survives a payload drop

    def on_tick(self, now_ms: float) -> None:
        self.now_ms = now_ms
        cfg = self.config
        for bs in list(self.sessions.values()):
            state = bs.session.state
            if state is SessionState.CLOSED:
                continue
            verdict = liveness(
                bs.session.last_activity, now_ms, cfg.keepalive_interval_ms, cfg.keepalive_misses
            )
            if verdict is Keepalive.EXPIRED:
                silent = now_ms - bs.session.last_activity
                self._event("watchdog_expired", session=bs.id, detail=f"silent_ms={silent:.0f}")
                self._session_lost(bs, "watchdog")
            elif verdict is Keepalive.SEND_PING and state is SessionState.ESTABLISHED:
                if now_ms - bs.last_ping_ms >= cfg.keepalive_interval_ms:
                    bs.last_ping_ms = now_ms
                    self._send_control(bs, Verb.PING, {})
        for key, pending in list(self.pending_auth.items()):
            if now_ms < pending.deadline_ms:
                continue
            del self.pending_auth[key]
            asgw = self.sessions.get(pending.asgw_id)
            if asgw is not None:
                asgw.allocator.cancel(pending.wire)
            if pending.kind == "commission":
                requester = self.sessions.get(pending.requester)
                if requester is not None:
                    self._send_control(
                        requester,
                        Verb.ERROR,
                        {"Ctid": pending.ctid, "Reason": "provider-timeout"},
                    )

    # -- frame dispatch ------------------------------------------------------

    def _dispatch(self, conn_id: int, conn: _Conn, frame: Frame) -> None:
        if isinstance(frame, SignalMessage):
            self._on_signal_frame(conn_id, conn, frame)
        elif isinstance(frame, ControlMessage):
            self._on_control(conn_id, conn, frame)
        elif isinstance(frame, WirePacket):
            self._on_send(conn_id, conn, frame)
        else:
            self._on_report(conn_id, conn, frame)

    # -- signaling -----------------------------------------------------------

    def _on_signal_frame(self, conn_id: int, conn: _Conn, msg: SignalMessage) -> None:
        if conn.kind == "payload":
            self._drop_conn(conn_id, "signaling on payload connection")
            return
        bs = self.sessions.get(msg.call_id)
        if bs is None:
            if msg.is_request and msg.method is Method.INVITE:
                self._on_invite(conn_id, conn, msg)
            elif msg.is_request:
                self._send_raw(conn_id, self._stray_481(msg))
            return
        self._touch(bs)
        before = bs.session.state
        bs.session, actions = on_signal(bs.session, msg, self.now_ms, txn=self.txns.next())
        for action in actions:
            if isinstance(action, SendSignal):
                self._send_raw(conn_id, encode_frame(action.msg))
        after = bs.session.state
        if before is not SessionState.ESTABLISHED and after is SessionState.ESTABLISHED:
            self._on_established(bs)
        if before is not SessionState.CLOSED and after is SessionState.CLOSED:
            self._session_lost(bs, "bye" if msg.is_request else "signal-close")

    def _on_invite(self, conn_id: int, conn: _Conn, msg: SignalMessage) -> None:
        offer = msg.body
        sess = receive_invite(msg, self.now_ms, remote_endpoint=conn.peer)
        role, provider = offer.role, offer.provider
        if role is Role.ASGW:
            record = self.directory.providers.get(provider or "")
            if record is None or record.subscriber != msg.from_id:
                sess, out = reject(sess, 403, "Forbidden", self.txns.next(), Access.RADIO)
                self._send_raw(conn_id, encode_frame(out))
                self._event(
                    "protocol_error", session=msg.call_id, detail=f"forbidden provider={provider}"
                )
                return
        secure = msg.access is Access.INTERNET
        endpoint = self.payload_endpoints.get(
            Security.SECURE if secure else Security.PLAIN, "127.0.0.1:0"
        )
        try:
            answer = answer_offer(offer, msg.access, Access.RADIO, self.config.max_frame_size, endpoint)
        except Unacceptable as exc:
            sess, out = reject(sess, 488, "Not Acceptable", self.txns.next(), Access.RADIO)
            self._send_raw(conn_id, encode_frame(out))
            self._event("protocol_error", session=msg.call_id, detail=str(exc))
            return
        sess, out = accept(sess, answer, self.txns.next(), Access.RADIO)
        bs = _BrokerSession(
            id=msg.call_id,
            session=sess,
            role=role,
            subscriber=msg.from_id,
            provider=provider,
            conn_signal=conn_id,
        )
        self.sessions[bs.id] = bs
        conn.kind = "signal"
        conn.session_id = bs.id
        self._send_raw(conn_id, encode_frame(out))

    def _on_established(self, bs: _BrokerSession) -> None:
        self._event(
            "session_established",
            session=bs.id,
            detail=f"role={bs.role.value} subscriber={bs.subscriber}",
        )
        for other in list(self.sessions.values()):
            if other.id == bs.id or other.session.state is not SessionState.ESTABLISHED:
                continue
            if bs.role is Role.LGW and other.role is Role.LGW and other.subscriber == bs.subscriber:
                self._supersede_lgw(other, bs)
            elif bs.role is Role.ASGW and other.role is Role.ASGW and other.provider == bs.provider:
                self._supersede_asgw(other, bs)
        if bs.role is Role.ASGW:
            self._provider_return(bs)

    def _supersede_lgw(self, old: _BrokerSession, new: _BrokerSession) -> None:
        """Same subscriber reconnected (access switch): move its wires over
        without touching the provider side, so the switch stays invisible."""
        for entry in self.table.entries_for_session(old.id):
            if entry.lgw is None or entry.lgw.session_id != old.id:
                continue
            wire = new.allocator.allocate()
            self.table.bind(entry, "lgw", End(new.id, wire))
            self._event("rebound", session=new.id, ctid=entry.ctid, wire=wire, detail=f"from={old.id}")
        self._close_quietly(old, "superseded")

    def _supersede_asgw(self, old: _BrokerSession, new: _BrokerSession) -> None:
        for entry in self.table.entries_for_session(old.id):
            if entry.asgw is None or entry.asgw.session_id != old.id:
                continue
            gone = self.table.unbind(entry, "asgw")
            entry.state = EntryState.BUFFERING
            self._event("buffering", session=old.id, ctid=entry.ctid, wire=gone.wire, detail="superseded")
        self._close_quietly(old, "superseded")

    def _provider_return(self, bs: _BrokerSession) -> None:
        for entry in self.table.entries_for_provider(bs.provider or ""):
            if entry.state is not EntryState.BUFFERING or entry.asgw is not None:
                continue
            if (bs.id, entry.ctid) in self.pending_auth:
                continue
            wire = bs.allocator.allocate()
            self.pending_auth[(bs.id, entry.ctid)] = _PendingAuth(
                kind="reattach",
                asgw_id=bs.id,
                ctid=entry.ctid,
                wire=wire,
                deadline_ms=self.now_ms + self.config.authorize_deadline_ms,
            )
            self._send_control(bs, Verb.AUTHORIZE, {"Ctid": entry.ctid, "Wire": str(wire)})

    # -- service wire --------------------------------------------------------

    def _on_control(self, conn_id: int, conn: _Conn, msg: ControlMessage) -> None:
        if conn.kind == "new":
            if msg.verb is Verb.PING and "Call-ID" in msg.params:
                self._attach_payload(conn_id, conn, msg)
            else:
                self._drop_conn(conn_id, "unbound connection sent control traffic")
            return
        bs = self.sessions.get(conn.session_id)
        if bs is None:
            self._drop_conn(conn_id, "control for dead session")
            return
        self._touch(bs)
        verb = msg.verb
        if verb is Verb.PING:
            self._send_control(bs, Verb.PONG, dict(msg.params), conn_id=conn_id)
        elif verb is Verb.PONG:
            pass
        elif verb is Verb.COMMISSION:
            self._on_commission(bs, msg)
        elif verb is Verb.DECOMMISSION:
            self._on_decommission(bs, msg)
        elif verb is Verb.AUTHORIZED:
            self._on_authorized(bs, msg)
        elif verb is Verb.DENIED:
            self._on_denied(bs, msg)
        elif verb is Verb.DECOMMISSIONED:
            self._on_teardown_ack(bs, msg)
        # COMMISSIONED / PEER-* / ERROR are broker-to-gateway only; ignore.

    def _attach_payload(self, conn_id: int, conn: _Conn, msg: ControlMessage) -> None:
        call_id = msg.params["Call-ID"]
        bs = self.sessions.get(call_id)
        if bs is None or bs.session.state is not SessionState.ESTABLISHED:
            self._send_raw(
                conn_id,
                encode_frame(
                    ControlMessage(Verb.ERROR, {"Reason": "unknown-dialog"}, txn=self.txns.next())
                ),
            )
            self._drop_conn(conn_id, "payload attach to unknown dialog")
            return
        negotiated = bs.session.negotiated
        if negotiated is not None and negotiated.security is Security.SECURE and not conn.secure:
            self._send_raw(
                conn_id,
                encode_frame(
                    ControlMessage(Verb.ERROR, {"Reason": "secure-required"}, txn=self.txns.next())
                ),
            )
            self._drop_conn(conn_id, "plain payload attach to secure dialog")
            return
        if bs.conn_payload is not None and bs.conn_payload in self.conns:
            self._drop_conn(bs.conn_payload, "payload connection replaced")
        conn.kind = "payload"
        conn.session_id = call_id
        bs.conn_payload = conn_id
        self._touch(bs)
        self._send_raw(
            conn_id,
            encode_frame(
                ControlMessage(Verb.PONG, {"Call-ID": call_id}, txn=self.txns.next())
            ),
        )
        for entry in self.table.entries_for_session(bs.id):
            if entry.state is EntryState.ACTIVE and entry.buffer:
                self._flush_buffer(entry, bs)

    def _on_commission(self, bs: _BrokerSession, msg: ControlMessage) -> None:
        ctid = msg.ctid
        if bs.role is not Role.LGW:
            self._send_control(bs, Verb.ERROR, {"Ctid": ctid, "Reason": "not-allowed"})
            return
        existing = self.table.by_ctid.get(ctid)
        if existing is not None:
            if existing.lgw is not None and existing.lgw.session_id == bs.id:
                # Re-ask after reconnect: answer with the wire already bound.
                self._send_control(
                    bs, Verb.COMMISSIONED, {"Ctid": ctid, "Wire": str(existing.lgw.wire)}
                )
            else:
                self._send_control(bs, Verb.ERROR, {"Ctid": ctid, "Reason": "duplicate"})
            return
        provider = lookup_provider(self.directory, ctid)
        if provider is None:
            self._send_control(bs, Verb.ERROR, {"Ctid": ctid, "Reason": "no-route"})
            return
        asgw = self._provider_session(provider)
        if asgw is None:
            self._send_control(bs, Verb.ERROR, {"Ctid": ctid, "Reason": "provider-unavailable"})
            return
        if (asgw.id, ctid) in self.pending_auth:
            self._send_control(bs, Verb.ERROR, {"Ctid": ctid, "Reason": "busy"})
            return
        wire = asgw.allocator.allocate()
        self.pending_auth[(asgw.id, ctid)] = _PendingAuth(
            kind="commission",
            asgw_id=asgw.id,
            ctid=ctid,
            wire=wire,
            deadline_ms=self.now_ms + self.config.authorize_deadline_ms,
            requester=bs.id,
        )
        self._send_control(asgw, Verb.AUTHORIZE, {"Ctid": ctid, "Wire": str(wire)})

    def _on_authorized(self, bs: _BrokerSession, msg: ControlMessage) -> None:
        pending = self.pending_auth.pop((bs.id, msg.ctid), None)
        if pending is None:
            return
        if pending.kind == "reattach":
            entry = self.table.by_ctid.get(pending.ctid)
            if entry is None or entry.state is not EntryState.BUFFERING or entry.asgw is not None:
                bs.allocator.cancel(pending.wire)
                return
            self.table.bind(entry, "asgw", End(bs.id, pending.wire))
            entry.state = EntryState.ACTIVE
            self._event("peer_up", session=bs.id, ctid=entry.ctid, wire=pending.wire)
            if entry.buffer:
                self._flush_buffer(entry, bs)
            return
        requester = self.sessions.get(pending.requester)
        if requester is None or requester.session.state is not SessionState.ESTABLISHED:
            bs.allocator.cancel(pending.wire)
            return
        if self.table.by_ctid.get(pending.ctid) is not None:
            bs.allocator.cancel(pending.wire)
            self._send_control(requester, Verb.ERROR, {"Ctid": pending.ctid, "Reason": "duplicate"})
            return
        wire = requester.allocator.allocate()
        entry = Entry(
            ctid=pending.ctid,
            provider=bs.provider or "",
            state=EntryState.ACTIVE,
            lgw=End(requester.id, wire),
            asgw=End(bs.id, pending.wire),
        )
        self.table.add(entry)
        self._event(
            "commissioned",
            session=requester.id,
            ctid=pending.ctid,
            wire=wire,
            detail=f"provider={bs.provider} asgw_wire={pending.wire}",
        )
        self._send_control(requester, Verb.COMMISSIONED, {"Ctid": pending.ctid, "Wire": str(wire)})

    def _on_denied(self, bs: _BrokerSession, msg: ControlMessage) -> None:
        pending = self.pending_auth.pop((bs.id, msg.ctid), None)
        if pending is None:
            return
        bs.allocator.cancel(pending.wire)
        self._event("denied", session=bs.id, ctid=pending.ctid, detail=pending.kind)
        if pending.kind == "commission":
            requester = self.sessions.get(pending.requester)
            if requester is not None:
                self._send_control(requester, Verb.ERROR, {"Ctid": pending.ctid, "Reason": "denied"})

    def _on_decommission(self, bs: _BrokerSession, msg: ControlMessage) -> None:
        ctid = msg.ctid
        entry = self.table.by_ctid.get(ctid)
        if entry is None or entry.side_for(bs.id) is None:
            self._send_control(bs, Verb.DECOMMISSIONED, {"Ctid": ctid})
            return
        self._remove_entry(entry, reason=f"decommission by {bs.id}")

    def _on_teardown_ack(self, bs: _BrokerSession, msg: ControlMessage) -> None:
        wire = bs.releasing.pop(msg.ctid, None)
        if wire is None:
            return
        bs.allocator.finish_release(wire)
        self._event("released", session=bs.id, ctid=msg.ctid, wire=wire)

    def _remove_entry(self, entry: Entry, reason: str) -> None:
        self.table.remove(entry.ctid)
        if entry.buffer:
            self._event(
                "buffer_dropped", ctid=entry.ctid, detail=f"count={len(entry.buffer)}"
            )
            entry.buffer = []
            entry.buffer_bytes = 0
        for end in (entry.lgw, entry.asgw):
            if end is None:
                continue
            owner = self.sessions.get(end.session_id)
            if owner is None or owner.session.state is not SessionState.ESTABLISHED:
                continue
            owner.allocator.start_release(end.wire)
            owner.releasing[entry.ctid] = end.wire
            self._send_control(owner, Verb.DECOMMISSIONED, {"Ctid": entry.ctid})
        self._event("decommissioned", ctid=entry.ctid, detail=reason)

    # -- payload path --------------------------------------------------------

    def _on_send(self, conn_id: int, conn: _Conn, pkt: WirePacket) -> None:
        if conn.kind != "payload":
            self._drop_conn(conn_id, "data frame outside payload connection")
            return
        bs = self.sessions.get(conn.session_id)
        if bs is None:
            self._drop_conn(conn_id, "data for dead session")
            return
        self._touch(bs)
        negotiated = bs.session.negotiated
        if negotiated is not None and len(pkt.payload) > negotiated.max_frame_size:
            self._session_protocol_error(bs, "frame-too-large")
            return
        entry = self.table.lookup_end(bs.id, pkt.wire)
        if entry is None:
            self._report(conn_id, pkt, STATUS_NO_SUCH_WIRE)
            return
        end = entry.side_for(bs.id)
        if pkt.seq != end.next_seq_in:
            self._event(
                "protocol_error",
                session=bs.id,
                ctid=entry.ctid,
                detail=f"seq {pkt.seq} expected {end.next_seq_in}",
            )
            self._session_protocol_error(bs, "seq-violation")
            return
        end.next_seq_in += 1
        if entry.state is EntryState.BUFFERING or entry.buffer:
            self._buffer_packet(bs, entry, pkt)
            return
        dst = entry.other_side(bs.id)
        dst_sess = self.sessions.get(dst.session_id) if dst is not None else None
        if dst_sess is None or dst_sess.conn_payload is None:
            self._report(conn_id, pkt, STATUS_PEER_UNAVAILABLE)
            return
        txn = self.txns.next()
        self.pending_relay[(dst_sess.id, txn)] = _Relay(bs.id, pkt.txn, pkt.wire, pkt.seq)
        out = WirePacket(txn=txn, wire=dst.wire, seq=dst.next_seq_out, payload=pkt.payload)
        dst.next_seq_out += 1
        self._send_raw(dst_sess.conn_payload, encode_frame(out))

    def _buffer_packet(self, bs: _BrokerSession, entry: Entry, pkt: WirePacket) -> None:
        cfg = self.config
        if (
            len(entry.buffer) >= cfg.buffer_max_packets
            or entry.buffer_bytes + len(pkt.payload) > cfg.buffer_max_bytes
        ):
            self._event("packet_dropped", ctid=entry.ctid, detail="buffer-full")
            if bs.conn_payload is not None:
                self._report(bs.conn_payload, pkt, STATUS_PEER_UNAVAILABLE)
            return
        entry.buffer.append(_Buffered(pkt.payload, bs.id, pkt.txn, pkt.wire, pkt.seq))
        entry.buffer_bytes += len(pkt.payload)

    def _flush_buffer(self, entry: Entry, asgw: _BrokerSession) -> None:
        if asgw.conn_payload is None or entry.asgw is None:
            return
        parked = entry.buffer
        entry.buffer = []
        entry.buffer_bytes = 0
        for item in parked:
            txn = self.txns.next()
            self.pending_relay[(asgw.id, txn)] = _Relay(
                item.src_session, item.src_txn, item.src_wire, item.src_seq
            )
            out = WirePacket(
                txn=txn, wire=entry.asgw.wire, seq=entry.asgw.next_seq_out, payload=item.payload
            )
            entry.asgw.next_seq_out += 1
            self._send_raw(asgw.conn_payload, encode_frame(out))
        self._event("buffer_flush", session=asgw.id, ctid=entry.ctid, detail=f"count={len(parked)}")

    def _on_report(self, conn_id: int, conn: _Conn, rpt: DeliveryReport) -> None:
        if conn.kind != "payload":
            self._drop_conn(conn_id, "report outside payload connection")
            return
        bs = self.sessions.get(conn.session_id)
        if bs is None:
            return
        self._touch(bs)
        relay = self.pending_relay.pop((bs.id, rpt.txn), None)
        if relay is None:
            return
        src = self.sessions.get(relay.src_session)
        if src is None or src.conn_payload is None:
            return
        out = DeliveryReport(
            txn=relay.src_txn, wire=relay.src_wire, seq=relay.src_seq, status=rpt.status
        )
        self._send_raw(src.conn_payload, encode_frame(out))

    # -- teardown ------------------------------------------------------------

    def _session_lost(self, bs: _BrokerSession, reason: str) -> None:
        if bs.id not in self.sessions:
            return
        del self.sessions[bs.id]
        self._event("session_closed", session=bs.id, detail=reason)
        for ctid, wire in bs.releasing.items():
            self._event("released", session=bs.id, ctid=ctid, wire=wire)
        bs.releasing.clear()
        for entry in self.table.entries_for_session(bs.id):
            side = entry.side_for(bs.id)
            if side is None:
                continue
            if bs.role is Role.LGW:
                self.table.remove(entry.ctid)
                self._event("peer_down", session=bs.id, ctid=entry.ctid, wire=side.wire)
                self._event("released", session=bs.id, ctid=entry.ctid, wire=side.wire)
                if entry.buffer:
                    self._event("buffer_dropped", ctid=entry.ctid, detail=f"count={len(entry.buffer)}")
                peer = entry.asgw
                if peer is not None:
                    owner = self.sessions.get(peer.session_id)
                    if owner is not None:
                        owner.allocator.start_release(peer.wire)
                        owner.releasing[entry.ctid] = peer.wire
                        self._send_control(owner, Verb.PEER_DOWN, {"Ctid": entry.ctid})
            else:
                self.table.unbind(entry, "asgw")
                entry.state = EntryState.BUFFERING
                self._event("buffering", session=bs.id, ctid=entry.ctid, wire=side.wire, detail=reason)
                self._event("released", session=bs.id, ctid=entry.ctid, wire=side.wire)
        for key, pending in list(self.pending_auth.items()):
            if pending.asgw_id == bs.id:
                del self.pending_auth[key]
                requester = self.sessions.get(pending.requester)
                if pending.kind == "commission" and requester is not None:
                    self._send_control(
                        requester,
                        Verb.ERROR,
                        {"Ctid": pending.ctid, "Reason": "provider-unavailable"},
                    )
            elif pending.requester == bs.id:
                del self.pending_auth[key]
                asgw = self.sessions.get(pending.asgw_id)
                if asgw is not None:
                    asgw.allocator.cancel(pending.wire)
        for key, relay in list(self.pending_relay.items()):
            if key[0] == bs.id:
                del self.pending_relay[key]
                src = self.sessions.get(relay.src_session)
                if src is not None and src.conn_payload is not None:
                    out = DeliveryReport(
                        txn=relay.src_txn,
                        wire=relay.src_wire,
                        seq=relay.src_seq,
                        status=STATUS_PEER_UNAVAILABLE,
                    )
                    self._send_raw(src.conn_payload, encode_frame(out))
            elif relay.src_session == bs.id:
                del self.pending_relay[key]
        self._close_session_conns(bs)

    def _close_quietly(self, bs: _BrokerSession, reason: str) -> None:
        """Retire a superseded session without touching its former wires."""
        self.sessions.pop(bs.id, None)
        self._event("session_closed", session=bs.id, detail=reason)
        self._close_session_conns(bs)

    def _close_session_conns(self, bs: _BrokerSession) -> None:
        for conn_id in (bs.conn_signal, bs.conn_payload):
            if conn_id is not None and conn_id in self.conns:
                del self.conns[conn_id]
                self.outbox.close(conn_id)
        bs.conn_signal = bs.conn_payload = None

    def _session_protocol_error(self, bs: _BrokerSession, reason: str) -> None:
        self._send_control(bs, Verb.ERROR, {"Reason": reason})
        self._event("protocol_error", session=bs.id, detail=reason)
        self._session_lost(bs, reason)

    # -- plumbing ------------------------------------------------------------

    def _provider_session(self, provider: str) -> _BrokerSession | None:
        for bs in self.sessions.values():
            if (
                bs.role is Role.ASGW
                and bs.provider == provider
                and bs.session.state is SessionState.ESTABLISHED
            ):
                return bs
        return None

    def _send_control(
        self, bs: _BrokerSession, verb: Verb, params: dict[str, str], conn_id: int | None = None
    ) -> None:
        target = conn_id if conn_id is not None else bs.conn_signal
        if target is None:
            return
        msg = ControlMessage(verb, params, txn=self.txns.next())
        self._send_raw(target, encode_frame(msg))

    def _report(self, conn_id: int, pkt: WirePacket, status: int) -> None:
        out = DeliveryReport(txn=pkt.txn, wire=pkt.wire, seq=pkt.seq, status=status)
        self._send_raw(conn_id, encode_frame(out))

    def _send_raw(self, conn_id: int, data: bytes) -> None:
        self.outbox.send(conn_id, data)

    def _drop_conn(self, conn_id: int, reason: str) -> None:
        conn = self.conns.pop(conn_id, None)
        self._event("protocol_error", detail=reason)
        self.outbox.close(conn_id)
        if conn is not None and conn.session_id:
            bs = self.sessions.get(conn.session_id)
            if bs is not None and conn_id == bs.conn_signal:
                bs.conn_signal = None
                self._session_lost(bs, reason)
            elif bs is not None and conn_id == bs.conn_payload:
                bs.conn_payload = None

    def _touch(self, bs: _BrokerSession) -> None:
        bs.session = replace(bs.session, last_activity=self.now_ms)

    def _event(
        self, kind: str, session: str = "", ctid: str = "", wire: int = -1, detail: str = ""
    ) -> None:
        self.events.append(Event(self.now_ms, kind, session, ctid, wire, detail))

    def _stray_481(self, msg: SignalMessage) -> bytes:
        out = SignalMessage(
            kind="response",
            status=481,
            reason="Call/Transaction Does Not Exist",
            from_id=self.config.subscriber_id,
            to_id=msg.from_id,
            call_id=msg.call_id,
            cseq=msg.cseq,
            access=Access.RADIO,
            txn=self.txns.next(),
        )
        return encode_frame(out)


# Imports used by callers wiring a broker without the socket server.
__all__ = [
    "Broker",
    "BrokerConfig",
    "Outbox",
]
