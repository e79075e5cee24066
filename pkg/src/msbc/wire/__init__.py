"""Text framing and parsing for the MSBC session protocol."""

from msbc.wire.codec import ProtocolViolation, StreamParser, decode_stream, encode_frame
from msbc.wire.txn import TxnGenerator, next_txn
from msbc.wire.types import (
    Access,
    ControlMessage,
    DEFAULT_FRAME_SIZE,
    DeliveryReport,
    Frame,
    FrameKind,
    InvalidFrame,
    MAX_FRAME_SIZE,
    MIN_FRAME_SIZE,
    Method,
    Role,
    SERVICE_WIRE,
    STATUS_DELIVERED,
    STATUS_NO_SUCH_WIRE,
    STATUS_PEER_UNAVAILABLE,
    Security,
    SessionOffer,
    SignalMessage,
    Verb,
    WirePacket,
)

__all__ = [
    "Access",
    "ControlMessage",
    "DEFAULT_FRAME_SIZE",
    "DeliveryReport",
    "Frame",
    "FrameKind",
    "InvalidFrame",
    "MAX_FRAME_SIZE",
    "MIN_FRAME_SIZE",
    "Method",
    "ProtocolViolation",
    "Role",
    "SERVICE_WIRE",
    "STATUS_DELIVERED",
    "STATUS_NO_SUCH_WIRE",
    "STATUS_PEER_UNAVAILABLE",
    "Security",
    "SessionOffer",
    "SignalMessage",
    "StreamParser",
    "TxnGenerator",
    "Verb",
    "WirePacket",
    "decode_stream",
    "encode_frame",
    "next_txn",
]
