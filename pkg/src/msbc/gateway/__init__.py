"""Gateway SDK: session setup, device attachment, transmit with delivery
reports, and automatic reconnection, for both home (lgw) and provider
(asgw) roles."""

from msbc.gateway.api import (
    AttachError,
    Attachment,
    Delivery,
    DeliveryStatus,
    Gateway,
    GatewayConfig,
    GatewayState,
    Receiver,
    SessionRejected,
    open_gateway,
)
from msbc.gateway.link import Link, LinkControl

__all__ = [
    "AttachError",
    "Attachment",
    "Delivery",
    "DeliveryStatus",
    "Gateway",
    "GatewayConfig",
    "GatewayState",
    "Link",
    "LinkControl",
    "Receiver",
    "SessionRejected",
    "open_gateway",
]
