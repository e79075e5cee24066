"""Interconnect server: subscription directory, wire table, event log,
the transport-free broker core, and the socket server wrapper."""

from msbc.interconnect.directory import (
    ParseError,
    ProviderRecord,
    RoutingRule,
    SubscriptionDirectory,
    load_directory,
    lookup_provider,
    parse_directory,
    save_directory,
)
from msbc.interconnect.events import Event, EventLog
from msbc.interconnect.wiretable import Entry, EntryState, WireAllocator, WireTable
from msbc.interconnect.broker import Broker, BrokerConfig, Outbox
from msbc.interconnect.server import BrokerServer, ServerConfig

__all__ = [
    "Broker",
    "BrokerConfig",
    "BrokerServer",
    "Entry",
    "EntryState",
    "Event",
    "EventLog",
    "Outbox",
    "ParseError",
    "ProviderRecord",
    "RoutingRule",
    "ServerConfig",
    "SubscriptionDirectory",
    "WireAllocator",
    "WireTable",
    "load_directory",
    "lookup_provider",
    "parse_directory",
    "save_directory",
]
