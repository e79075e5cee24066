"""MSBC: session-based machine-to-machine messaging at desk scale.

Subpackages:
  wire          frame types and the bit-exact text codec
  session       signaling state machine and channel negotiation
  interconnect  the broker: directory, wire table, routing, watchdog
  gateway       client SDK for both gateway roles
  harness       scenario runner, fault injection, smart-home simulation
"""

__version__ = "0.1.0"
