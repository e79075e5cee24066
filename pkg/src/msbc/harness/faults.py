"""Fault injection for scenario runs.

Faults act only on the gateway's own link machinery, so their effects reach
the broker purely through protocol behavior (silence, FIN, or a fresh
connect) -- never through shared state.
"""

from __future__ import annotations

from msbc.gateway import Gateway
from msbc.wire import Access

FAULT_KINDS = ("kill_link", "restore_link", "kill_process", "switch_endpoint")


class UnknownTarget(KeyError):
    pass


def resolve_target(registry: dict[str, Gateway], name: str) -> Gateway:
    try:
        return registry[name]
    except KeyError:
        raise UnknownTarget(name) from None


def inject_fault(
    kind: str,
    target: Gateway,
    access: Access | None = None,
    local_address: str | None = None,
) -> None:
    if kind == "kill_link":
        # the uplink goes silent: no FIN, writes vanish, reads are discarded
        target.control.set_blackhole(True)
    elif kind == "restore_link":
        target.control.set_blackhole(False)
    elif kind == "kill_process":
        # abrupt process death: sockets close (FIN) without any farewell
        target.abort()
    elif kind == "switch_endpoint":
        target.switch_endpoint(local_address=local_address, access=access)
    else:
        raise ValueError(f"unknown fault kind {kind!r}")
