"""Smart-home topology: one home gateway, ten simulated devices, and five
service providers, all talking through a private broker.

Device traffic is simulated in-process; providers both consume readings and
push commands back down to actuators.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass, field

from msbc.gateway import DeliveryStatus, Gateway, GatewayConfig, open_gateway
from msbc.harness.scenario import RecordingReceiver
from msbc.interconnect import BrokerServer, ServerConfig, parse_directory
from msbc.wire import Role

DIRECTORY_TEXT = """
provider health subscriber=as-health
provider automation subscriber=as-automation
provider utility subscriber=as-utility
provider grocery subscriber=as-grocery
provider security subscriber=as-security

rule heart.* -> health
rule light.* -> automation
rule fan.* -> automation
rule thermometer.* -> automation
rule meter.* -> utility
rule bottle.* -> grocery
rule door.* -> security
rule camera.* -> security
"""

PROVIDERS = {
    "health": "as-health",
    "automation": "as-automation",
    "utility": "as-utility",
    "grocery": "as-grocery",
    "security": "as-security",
}

DEVICES = (
    "heart.monitor",
    "light.living",
    "light.kitchen",
    "light.porch",
    "fan.ceiling",
    "thermometer.indoor",
    "meter.electric",
    "bottle.milk",
    "door.front",
    "camera.entry",
)

ACTUATORS = ("light.living", "light.kitchen", "light.porch", "fan.ceiling")


def provider_for(ctid: str) -> str:
    prefix = ctid.split(".", 1)[0]
    return {
        "heart": "health",
        "light": "automation",
        "fan": "automation",
        "thermometer": "automation",
        "meter": "utility",
        "bottle": "grocery",
        "door": "security",
        "camera": "security",
    }[prefix]


@dataclass
class TrafficSummary:
    readings_sent: int = 0
    readings_delivered: int = 0
    commands_sent: int = 0
    commands_delivered: int = 0
    per_provider: dict[str, int] = field(default_factory=dict)


class SmartHome:
    """Running topology; use as a context manager or call start()/stop()."""

    def __init__(self, keepalive_interval_ms: float = 2000.0, seed: int = 0):
        self.rng = random.Random(seed)
        self.server = BrokerServer(
            parse_directory(DIRECTORY_TEXT),
            ServerConfig(keepalive_interval_ms=keepalive_interval_ms),
        )
        self.keepalive_interval_ms = keepalive_interval_ms
        self.providers: dict[str, Gateway] = {}
        self.provider_receivers: dict[str, RecordingReceiver] = {}
        self.home: Gateway | None = None
        self.home_receiver = RecordingReceiver()
        self._stop = threading.Event()
        self._pumps: list[threading.Thread] = []
        self._started = False

    def start(self) -> "SmartHome":
        # idempotent: entering an already-started home must not open a second
        # set of gateways (a twin lgw would endlessly steal the session)
        if self._started:
            return self
        self.server.start()
        for name, subscriber in PROVIDERS.items():
            receiver = RecordingReceiver()
            try:
                self.providers[name] = open_gateway(
                    GatewayConfig(
                        subscriber,
                        Role.ASGW,
                        self.server.signal_endpoint,
                        provider=name,
                        keepalive_interval_ms=self.keepalive_interval_ms,
                    ),
                    receiver,
                )
            except Exception as exc:
                self.stop()
                raise RuntimeError(f"provider {name!r} failed to start: {exc}") from exc
            self.provider_receivers[name] = receiver
        try:
            self.home = open_gateway(
                GatewayConfig(
                    "home-1",
                    Role.LGW,
                    self.server.signal_endpoint,
                    keepalive_interval_ms=self.keepalive_interval_ms,
                ),
                self.home_receiver,
            )
            attachments = [self.home.attach_device(ctid) for ctid in DEVICES]
            for attachment in attachments:
                attachment.wait(10)
        except Exception as exc:
            self.stop()
            raise RuntimeError(f"home gateway failed to start: {exc}") from exc
        self._started = True
        return self

    def stop(self) -> None:
        self._started = False
        self._stop.set()
        for pump in self._pumps:
            pump.join(timeout=5)
        if self.home is not None:
            self.home.close()
        for gateway in self.providers.values():
            gateway.close()
        self.server.stop()

    def __enter__(self) -> "SmartHome":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- traffic -------------------------------------------------------------

    def commissioned_wires(self) -> int:
        return len(self.server.broker.table.by_ctid)

    def send_reading(self, ctid: str, payload: bytes) -> DeliveryStatus:
        assert self.home is not None
        return self.home.transmit(ctid, payload).wait(10)

    def send_command(self, ctid: str, payload: bytes) -> DeliveryStatus:
        """Provider-to-actuator command, routed by the device's ctid."""
        gateway = self.providers[provider_for(ctid)]
        return gateway.transmit(ctid, payload).wait(10)

    def heartbeat(self, beats: int, rate_hz: float = 1.0) -> list[bytes]:
        """Emit heart-monitor readings at the given rate; returns them."""
        sent = []
        period = 1.0 / rate_hz
        for n in range(beats):
            payload = f"bpm={60 + self.rng.randrange(40)} n={n}".encode()
            self.send_reading("heart.monitor", payload)
            sent.append(payload)
            if n < beats - 1:
                time.sleep(period)
        return sent

    def run_traffic(self, duration_s: float, heart_hz: float = 1.0) -> TrafficSummary:
        """Drive the whole house for a while: periodic sensor readings up,
        occasional actuator commands down."""
        summary = TrafficSummary()
        lock = threading.Lock()

        def count(kind: str, status: DeliveryStatus, ctid: str) -> None:
            with lock:
                if kind == "reading":
                    summary.readings_sent += 1
                    if status is DeliveryStatus.DELIVERED:
                        summary.readings_delivered += 1
                        name = provider_for(ctid)
                        summary.per_provider[name] = summary.per_provider.get(name, 0) + 1
                else:
                    summary.commands_sent += 1
                    if status is DeliveryStatus.DELIVERED:
                        summary.commands_delivered += 1

        def sensor_pump() -> None:
            period = 1.0 / heart_hz
            sensors = ["heart.monitor", "thermometer.indoor", "meter.electric", "bottle.milk"]
            n = 0
            while not self._stop.wait(period):
                for ctid in sensors:
                    count("reading", self.send_reading(ctid, f"{ctid} #{n}".encode()), ctid)
                n += 1

        def command_pump() -> None:
            n = 0
            while not self._stop.wait(2.0 / heart_hz):
                ctid = ACTUATORS[n % len(ACTUATORS)]
                state = "on" if n % 2 == 0 else "off"
                count("command", self.send_command(ctid, f"set {state}".encode()), ctid)
                n += 1

        self._stop.clear()
        self._pumps = [
            threading.Thread(target=sensor_pump, daemon=True, name="smarthome-sensors"),
            threading.Thread(target=command_pump, daemon=True, name="smarthome-commands"),
        ]
        for pump in self._pumps:
            pump.start()
        time.sleep(duration_s)
        self._stop.set()
        for pump in self._pumps:
            pump.join(timeout=5)
        self._pumps = []
        return summary


def simulate_smart_home(keepalive_interval_ms: float = 2000.0, seed: int = 0) -> SmartHome:
    """Start the full topology and hand it back running."""
    return SmartHome(keepalive_interval_ms=keepalive_interval_ms, seed=seed).start()
