"""The canned smart-home topology: one home gateway, ten devices, five
providers, and bidirectional traffic."""

import pytest

from msbc.gateway import DeliveryStatus
from msbc.harness import SmartHome
from msbc.harness import smarthome as smarthome_mod
from msbc.harness.smarthome import DEVICES, PROVIDERS, provider_for

EXPECTED_HOMES = {
    "health": {"heart.monitor"},
    "automation": {
        "light.living",
        "light.kitchen",
        "light.porch",
        "fan.ceiling",
        "thermometer.indoor",
    },
    "utility": {"meter.electric"},
    "grocery": {"bottle.milk"},
    "security": {"door.front", "camera.entry"},
}


@pytest.fixture
def home():
    h = SmartHome(keepalive_interval_ms=1000.0, seed=4)
    h.start()
    yield h
    h.stop()


def test_every_device_routes_to_its_provider():
    assert {provider_for(ctid) for ctid in DEVICES} == set(PROVIDERS)
    for provider, ctids in EXPECTED_HOMES.items():
        assert {c for c in DEVICES if provider_for(c) == provider} == ctids


def test_topology_commissions_a_wire_per_device(home):
    assert home.commissioned_wires() == len(DEVICES)
    assert home.commissioned_wires() >= 8
    assert sorted(home.home.attachments()) == sorted(DEVICES)
    for provider, ctids in EXPECTED_HOMES.items():
        receiver = home.provider_receivers[provider]
        assert set(receiver.attached) == ctids


def test_reading_lands_at_the_right_provider(home):
    assert home.send_reading("bottle.milk", b"count=2") is DeliveryStatus.DELIVERED
    grocery = home.provider_receivers["grocery"]
    assert grocery.wait_data("bottle.milk", 1, timeout=5)
    assert grocery.payloads("bottle.milk") == [b"count=2"]
    # nobody else saw it
    assert home.provider_receivers["security"].payloads("bottle.milk") == []


def test_provider_command_reaches_the_actuator(home):
    assert home.send_command("light.porch", b"set on") is DeliveryStatus.DELIVERED
    assert home.home_receiver.wait_data("light.porch", 1, timeout=5)
    assert home.home_receiver.payloads("light.porch") == [b"set on"]


def test_heartbeat_stream_arrives_ordered_and_complete(home):
    sent = home.heartbeat(10, rate_hz=200.0)
    health = home.provider_receivers["health"]
    assert health.wait_data("heart.monitor", 10, timeout=5)
    assert health.payloads("heart.monitor") == sent
    assert len(set(sent)) > 1  # the simulated monitor actually varies


def test_run_traffic_delivers_everything(home):
    summary = home.run_traffic(1.2, heart_hz=5.0)
    assert summary.readings_sent > 0
    assert summary.readings_delivered == summary.readings_sent
    assert summary.commands_delivered == summary.commands_sent
    # the four pumped sensors cover these providers; security only watches
    assert set(summary.per_provider) == {"health", "automation", "utility", "grocery"}
    assert sum(summary.per_provider.values()) == summary.readings_delivered


def test_start_is_idempotent(home):
    # entering an already-running home must not spawn twin gateways
    assert home.start() is home
    assert len(home.server.broker.sessions) == len(PROVIDERS) + 1
    assert home.commissioned_wires() == len(DEVICES)
    assert home.send_reading("meter.electric", b"kwh=9") is DeliveryStatus.DELIVERED


def test_provider_startup_failure_names_the_culprit(monkeypatch):
    real_open = smarthome_mod.open_gateway

    def sabotaged(config, receiver=None, timeout=10):
        if config.provider == "grocery":
            raise TimeoutError("nobody answered")
        return real_open(config, receiver, timeout)

    monkeypatch.setattr(smarthome_mod, "open_gateway", sabotaged)
    with pytest.raises(RuntimeError, match="provider 'grocery' failed to start"):
        SmartHome().start()
