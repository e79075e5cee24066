"""Latency distributions and the per-scenario metrics report.

Timing figures are reported as full distributions and gated on the median:
single-shot numbers hide scheduler noise, and the median is the stable
summary on a loopback box.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field


class Distribution:
    """A bag of millisecond samples with the usual summary stats."""

    def __init__(self, samples: list[float] | None = None):
        self.samples: list[float] = list(samples) if samples else []

    def add(self, sample_ms: float) -> None:
        self.samples.append(sample_ms)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def count(self) -> int:
        return len(self.samples)

    @property
    def median(self) -> float:
        return statistics.median(self.samples) if self.samples else 0.0

    @property
    def mean(self) -> float:
        return statistics.fmean(self.samples) if self.samples else 0.0

    @property
    def p95(self) -> float:
        if not self.samples:
            return 0.0
        ordered = sorted(self.samples)
        # nearest-rank percentile; exact enough for a pass/fail budget
        rank = min(len(ordered) - 1, math.ceil(0.95 * len(ordered)) - 1)
        return ordered[rank]

    @property
    def minimum(self) -> float:
        return min(self.samples) if self.samples else 0.0

    @property
    def maximum(self) -> float:
        return max(self.samples) if self.samples else 0.0

    def stat(self, name: str) -> float:
        value = getattr(self, name, None)
        if not isinstance(value, (int, float)):
            raise KeyError(f"unknown statistic {name!r}")
        return float(value)

    def summary(self) -> str:
        if not self.samples:
            return "no samples"
        return (
            f"n={self.count} median={self.median:.2f}ms mean={self.mean:.2f}ms "
            f"p95={self.p95:.2f}ms max={self.maximum:.2f}ms"
        )


@dataclass
class MetricsReport:
    scenario: str
    wire_setup_ms: Distribution = field(default_factory=Distribution)
    wire_cycle_ms: Distribution = field(default_factory=Distribution)
    transfer_rtt_ms: Distribution = field(default_factory=Distribution)
    packets_sent: int = 0
    packets_delivered: int = 0
    packets_lost: int = 0
    packets_buffered: int = 0  # still in flight when the scenario ended
    teardown_clean: bool = True
    watchdog_detect_ms: float | None = None
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def conservation_holds(self) -> bool:
        return self.packets_sent == (
            self.packets_delivered + self.packets_lost + self.packets_buffered
        )

    def distribution(self, name: str) -> Distribution:
        dist = getattr(self, name, None)
        if not isinstance(dist, Distribution):
            raise KeyError(f"unknown distribution {name!r}")
        return dist

    def format_report(self) -> str:
        lines = [f"scenario {self.scenario}: {'PASS' if self.ok else 'FAIL'}"]
        for label, dist in (
            ("wire_setup_ms", self.wire_setup_ms),
            ("wire_cycle_ms", self.wire_cycle_ms),
            ("transfer_rtt_ms", self.transfer_rtt_ms),
        ):
            if dist.count:
                lines.append(f"  {label}: {dist.summary()}")
        lines.append(
            f"  packets: sent={self.packets_sent} delivered={self.packets_delivered} "
            f"lost={self.packets_lost} buffered={self.packets_buffered}"
        )
        if self.watchdog_detect_ms is not None:
            lines.append(f"  watchdog_detect_ms: {self.watchdog_detect_ms:.1f}")
        lines.append(f"  teardown_clean: {self.teardown_clean}")
        for failure in self.failures:
            lines.append(f"  FAIL: {failure}")
        lines.append("")
        # machine-readable tail
        kv = {
            "scenario": self.scenario,
            "ok": int(self.ok),
            "packets_sent": self.packets_sent,
            "packets_delivered": self.packets_delivered,
            "packets_lost": self.packets_lost,
            "packets_buffered": self.packets_buffered,
            "teardown_clean": int(self.teardown_clean),
        }
        for label in ("wire_setup_ms", "wire_cycle_ms", "transfer_rtt_ms"):
            dist = self.distribution(label)
            kv[f"{label}_count"] = dist.count
            kv[f"{label}_median"] = round(dist.median, 3)
            kv[f"{label}_p95"] = round(dist.p95, 3)
        if self.watchdog_detect_ms is not None:
            kv["watchdog_detect_ms"] = round(self.watchdog_detect_ms, 3)
        lines.extend(f"{key}={value}" for key, value in kv.items())
        return "\n".join(lines)
