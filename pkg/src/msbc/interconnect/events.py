"""Append-only event log shared between the broker thread and observers."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Callable


@dataclass(frozen=True)
class Event:
    ts_ms: float
    kind: str
    session: str = ""
    ctid: str = ""
    wire: int = -1
    detail: str = ""

    def format_line(self) -> str:
        wire = str(self.wire) if self.wire >= 0 else "-"
        parts = [f"{self.ts_ms:.1f}", self.kind, self.session or "-", self.ctid or "-", wire]
        if self.detail:
            parts.append(self.detail)
        return " ".join(parts)


class EventLog:
    """Threadsafe log; observers can block until a matching event appears."""

    def __init__(self, sink: Callable[[Event], None] | None = None):
        self._events: list[Event] = []
        self._cond = threading.Condition()
        self._sink = sink

    def append(self, event: Event) -> None:
        with self._cond:
            self._events.append(event)
            self._cond.notify_all()
        if self._sink is not None:
            self._sink(event)

    def snapshot(self) -> list[Event]:
        with self._cond:
            return list(self._events)

    def count(self, kind: str, ctid: str | None = None) -> int:
        return sum(
            1
            for e in self.snapshot()
            if e.kind == kind and (ctid is None or e.ctid == ctid)
        )

    def wait_for(
        self,
        predicate: Callable[[Event], bool],
        timeout: float = 5.0,
    ) -> Event | None:
        """Block until some logged event satisfies the predicate."""
        deadline = time.monotonic() + timeout
        scanned = 0
        with self._cond:
            while True:
                for event in self._events[scanned:]:
                    if predicate(event):
                        return event
                scanned = len(self._events)
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._cond.wait(remaining)
