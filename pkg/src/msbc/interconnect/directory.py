"""Subscription directory: which provider serves a device id.

The on-disk form is line oriented:

    # comment
    provider metering subscriber=as-metering
    rule meter.* -> metering
    rule meter.gas.007 -> metering-audit

A rule pattern is either a full device id (exact match) or a prefix ending
in ``*``. Lookup prefers an exact rule, then the wildcard rule with the
longest prefix; ties go to the rule declared first.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from msbc.wire.types import is_token, validate_ctid

_PROVIDER_RE = re.compile(r"^provider\s+(\S+)\s+subscriber=(\S+)$")
_RULE_RE = re.compile(r"^rule\s+(\S+)\s+->\s+(\S+)$")


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass(frozen=True)
class ProviderRecord:
    provider_id: str
    subscriber: str


@dataclass(frozen=True)
class RoutingRule:
    pattern: str
    provider_id: str

    @property
    def is_wildcard(self) -> bool:
        return self.pattern.endswith("*")

    @property
    def prefix(self) -> str:
        return self.pattern[:-1] if self.is_wildcard else self.pattern

    def matches(self, ctid: str) -> bool:
        if self.is_wildcard:
            return ctid.startswith(self.prefix)
        return ctid == self.pattern


@dataclass
class SubscriptionDirectory:
    providers: dict[str, ProviderRecord] = field(default_factory=dict)
    rules: list[RoutingRule] = field(default_factory=list)

    def add_provider(self, provider_id: str, subscriber: str) -> None:
        if not is_token(provider_id) or not is_token(subscriber):
            raise ValueError("provider and subscriber must be simple tokens")
        if provider_id in self.providers:
            raise ValueError(f"duplicate provider {provider_id}")
        self.providers[provider_id] = ProviderRecord(provider_id, subscriber)

    def add_rule(self, pattern: str, provider_id: str) -> None:
        _check_pattern(pattern)
        if provider_id not in self.providers:
            raise ValueError(f"rule references unknown provider {provider_id}")
        self.rules.append(RoutingRule(pattern, provider_id))

    def subscriber_provider(self, subscriber: str) -> str | None:
        """Provider id registered for a gateway subscriber id, if any."""
        for rec in self.providers.values():
            if rec.subscriber == subscriber:
                return rec.provider_id
        return None


def lookup_provider(directory: SubscriptionDirectory, ctid: str) -> str | None:
    """Resolve a device id to its provider, or None when no rule applies."""
    best: RoutingRule | None = None
    for rule in directory.rules:
        if not rule.matches(ctid):
            continue
        if not rule.is_wildcard:
            return rule.provider_id
        if best is None or len(rule.prefix) > len(best.prefix):
            best = rule
    return best.provider_id if best else None


def parse_directory(text: str) -> SubscriptionDirectory:
    directory = SubscriptionDirectory()
    pending_rules: list[tuple[int, str, str]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if m := _PROVIDER_RE.match(line):
            pid, sub = m.group(1), m.group(2)
            try:
                directory.add_provider(pid, sub)
            except ValueError as exc:
                raise ParseError(line_no, str(exc)) from exc
        elif m := _RULE_RE.match(line):
            pending_rules.append((line_no, m.group(1), m.group(2)))
        else:
            raise ParseError(line_no, f"unrecognized line: {line!r}")
    # Rules may reference providers declared later in the file.
    for line_no, pattern, pid in pending_rules:
        try:
            directory.add_rule(pattern, pid)
        except ValueError as exc:
            raise ParseError(line_no, str(exc)) from exc
    return directory


def load_directory(path: str | Path) -> SubscriptionDirectory:
    return parse_directory(Path(path).read_text(encoding="ascii"))


def save_directory(directory: SubscriptionDirectory, path: str | Path) -> None:
    lines = [f"provider {r.provider_id} subscriber={r.subscriber}" for r in directory.providers.values()]
    lines += [f"rule {r.pattern} -> {r.provider_id}" for r in directory.rules]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _check_pattern(pattern: str) -> None:
    if pattern.endswith("*"):
        prefix = pattern[:-1]
        if prefix and not is_token(prefix):
            raise ValueError(f"bad rule pattern {pattern!r}")
        if len(prefix) > 64:
            raise ValueError("pattern prefix too long")
    else:
        validate_ctid(pattern)
