"""Transaction id generation for outgoing frames."""

from __future__ import annotations

import itertools


class TxnGenerator:
    """Per-sender id factory: "t" + zero-padded counter, unique for its lifetime.

    The counter never wraps, so ids stay distinct well past 2**32 calls; width
    grows past eight digits when needed and stays within the 32-char limit.
    """

    def __init__(self, prefix: str = "t"):
        if not prefix or len(prefix) > 8:
            raise ValueError("prefix must be 1..8 chars")
        self._prefix = prefix
        self._counter = itertools.count(1)

    def next(self) -> str:
        return f"{self._prefix}{next(self._counter):08d}"


def next_txn(generator: TxnGenerator) -> str:
    return generator.next()
