"""Deterministic discrete-event scheduler."""

from __future__ import annotations

import heapq
from typing import Any, Callable


class EventQueue:
    """Events run in (time, insertion sequence) order."""

    def __init__(self):
        self._heap: list[tuple[float, int, Callable[..., Any], tuple]] = []
        self._seq = 0
        self.now = 0.0
        self.processed = 0

    def schedule(self, at: float, fn: Callable[..., Any], *args) -> None:
        if at < self.now:
            raise ValueError(f"cannot schedule in the past ({at} < {self.now})")
        heapq.heappush(self._heap, (at, self._seq, fn, args))
        self._seq += 1

    def after(self, delay: float, fn: Callable[..., Any], *args) -> None:
        self.schedule(self.now + max(0.0, delay), fn, *args)

    def __len__(self) -> int:
        return len(self._heap)

    def run(self, until: float = float("inf"), stop: Callable[[], bool] | None = None) -> None:
        while self._heap:
            at, _, fn, args = self._heap[0]
            if at > until:
                break
            heapq.heappop(self._heap)
            self.now = at
            fn(*args)
            self.processed += 1
            if stop is not None and stop():
                break
