"""Latency/bandwidth network model with host-level drop, delay and replay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from ..adversary import LinkFilter
from .events import EventQueue
from .rng import Streams


@dataclass
class Message:
    kind: str
    src: str
    dst: str
    payload: object
    size: int = 256


@dataclass
class NetworkModel:
    queue: EventQueue
    streams: Streams
    rtt_ms: float = 0.5
    jitter_ms: float = 0.03
    bandwidth_mbps: float = 1000.0
    filters: tuple[LinkFilter, ...] = ()
    handlers: dict[str, Callable[[Message], None]] = field(default_factory=dict)
    dropped: int = 0
    delivered: int = 0
    _uplink_free: dict[str, float] = field(default_factory=dict)

    def register(self, name: str, handler: Callable[[Message], None]) -> None:
        self.handlers[name] = handler

    def one_way(self) -> float:
        return self.rtt_ms / 2000.0

    def _latency(self, src: str) -> float:
        rng = self.streams.get(f"net/{src}")
        jitter = float(rng.uniform(-self.jitter_ms, self.jitter_ms)) / 2000.0
        return max(0.0, self.one_way() + jitter)

    def send(self, msg: Message) -> None:
        now = self.queue.now
        # sender uplink serialises its messages
        tx_time = msg.size * 8 / (self.bandwidth_mbps * 1e6)
        start = max(now, self._uplink_free.get(msg.src, now))
        self._uplink_free[msg.src] = start + tx_time
        arrival = start + tx_time + self._latency(msg.src)
        replay = False
        for lf in self.filters:
            if not lf.matches(msg.src, msg.dst, msg.kind):
                continue
            if lf.drop > 0:
                rng = self.streams.get(f"filter/{msg.src}->{msg.dst}")
                if lf.drop >= 1.0 or float(rng.random()) < lf.drop:
                    self.dropped += 1
                    return
            arrival += lf.delay_ms / 1000.0
            replay = replay or lf.replay
        self.queue.schedule(arrival, self._deliver, msg)
        if replay:
            self.queue.schedule(arrival + self.one_way() * 2, self._deliver, msg)

    def _deliver(self, msg: Message) -> None:
        handler = self.handlers.get(msg.dst)
        if handler is not None:
            self.delivered += 1
            handler(msg)
