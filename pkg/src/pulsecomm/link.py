"""FPGA-HICANN channel models.

Downstream (FPGA to HICANN) uses single pulse packets only: a 16-entry FIFO
in front of a serializer that emits one packet per 56 ns. The pulse being
serialized still occupies its FIFO slot until its packet ends, so an
accepted pulse waits at most 15 packet times.

Upstream (HICANN to FPGA) queues pulses in the merger and serializes them
as double packets (80 ns) whenever two are waiting when the serializer goes
idle, otherwise as single packets (56 ns).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any, Callable

from .events import DOUBLE_PACKET_NS, SINGLE_PACKET_NS
from .simcore import Engine, Priority


@dataclass(frozen=True)
class ChannelStats:
    pushed: int
    accepted: int
    dropped: int
    delivered: int
    packets_single: int
    packets_double: int
    busy_ns: int

    def utilization(self, duration_ns: int) -> float:
        return min(self.busy_ns / duration_ns, 1.0) if duration_ns > 0 else 0.0

    def as_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


class DownstreamChannel:
    """Bounded FIFO + single-packet serializer towards one HICANN.

    Slot accounting is lazy: a slot frees at the instant its packet ends, so
    a pulse pushed at exactly that instant is accepted.
    """

    def __init__(self, engine: Engine, deliver: Callable[[int, Any], None], capacity: int = 16,
                 packet_ns: int = SINGLE_PACKET_NS, latency_ns: int = 174,
                 on_drop: Callable[[Any, int], None] | None = None):
        self.engine = engine
        self.deliver = deliver
        self.capacity = capacity
        self.packet_ns = packet_ns
        self.latency_ns = latency_ns
        self.on_drop = on_drop
        self._ends: deque[int] = deque()
        self._last_end = 0
        self.pushed = self.accepted = self.dropped = self.delivered = 0

    def occupancy(self, t: int) -> int:
        ends = self._ends
        while ends and ends[0] <= t:
            ends.popleft()
        return len(ends)

    def push(self, item: Any, t: int | None = None) -> bool:
        if t is None:
            t = self.engine.now
        self.pushed += 1
        if self.occupancy(t) >= self.capacity:
            self.dropped += 1
            if self.on_drop is not None:
                self.on_drop(item, t)
            return False
        start = t if t > self._last_end else self._last_end
        end = start + self.packet_ns
        self._ends.append(end)
        self._last_end = end
        self.accepted += 1
        self.engine.schedule(end + self.latency_ns, Priority.HICANN, self._arrive, item)
        return True

    def _arrive(self, t: int, item: Any) -> None:
        self.delivered += 1
        self.deliver(t, item)

    def stats(self) -> ChannelStats:
        return ChannelStats(self.pushed, self.accepted, self.dropped, self.delivered,
                            self.accepted, 0, self.accepted * self.packet_ns)


class UpstreamChannel:
    """Merger queue + adaptive single/double serializer towards the FPGA.

    ``depth`` bounds the pulses waiting in the merger; pulses already in a
    packet on the wire do not count. The packet kind is chosen only at the
    instant the serializer becomes idle (or an idle serializer receives a
    pulse); a pulse arriving during a single packet never upgrades it.
    """

    def __init__(self, engine: Engine, deliver: Callable[[int, Any], None], depth: int = 8,
                 single_ns: int = SINGLE_PACKET_NS, double_ns: int = DOUBLE_PACKET_NS,
                 on_drop: Callable[[Any, int], None] | None = None):
        self.engine = engine
        self.deliver = deliver
        self.depth = depth
        self.single_ns = single_ns
        self.double_ns = double_ns
        self.on_drop = on_drop
        self._queue: deque = deque()
        self._busy = False
        self.pushed = self.accepted = self.dropped = self.delivered = 0
        self.singles = self.doubles = 0

    def push(self, item: Any, t: int | None = None) -> bool:
        if t is None:
            t = self.engine.now
        self.pushed += 1
        if len(self._queue) >= self.depth:
            self.dropped += 1
            if self.on_drop is not None:
                self.on_drop(item, t)
            return False
        self.accepted += 1
        self._queue.append(item)
        if not self._busy:
            self._start(t)
        return True

    def _start(self, t: int) -> None:
        q = self._queue
        if len(q) >= 2:
            items = (q.popleft(), q.popleft())
            dur = self.double_ns
            self.doubles += 1
        else:
            items = (q.popleft(),)
            dur = self.single_ns
            self.singles += 1
        self._busy = True
        self.engine.schedule(t + dur, Priority.CHANNEL, self._complete, items)

    def _complete(self, t: int, items: tuple) -> None:
        for item in items:
            self.delivered += 1
            self.deliver(t, item)
        if self._queue:
            self._start(t)
        else:
            self._busy = False

    def stats(self) -> ChannelStats:
        return ChannelStats(self.pushed, self.accepted, self.dropped, self.delivered,
                            self.singles, self.doubles,
                            self.singles * self.single_ns + self.doubles * self.double_ns)
