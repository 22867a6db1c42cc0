"""Discrete-event engine and experiment runner.

Events are totally ordered by ``(time, priority, seq)``. Priorities fix the
order of simultaneous events across components; ``seq`` is assigned at
scheduling time, so equal ``(time, priority)`` events run in insertion
order.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, NamedTuple

import numpy as np

from .errors import DomainError, SimulationError


class Priority(enum.IntEnum):
    CLOCK = 0  # timestamp counter wrap, before anything else at that instant
    PLAYBACK = 1
    CHANNEL = 2
    HICANN = 3
    TRACE = 4


class SimEvent(NamedTuple):
    time: int
    priority: int
    seq: int
    action: Callable[..., Any]
    args: tuple


class Engine:
    """Single-threaded event loop over integer-ns time.

    ``observer``, if given, is called as ``observer(event)`` before each
    event executes; tests use it to assert global ordering.
    """

    def __init__(self, observer: Callable[[SimEvent], None] | None = None):
        self._heap: list[SimEvent] = []
        self._seq = 0
        self.now = 0
        self.executed = 0
        self.observer = observer

    def schedule(self, time: int, priority: int, action: Callable[..., Any], *args) -> int:
        if time < self.now:
            raise SimulationError(f"event scheduled in the past: {time} < now {self.now}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, SimEvent(time, priority, seq, action, args))
        return seq

    def pending(self) -> int:
        return len(self._heap)

    def run(self, until: int | None = None) -> None:
        """Execute events in order; stop before the first event after ``until``."""
        heap = self._heap
        observer = self.observer
        pop = heapq.heappop
        while heap:
            if until is not None and heap[0][0] > until:
                break
            ev = pop(heap)
            self.now = ev[0]
            if observer is not None:
                observer(ev)
            self.executed += 1
            ev[3](ev[0], *ev[4])
        if until is not None and until > self.now:
            self.now = until


class Fate(enum.IntEnum):
    TRACED = 0
    CHANNEL_DROP = 1
    MERGER_DROP = 2
    TRACE_DROP = 3
    TRACE_FULL = 4
    UNFINISHED = 5  # never released, or still in flight at experiment end
    UNTRACED = 6  # delivered upstream with tracing disabled


_STAGE_COLUMNS = (
    ("requested", "requested_ns"),
    ("released", "released_ns"),
    ("hicann_arrival", "hicann_ns"),
    ("upstream_emit", "emit_ns"),
    ("traced", "traced_ns"),
)
_DROP_STAGE = {
    Fate.CHANNEL_DROP: ("channel_drop", "released_ns"),
    Fate.MERGER_DROP: ("merger_drop", "emit_ns"),
    Fate.TRACE_DROP: ("trace_drop", "delivered_ns"),
    Fate.TRACE_FULL: ("trace_full", "delivered_ns"),
}


class GroundTruthLog:
    """Per-pulse stage record, indexed by pulse id.

    Times are -1 for stages a pulse never reached. ``stamp_ns`` is the
    absolute 4 ns-aligned time written into the HICANN record timestamp.
    """

    def __init__(self, n: int = 0):
        self.n = 0
        self.hicann = np.zeros(0, dtype=np.int16)
        self.label9 = np.zeros(0, dtype=np.int16)
        self.kind = np.zeros(0, dtype=np.int8)  # 0 playback, 1 BEG
        self.requested_ns = np.zeros(0, dtype=np.int64)
        self.released_ns = np.zeros(0, dtype=np.int64)
        self.hicann_ns = np.zeros(0, dtype=np.int64)
        self.emit_ns = np.zeros(0, dtype=np.int64)
        self.stamp_ns = np.zeros(0, dtype=np.int64)
        self.delivered_ns = np.zeros(0, dtype=np.int64)
        self.traced_ns = np.zeros(0, dtype=np.int64)
        self.fate = np.zeros(0, dtype=np.int8)
        self.drop_ns = np.zeros(0, dtype=np.int64)
        if n:
            self.extend(n)

    _TIME_FIELDS = ("requested_ns", "released_ns", "hicann_ns", "emit_ns", "stamp_ns",
                    "delivered_ns", "traced_ns", "drop_ns")

    def extend(self, n: int, hicann=0, label9=0, kind: int = 0, requested_ns=None) -> range:
        """Append ``n`` pulse slots and return their id range."""
        start = self.n
        for name in self._TIME_FIELDS:
            setattr(self, name, np.concatenate([getattr(self, name), np.full(n, -1, np.int64)]))
        self.hicann = np.concatenate([self.hicann, np.broadcast_to(np.asarray(hicann, np.int16), (n,))])
        self.label9 = np.concatenate([self.label9, np.broadcast_to(np.asarray(label9, np.int16), (n,))])
        self.kind = np.concatenate([self.kind, np.full(n, kind, np.int8)])
        self.fate = np.concatenate([self.fate, np.full(n, Fate.UNFINISHED, np.int8)])
        if requested_ns is not None:
            self.requested_ns[start:start + n] = requested_ns
        self.n += n
        return range(start, start + n)

    def counts(self) -> dict[str, int]:
        return {f.name.lower(): int(np.count_nonzero(self.fate == f)) for f in Fate}

    def conserved(self) -> bool:
        return sum(self.counts().values()) == self.n

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in ("hicann", "label9", "kind", "fate") + self._TIME_FIELDS:
            h.update(name.encode())
            h.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        return h.hexdigest()

    def rows(self):
        """Yield ``(pulse_id, stage, time_ns, dropped)`` export rows."""
        for pid in range(self.n):
            for stage, col in _STAGE_COLUMNS:
                t = int(getattr(self, col)[pid])
                if t >= 0:
                    yield pid, stage, t, 0
            fate = Fate(int(self.fate[pid]))
            if fate in _DROP_STAGE:
                stage, _ = _DROP_STAGE[fate]
                yield pid, stage, int(self.drop_ns[pid]), 1
            elif fate is Fate.UNFINISHED:
                yield pid, "unfinished", -1, 1

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pulse_id", "stage", "time_ns", "dropped"])
            w.writerows(self.rows())


@dataclass
class HardwareConfig:
    """Tunable hardware parameters; defaults are the documented calibration."""

    downstream_fifo_depth: int = 16
    link_latency_ns: int = 174
    merger_depth: int = 8
    loopback_latency_ns: int = 0
    trace_fifo_depth: int = 64
    trace_pulses_per_cycle: int = 2
    trace_capacity: int = 125_000_000
    group_overhead_cycles: int = 6
    early_release_limit_cycles: int = 0

    def validate(self) -> None:
        for name, lo in (("downstream_fifo_depth", 1), ("merger_depth", 1), ("trace_fifo_depth", 1),
                         ("trace_pulses_per_cycle", 1), ("trace_capacity", 0),
                         ("group_overhead_cycles", 6), ("link_latency_ns", 0),
                         ("loopback_latency_ns", 0), ("early_release_limit_cycles", 0)):
            if getattr(self, name) < lo:
                raise DomainError(f"{name} must be >= {lo}")


@dataclass
class BegSource:
    """A HICANN background event generator firing ``train`` with one label."""

    train: Any  # SpikeTrain
    label9: int = 0


@dataclass
class ExperimentPlan:
    duration_ns: int
    image: Any = None  # PlaybackImage
    beg_sources: dict[int, list[BegSource]] = field(default_factory=dict)
    trace_enabled: bool = True
    loop_mode: bool = False
    hardware: HardwareConfig = field(default_factory=HardwareConfig)

    def validate(self) -> None:
        if self.duration_ns <= 0:
            raise DomainError("experiment duration must be positive")
        self.hardware.validate()
        for h in self.beg_sources:
            if not 0 <= h < 8:
                raise DomainError(f"BEG source on invalid HICANN {h}")


@dataclass
class RunResult:
    trace: Any  # TraceMemory
    truth: GroundTruthLog
    downstream: dict[int, Any]
    upstream: dict[int, Any]
    duration_ns: int
    events_executed: int

    def channel_stats(self) -> dict[str, dict[int, Any]]:
        return {
            "downstream": {h: ch.stats() for h, ch in self.downstream.items()},
            "upstream": {h: ch.stats() for h, ch in self.upstream.items()},
        }


def run(plan: ExperimentPlan, observer: Callable[[SimEvent], None] | None = None) -> RunResult:
    """Execute one experiment: release, transmit, loop back, trace."""
    from .hicann import HicannNode
    from .link import DownstreamChannel, UpstreamChannel
    from .playback import PlaybackModule
    from .timebase import bio_to_tech_array
    from .trace import TraceModule

    plan.validate()
    hw = plan.hardware
    engine = Engine(observer)
    truth = GroundTruthLog()

    trace = TraceModule(engine, truth, fifo_depth=hw.trace_fifo_depth,
                        per_cycle=hw.trace_pulses_per_cycle, capacity=hw.trace_capacity,
                        enabled=plan.trace_enabled, duration_ns=plan.duration_ns)

    playback = None
    if plan.image is not None:
        playback = PlaybackModule(engine, plan.image, truth, plan.duration_ns,
                                  overhead_cycles=hw.group_overhead_cycles,
                                  early_release_limit=hw.early_release_limit_cycles,
                                  loop_mode=plan.loop_mode)

    used = set(plan.beg_sources)
    if playback is not None:
        used.update(playback.hicanns())

    upstream: dict[int, UpstreamChannel] = {}
    downstream: dict[int, DownstreamChannel] = {}
    nodes: dict[int, HicannNode] = {}
    for h in sorted(used):
        up = UpstreamChannel(engine, trace.receive, depth=hw.merger_depth,
                             on_drop=_marker(truth, Fate.MERGER_DROP))
        node = HicannNode(engine, h, up, truth, loopback_latency_ns=hw.loopback_latency_ns)
        upstream[h] = up
        nodes[h] = node
        if playback is not None and h in playback.hicanns():
            downstream[h] = DownstreamChannel(engine, node.on_downstream_arrival,
                                              capacity=hw.downstream_fifo_depth,
                                              latency_ns=hw.link_latency_ns,
                                              on_drop=_marker(truth, Fate.CHANNEL_DROP))

    if playback is not None:
        playback.start(downstream)
    for h, sources in sorted(plan.beg_sources.items()):
        for src in sources:
            times = bio_to_tech_array(src.train.times_bio_ms)
            ids = truth.extend(len(times), hicann=h, label9=src.label9, kind=1, requested_ns=times)
            nodes[h].start_beg(times, ids.start)

    trace.start()
    engine.run(until=plan.duration_ns)
    trace.finish()
    return RunResult(trace.memory, truth, downstream, upstream, plan.duration_ns, engine.executed)


def _marker(truth: GroundTruthLog, fate: Fate):
    def mark(pid: int, t: int) -> None:
        truth.fate[pid] = fate
        truth.drop_ns[pid] = t
    return mark
