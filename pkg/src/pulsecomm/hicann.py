"""HICANN endpoint: loopback of downstream pulses and background event generators."""

from __future__ import annotations

import numpy as np

from .simcore import Engine, GroundTruthLog, Priority
from .timebase import HICANN_TICK_NS


class HicannNode:
    """One HICANN as seen by the off-wafer network.

    Pulses are identified by ground-truth pulse id; their label is never
    modified, so loopback preserves the neuron id by construction. The
    record timestamp is the emit time floored to the 4 ns HICANN clock.
    """

    def __init__(self, engine: Engine, index: int, upstream, truth: GroundTruthLog,
                 loopback_latency_ns: int = 0):
        self.engine = engine
        self.index = index
        self.upstream = upstream
        self.truth = truth
        self.loopback_latency_ns = loopback_latency_ns
        self.looped = 0
        self.beg_emitted = 0
        self._begs: list[tuple[list[int], int]] = []

    def on_downstream_arrival(self, t: int, pid: int) -> None:
        self.truth.hicann_ns[pid] = t
        if self.loopback_latency_ns:
            self.engine.schedule(t + self.loopback_latency_ns, Priority.HICANN, self._emit, pid)
        else:
            self._emit(t, pid)

    def _emit(self, t: int, pid: int) -> None:
        truth = self.truth
        truth.emit_ns[pid] = t
        truth.stamp_ns[pid] = t - t % HICANN_TICK_NS
        self.looped += 1
        self.upstream.push(pid, t)

    def start_beg(self, times_ns: np.ndarray, first_pid: int) -> None:
        """Fire a background generator train; its pulse ids are consecutive."""
        times = np.asarray(times_ns, dtype=np.int64).tolist()
        self._begs.append((times, first_pid))
        if times:
            self.engine.schedule(times[0], Priority.HICANN, self._beg_fire, len(self._begs) - 1, 0)

    def _beg_fire(self, t: int, b: int, k: int) -> None:
        times, base = self._begs[b]
        pid = base + k
        truth = self.truth
        truth.emit_ns[pid] = t
        truth.stamp_ns[pid] = t - t % HICANN_TICK_NS
        self.beg_emitted += 1
        self.upstream.push(pid, t)
        if k + 1 < len(times):
            self.engine.schedule(times[k + 1], Priority.HICANN, self._beg_fire, b, k + 1)
