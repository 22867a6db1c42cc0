"""FPGA trace module and trace memory.

Upstream pulses land in one FIFO per HICANN channel; every 8 ns cycle the
arbiter records up to two of them, walking the channels round-robin from
the one after the last served. A record keeps the 15-bit HICANN timestamp
and the overflow epoch it belongs to.

The epoch of a record is resolved when it is written: the FPGA compares the
15-bit stamp with the low bits of its own counter, and a stamp larger than
the counter was taken before the most recent counter reset. This keeps
pulses stamped just before a wrap, but recorded just after it, in the
right epoch. Epochs are therefore non-decreasing per channel (stamps on one
channel are monotone) but not necessarily across channels.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CapacityError, FormatError
from .events import (
    FRAME_TYPE_TRACE,
    MAX_PULSES_PER_DIRECTION,
    N_HICANNS,
    TAG_HEADER,
    TAG_OVERFLOW,
    TAG_TRACE,
    make_label14,
    read_words,
    split_label14,
    write_words,
)
from .simcore import Fate, GroundTruthLog, Priority
from .spikegen import SpikeTrain
from .timebase import (
    FPGA_TICK_NS,
    HICANN_TICK_NS,
    TIMESTAMP_MODULUS,
    WRAP_PERIOD_NS,
    tech_to_bio_array,
    unwrap_timestamps,
)

_TAG_SHIFT = 29
_PAYLOAD_MASK = (1 << _TAG_SHIFT) - 1


@dataclass(frozen=True)
class TraceRecord:
    hicann: int
    label9: int
    ts: int
    overflow_epoch: int
    record_order: int


@dataclass
class TraceMemory:
    """Recorded pulses in record order, stored column-wise."""

    capacity: int = MAX_PULSES_PER_DIRECTION
    hicann: list[int] = field(default_factory=list)
    label9: list[int] = field(default_factory=list)
    ts15: list[int] = field(default_factory=list)
    epoch: list[int] = field(default_factory=list)
    pulse_id: list[int] = field(default_factory=list)  # simulator-side link, not exported
    fifo_drops: list[int] = field(default_factory=lambda: [0] * N_HICANNS)
    refused: int = 0
    full: bool = False
    overflow_markers: int = 0

    def __len__(self) -> int:
        return len(self.ts15)

    def append(self, hicann: int, label9: int, ts15: int, epoch: int, pulse_id: int = -1) -> bool:
        if len(self.ts15) >= self.capacity:
            self.full = True
            self.refused += 1
            return False
        self.hicann.append(hicann)
        self.label9.append(label9)
        self.ts15.append(ts15)
        self.epoch.append(epoch)
        self.pulse_id.append(pulse_id)
        return True

    def record(self, i: int) -> TraceRecord:
        return TraceRecord(self.hicann[i], self.label9[i], self.ts15[i], self.epoch[i], i)

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))

    def absolute_ns(self) -> np.ndarray:
        """Absolute technical record time of every record, in record order.

        Unwrapping runs per HICANN channel, where epochs must not decrease.
        """
        out = np.empty(len(self), dtype=np.int64)
        hic = np.asarray(self.hicann, dtype=np.int64)
        ts = np.asarray(self.ts15, dtype=np.int64)
        ep = np.asarray(self.epoch, dtype=np.int64)
        for h in np.unique(hic):
            idx = np.flatnonzero(hic == h)
            e = ep[idx]
            if e.size > 1 and np.any(np.diff(e) < 0):
                k = int(np.flatnonzero(np.diff(e) < 0)[0]) + 1
                raise FormatError(f"overflow epoch decreases on channel {h} at record {int(idx[k])}")
            out[idx] = unwrap_timestamps(zip(ts[idx].tolist(), e.tolist()))
        return out

    def drops(self) -> int:
        return sum(self.fifo_drops)

    def write_csv(self, path: str | Path) -> None:
        abs_ns = self.absolute_ns()
        bio = tech_to_bio_array(abs_ns)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["record_order", "hicann", "label9", "ts15", "epoch", "abs_ns", "bio_ms"])
            for i in range(len(self)):
                w.writerow([i, self.hicann[i], self.label9[i], self.ts15[i], self.epoch[i],
                            int(abs_ns[i]), repr(float(bio[i]))])

    def to_words(self) -> list[int]:
        """Binary form: header, records, and an overflow word whenever the epoch changes."""
        words = [(TAG_HEADER << _TAG_SHIFT) | FRAME_TYPE_TRACE]
        cur = 0
        for h, l9, ts, ep in zip(self.hicann, self.label9, self.ts15, self.epoch):
            if ep != cur:
                words.append((TAG_OVERFLOW << _TAG_SHIFT) | (ep & _PAYLOAD_MASK))
                cur = ep
            words.append((TAG_TRACE << _TAG_SHIFT) | (make_label14(h, l9) << 15) | ts)
        return words

    @classmethod
    def from_words(cls, words: Sequence[int]) -> "TraceMemory":
        if not len(words) or words[0] >> _TAG_SHIFT != TAG_HEADER:
            raise FormatError("missing trace header word", 0)
        mem = cls()
        cur = 0
        for off in range(1, len(words)):
            w = int(words[off])
            tag, payload = w >> _TAG_SHIFT, w & _PAYLOAD_MASK
            if tag == TAG_OVERFLOW:
                cur = payload
            elif tag == TAG_TRACE:
                h, l9 = split_label14((payload >> 15) & 0x3FFF)
                mem.append(h, l9, payload & 0x7FFF, cur)
            else:
                raise FormatError(f"unexpected word tag {tag:03b} in trace stream", off)
        return mem

    def save(self, path: str | Path) -> None:
        write_words(path, self.to_words())

    @classmethod
    def load(cls, path: str | Path) -> "TraceMemory":
        return cls.from_words(read_words(path))


def to_spike_trains(mem: TraceMemory) -> list[tuple[int, int, SpikeTrain]]:
    """Per-neuron biological spike trains, sorted by ``(hicann, label9)``."""
    if not len(mem):
        return []
    abs_ns = mem.absolute_ns()
    hic = np.asarray(mem.hicann, dtype=np.int64)
    lab = np.asarray(mem.label9, dtype=np.int64)
    key = hic * 512 + lab
    order = np.lexsort((abs_ns, key))
    key, abs_ns = key[order], abs_ns[order]
    cuts = np.flatnonzero(np.diff(key)) + 1
    out = []
    for seg_k, seg_t in zip(np.split(key, cuts), np.split(abs_ns, cuts)):
        k = int(seg_k[0])
        out.append((k // 512, k % 512, SpikeTrain(k, tech_to_bio_array(seg_t))))
    return out


class TraceModule:
    """Engine component: per-channel FIFOs, 2-per-cycle arbiter, overflow markers."""

    def __init__(self, engine, truth: GroundTruthLog, fifo_depth: int = 64, per_cycle: int = 2,
                 capacity: int = MAX_PULSES_PER_DIRECTION, enabled: bool = True,
                 duration_ns: int | None = None, n_channels: int = N_HICANNS):
        self.engine = engine
        self.truth = truth
        self.fifo_depth = fifo_depth
        self.per_cycle = per_cycle
        self.enabled = enabled
        self.duration_ns = duration_ns
        self.n_channels = n_channels
        self.memory = TraceMemory(capacity=capacity)
        self._fifos = [deque() for _ in range(n_channels)]
        self._queued = 0
        self._last = n_channels - 1
        self._cycle_pending = False
        self.epoch = 0
        self.cycles = 0

    def start(self) -> None:
        self._schedule_marker(WRAP_PERIOD_NS)

    def _schedule_marker(self, t: int) -> None:
        if self.duration_ns is None or t <= self.duration_ns:
            self.engine.schedule(t, Priority.CLOCK, self.insert_overflow_marker)

    def insert_overflow_marker(self, t: int) -> None:
        if t % WRAP_PERIOD_NS:
            raise FormatError(f"overflow marker off the wrap grid at {t} ns")
        self.epoch += 1
        self.memory.overflow_markers += 1
        self._schedule_marker(t + WRAP_PERIOD_NS)

    def receive(self, t: int, pid: int) -> None:
        truth = self.truth
        truth.delivered_ns[pid] = t
        if not self.enabled:
            truth.fate[pid] = Fate.UNTRACED
            return
        ch = int(truth.hicann[pid])
        fifo = self._fifos[ch]
        if len(fifo) >= self.fifo_depth:
            self.memory.fifo_drops[ch] += 1
            truth.fate[pid] = Fate.TRACE_DROP
            truth.drop_ns[pid] = t
            return
        fifo.append(pid)
        self._queued += 1
        if not self._cycle_pending:
            self._cycle_pending = True
            cycle = -(-t // FPGA_TICK_NS) * FPGA_TICK_NS
            self.engine.schedule(cycle, Priority.TRACE, self._cycle)

    def _cycle(self, t: int) -> None:
        self.cycles += 1
        fifos = self._fifos
        n = self.n_channels
        ch = self._last
        served = 0
        while served < self.per_cycle and self._queued:
            ch = (ch + 1) % n
            if fifos[ch]:
                self._record(t, fifos[ch].popleft())
                self._queued -= 1
                served += 1
                self._last = ch
        if self._queued:
            self.engine.schedule(t + FPGA_TICK_NS, Priority.TRACE, self._cycle)
        else:
            self._cycle_pending = False

    def _record(self, t: int, pid: int) -> None:
        truth = self.truth
        stamp = int(truth.stamp_ns[pid])
        ts15 = (stamp // HICANN_TICK_NS) % TIMESTAMP_MODULUS
        now_ticks = (t // HICANN_TICK_NS) % TIMESTAMP_MODULUS
        epoch = self.epoch - 1 if ts15 > now_ticks else self.epoch
        if self.memory.append(int(truth.hicann[pid]), int(truth.label9[pid]), ts15, epoch, pid):
            truth.traced_ns[pid] = t
            truth.fate[pid] = Fate.TRACED
        else:
            truth.fate[pid] = Fate.TRACE_FULL
            truth.drop_ns[pid] = t

    def finish(self) -> None:
        """Pulses still waiting in trace FIFOs at experiment end stay unfinished."""


def check_capacity(mem: TraceMemory) -> None:
    if mem.full:
        raise CapacityError(f"trace memory full: {mem.refused} records refused")
