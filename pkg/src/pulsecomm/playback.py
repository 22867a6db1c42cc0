"""Packing spike trains into pulse groups, and the FPGA playback module."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError
from .events import (
    MAX_GROUP_SIZE,
    N_HICANNS,
    N_LABELS,
    PlaybackFrame,
    PulseGroup,
    decode_playback_frame,
    encode_playback_frame,
    memory_budget,
    read_words,
    split_label14,
    write_words,
)
from .simcore import GroundTruthLog, Priority
from .spikegen import SpikeTrain
from .timebase import FPGA_TICK_NS, TIMESTAMP_MODULUS, bio_to_tech_array


@dataclass
class PackingConfig:
    max_group_size: int = MAX_GROUP_SIZE
    group_overhead_cycles: int = 6
    delay_compensation_ns: int = 230
    early_release_limit_cycles: int = 0

    def validate(self) -> None:
        if not 1 <= self.max_group_size <= MAX_GROUP_SIZE:
            raise DomainError(f"max_group_size must lie in [1, {MAX_GROUP_SIZE}]")
        if self.group_overhead_cycles < 6:
            raise DomainError("group_overhead_cycles must be >= 6")
        if self.delay_compensation_ns < 0 or self.early_release_limit_cycles < 0:
            raise DomainError("compensation and release limit must be non-negative")


@dataclass
class PackingReport:
    desired_ns: np.ndarray
    actual_ns: np.ndarray

    @property
    def shift_ns(self) -> np.ndarray:
        return self.actual_ns - self.desired_ns

    @property
    def n_shifted(self) -> int:
        """Pulses moved past their own quantized tick by the grouping rule."""
        quantized = -(-self.desired_ns // FPGA_TICK_NS) * FPGA_TICK_NS
        return int(np.count_nonzero(self.actual_ns > quantized))

    @property
    def max_shift_ns(self) -> int:
        return int(self.shift_ns.max()) if self.shift_ns.size else 0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pulse_id", "desired_ns", "actual_ns", "shift_ns"])
            for i, (d, a) in enumerate(zip(self.desired_ns.tolist(), self.actual_ns.tolist())):
                w.writerow([i, d, a, a - d])


@dataclass
class PlaybackImage:
    """Preloaded stimulus memory: one frame of pulse groups.

    ``requested_ns`` holds, per packed pulse, the technical time at which the
    pulse was meant to reach its HICANN. It is host-side metadata and not
    part of the binary image.
    """

    frame: PlaybackFrame
    requested_ns: np.ndarray | None = None
    hicann: np.ndarray = field(init=False)
    label9: np.ndarray = field(init=False)

    def __post_init__(self):
        labels = [lab for g in self.frame.groups for lab, _ in g.pulses]
        hl = np.array([split_label14(x) for x in labels], dtype=np.int16).reshape(-1, 2)
        self.hicann = hl[:, 0]
        self.label9 = hl[:, 1]
        if self.requested_ns is None:
            self.requested_ns = self.release_ns()

    @property
    def n_pulses(self) -> int:
        return int(self.hicann.size)

    @property
    def n_groups(self) -> int:
        return len(self.frame.groups)

    def release_ns(self) -> np.ndarray:
        """Nominal release time of every pulse (group tick + in-group position)."""
        out = [(g.release_tick + j) * FPGA_TICK_NS
               for g in self.frame.groups for j in range(len(g.pulses))]
        return np.asarray(out, dtype=np.int64)

    def to_words(self) -> list[int]:
        return encode_playback_frame(self.frame)

    @classmethod
    def from_words(cls, words: Sequence[int]) -> "PlaybackImage":
        return cls(decode_playback_frame(words))

    def save(self, path: str | Path) -> None:
        write_words(path, self.to_words())

    @classmethod
    def load(cls, path: str | Path) -> "PlaybackImage":
        return cls.from_words(read_words(path))


def capacity(image: PlaybackImage) -> tuple[int, int]:
    """``(n_pulses, bytes)`` of an image; raises CapacityError if it cannot fit."""
    return image.n_pulses, memory_budget(image.n_pulses, image.n_groups)


def pack(trains: Sequence[tuple[int, int, SpikeTrain]],
         cfg: PackingConfig | None = None) -> tuple[PlaybackImage, PackingReport]:
    """Merge ``(hicann, label9, train)`` sources into a playback image.

    Pulses are ordered by desired release tick. A group opened at tick ``g``
    keeps taking pulses while it has room and the next pulse's desired tick
    is no later than its own in-group slot ``g + position``. The next group
    opens at the later of its first pulse's desired tick and
    ``g + size + overhead``. Nothing is ever released early.
    """
    cfg = cfg or PackingConfig()
    cfg.validate()
    hic, lab, req = [], [], []
    for h, l9, train in trains:
        if not 0 <= h < N_HICANNS or not 0 <= l9 < N_LABELS:
            raise DomainError(f"invalid target hicann={h} label9={l9}")
        t = bio_to_tech_array(train.times_bio_ms)
        req.append(t)
        hic.append(np.full(t.size, h, np.int16))
        lab.append(np.full(t.size, l9, np.int16))
    requested = np.concatenate(req) if req else np.zeros(0, np.int64)
    hicann = np.concatenate(hic) if hic else np.zeros(0, np.int16)
    label9 = np.concatenate(lab) if lab else np.zeros(0, np.int16)

    desired = np.maximum(requested - cfg.delay_compensation_ns, 0)
    dtick = -(-desired // FPGA_TICK_NS)
    order = np.lexsort((np.arange(requested.size), requested, dtick))
    requested, hicann, label9 = requested[order], hicann[order], label9[order]
    desired, dtick = desired[order], dtick[order]

    n = requested.size
    actual_tick = np.empty(n, dtype=np.int64)
    group_start = []  # (first pulse index, release tick)
    gap = cfg.group_overhead_cycles
    maxg = cfg.max_group_size
    d = dtick.tolist()
    i = 0
    next_free = None
    while i < n:
        g = d[i] if next_free is None else max(d[i], next_free)
        group_start.append((i, g))
        size = 0
        while i < n and size < maxg and d[i] <= g + size:
            actual_tick[i] = g + size
            size += 1
            i += 1
        next_free = g + size + gap

    memory_budget(n, len(group_start))

    ts15 = ((requested - requested % 4) // 4) % TIMESTAMP_MODULUS
    label14 = (hicann.astype(np.int64) << 11) | (label9.astype(np.int64) << 2)
    groups = []
    bounds = [s for s, _ in group_start] + [n]
    for k, (s, g) in enumerate(group_start):
        e = bounds[k + 1]
        groups.append(PulseGroup(g, list(zip(label14[s:e].tolist(), ts15[s:e].tolist()))))
    image = PlaybackImage(PlaybackFrame(groups), requested_ns=requested)
    return image, PackingReport(desired, actual_tick * FPGA_TICK_NS)


class PlaybackModule:
    """Engine component releasing one pulse per 8 ns cycle from the image.

    A group starts once the counter reaches ``release - early_release_limit``
    and no sooner than ``overhead`` cycles after the previous group's last
    pulse. In loop mode the image is re-issued with a period equal to its
    occupied span (first release to the end of the last group's overhead).
    """

    def __init__(self, engine, image: PlaybackImage, truth: GroundTruthLog, duration_ns: int,
                 overhead_cycles: int = 6, early_release_limit: int = 0, loop_mode: bool = False):
        self.engine = engine
        self.image = image
        self.truth = truth
        self.overhead = overhead_cycles
        self.early = early_release_limit
        self.loop_mode = loop_mode
        self.duration_ns = duration_ns
        self.emitted = 0
        groups = image.frame.groups
        self._sizes = [len(g.pulses) for g in groups]
        self._ticks = [g.release_tick for g in groups]
        self._offsets = np.concatenate([[0], np.cumsum(self._sizes)]).astype(int).tolist()
        n = image.n_pulses
        if groups:
            last = groups[-1]
            self.period_ticks = last.release_tick + len(last.pulses) + overhead_cycles - groups[0].release_tick
        else:
            self.period_ticks = 0
        reps = 1
        if loop_mode and n:
            first_ns = self._ticks[0] * FPGA_TICK_NS
            reps = max(1, (duration_ns - first_ns) // (self.period_ticks * FPGA_TICK_NS) + 1)
        self.repetitions = reps
        self.base = truth.n
        req = image.requested_ns
        for k in range(reps):
            truth.extend(n, hicann=image.hicann, label9=image.label9, kind=0,
                         requested_ns=req + k * self.period_ticks * FPGA_TICK_NS)
        self._down: dict = {}

    def hicanns(self) -> set[int]:
        return set(np.unique(self.image.hicann).tolist())

    def start(self, downstream: dict) -> None:
        self._down = downstream
        if self.image.n_pulses:
            self._schedule_group(0, 0, None)

    def _schedule_group(self, rep: int, gi: int, prev_end: int | None) -> None:
        tick = self._ticks[gi] + rep * self.period_ticks
        start = max(tick - self.early, 0)
        if prev_end is not None:
            start = max(start, prev_end + self.overhead)
        t = start * FPGA_TICK_NS
        if t > self.duration_ns:
            return
        first_pid = self.base + rep * self.image.n_pulses + self._offsets[gi]
        self.engine.schedule(t, Priority.PLAYBACK, self._emit, rep, gi, 0, start, first_pid)

    def _emit(self, t: int, rep: int, gi: int, j: int, start: int, pid: int) -> None:
        truth = self.truth
        truth.released_ns[pid] = t
        self.emitted += 1
        self._down[int(truth.hicann[pid])].push(pid, t)
        size = self._sizes[gi]
        if j + 1 < size:
            self.engine.schedule(t + FPGA_TICK_NS, Priority.PLAYBACK, self._emit,
                                 rep, gi, j + 1, start, pid + 1)
            return
        end = start + size
        if gi + 1 < len(self._sizes):
            self._schedule_group(rep, gi + 1, end)
        elif self.loop_mode and rep + 1 < self.repetitions:
            self._schedule_group(rep + 1, 0, end)
