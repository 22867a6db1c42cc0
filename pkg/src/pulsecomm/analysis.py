"""QoS metrics and spike-train statistics for loopback experiments.

All times handed to and returned from this module are biological
milliseconds unless a name says otherwise.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import ConsistencyError, DomainError
from .simcore import Fate, GroundTruthLog
from .spikegen import SpikeTrain
from .timebase import NS_PER_BIO_MS

BITS_PER_PULSE = 24
DEFAULT_MAX_DELAY_MS = 20.0
# Record stamps are floored to the 4 ns HICANN grid, so with delay
# compensation a pulse may appear up to 3 ns before its requested time.
BLIND_NEGATIVE_SLACK_MS = 0.04

KeyedTrains = Sequence[tuple[int, int, SpikeTrain]]


@dataclass(frozen=True)
class MatchedPair:
    sent_time_bio_ms: float
    traced_time_bio_ms: float
    hicann: int
    label9: int

    @property
    def delay_ms(self) -> float:
        return self.traced_time_bio_ms - self.sent_time_bio_ms


@dataclass(frozen=True)
class LostPulse:
    sent_time_bio_ms: float
    hicann: int
    label9: int


@dataclass
class MatchResult:
    """Column-wise matched pairs plus the unmatched (lost) sent pulses."""

    hicann: np.ndarray
    label9: np.ndarray
    sent_ms: np.ndarray
    traced_ms: np.ndarray
    lost_hicann: np.ndarray
    lost_label9: np.ndarray
    lost_ms: np.ndarray

    @property
    def delay_ms(self) -> np.ndarray:
        return self.traced_ms - self.sent_ms

    @property
    def n_pairs(self) -> int:
        return int(self.sent_ms.size)

    @property
    def n_lost(self) -> int:
        return int(self.lost_ms.size)

    @property
    def pairs(self) -> list[MatchedPair]:
        return [MatchedPair(s, r, int(h), int(l)) for h, l, s, r in
                zip(self.hicann, self.label9, self.sent_ms.tolist(), self.traced_ms.tolist())]

    @property
    def losses(self) -> list[LostPulse]:
        return [LostPulse(s, int(h), int(l)) for h, l, s in
                zip(self.lost_hicann, self.lost_label9, self.lost_ms.tolist())]

    def sorted(self) -> "MatchResult":
        """Canonical order: by key, then sent time."""
        o = np.lexsort((self.sent_ms, self.label9, self.hicann))
        lo = np.lexsort((self.lost_ms, self.lost_label9, self.lost_hicann))
        return MatchResult(self.hicann[o], self.label9[o], self.sent_ms[o], self.traced_ms[o],
                           self.lost_hicann[lo], self.lost_label9[lo], self.lost_ms[lo])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["hicann", "label9", "sent_bio_ms", "traced_bio_ms", "delay_ms", "lost"])
            for h, l, s, r in zip(self.hicann.tolist(), self.label9.tolist(),
                                  self.sent_ms.tolist(), self.traced_ms.tolist()):
                w.writerow([h, l, repr(s), repr(r), repr(r - s), 0])
            for h, l, s in zip(self.lost_hicann.tolist(), self.lost_label9.tolist(),
                               self.lost_ms.tolist()):
                w.writerow([h, l, repr(s), "", "", 1])


def _empty_i() -> np.ndarray:
    return np.zeros(0, dtype=np.int64)


def _empty_f() -> np.ndarray:
    return np.zeros(0, dtype=np.float64)


def match_oracle(truth: GroundTruthLog, trace=None) -> MatchResult:
    """Pair sent and traced pulses by ground-truth pulse id.

    Traced times come from the trace memory (unwrapped record stamps) when
    ``trace`` is given, otherwise from the logged stamp times. Only pulses
    that reached the trace memory count as matched; every other fate is a
    loss.
    """
    ok = truth.fate == Fate.TRACED
    traced_ns = truth.stamp_ns.astype(np.float64)
    if trace is not None and len(trace):
        pid = np.asarray(trace.pulse_id, dtype=np.int64)
        traced_ns = np.full(truth.n, np.nan)
        traced_ns[pid] = trace.absolute_ns()
    sent = truth.requested_ns / NS_PER_BIO_MS
    lost = ~ok
    return MatchResult(
        truth.hicann[ok].astype(np.int64), truth.label9[ok].astype(np.int64),
        sent[ok], traced_ns[ok] / NS_PER_BIO_MS,
        truth.hicann[lost].astype(np.int64), truth.label9[lost].astype(np.int64), sent[lost],
    ).sorted()


def _align_key(sent: np.ndarray, traced: np.ndarray, window: float,
               slack: float) -> np.ndarray:
    """Index into ``sent`` for every traced spike of one key (order preserving).

    The first traced spike takes the earliest sent spike with an admissible
    delay. Later ones take, among the admissible unmatched sent spikes, the
    one whose delay is closest to the previous match's delay; ties go to
    the earlier sent spike. A choice never skips so many sent spikes that
    the remaining traced spikes could no longer be matched.
    """
    n, m = sent.size, traced.size
    out = np.empty(m, dtype=np.int64)
    i = 0
    prev = None
    for k in range(m):
        t = traced[k]
        last_ok = n - (m - k)  # highest index leaving room for the rest
        lo = max(i, int(np.searchsorted(sent, t - window, side="left")))
        hi = min(last_ok, int(np.searchsorted(sent, t + slack, side="right")) - 1)
        if lo > hi:
            # no admissible candidate: fall back to the next unmatched spike
            j = i
        elif prev is None:
            j = lo
        else:
            cand = sent[lo:hi + 1]
            j = lo + int(np.argmin(np.abs((t - cand) - prev)))
        out[k] = j
        prev = t - sent[j]
        i = j + 1
    return out


def match(sent: KeyedTrains, traced: KeyedTrains | None = None,
          mode: Literal["oracle", "blind"] = "blind", truth: GroundTruthLog | None = None,
          trace=None, max_delay_window_ms: float = DEFAULT_MAX_DELAY_MS) -> MatchResult:
    """Match sent to traced spikes.

    ``mode="oracle"`` uses the ground-truth log (``truth``, optionally
    ``trace``); ``sent`` and ``traced`` are then ignored. ``mode="blind"``
    aligns traced to sent spikes per ``(hicann, label9)`` key using only
    the spike times. Unmatched sent spikes are losses.

    Raises
    ------
    ConsistencyError
        If a key has more traced than sent spikes.
    """
    if mode == "oracle":
        if truth is None:
            raise DomainError("oracle matching needs the ground-truth log")
        return match_oracle(truth, trace)
    if mode != "blind":
        raise DomainError(f"unknown matching mode {mode!r}")

    by_key: dict[tuple[int, int], list[np.ndarray]] = {}
    for side, trains in ((0, sent), (1, traced or ())):
        for h, l9, tr in trains:
            slot = by_key.setdefault((h, l9), [_empty_f(), _empty_f()])
            slot[side] = np.sort(np.concatenate([slot[side], tr.times_bio_ms]))

    cols = {k: [] for k in ("h", "l", "s", "r", "lh", "ll", "ls")}
    for (h, l9), (s, r) in sorted(by_key.items()):
        if r.size > s.size:
            raise ConsistencyError(f"key ({h}, {l9}): {r.size} traced spikes but only {s.size} sent")
        idx = _align_key(s, r, max_delay_window_ms, BLIND_NEGATIVE_SLACK_MS)
        used = np.zeros(s.size, dtype=bool)
        used[idx] = True
        cols["h"].append(np.full(r.size, h))
        cols["l"].append(np.full(r.size, l9))
        cols["s"].append(s[idx])
        cols["r"].append(r)
        lost = s[~used]
        cols["lh"].append(np.full(lost.size, h))
        cols["ll"].append(np.full(lost.size, l9))
        cols["ls"].append(lost)

    def cat(name, empty):
        return np.concatenate(cols[name]) if cols[name] else empty()

    return MatchResult(cat("h", _empty_i).astype(np.int64), cat("l", _empty_i).astype(np.int64),
                       cat("s", _empty_f), cat("r", _empty_f),
                       cat("lh", _empty_i).astype(np.int64), cat("ll", _empty_i).astype(np.int64),
                       cat("ls", _empty_f))


@dataclass(frozen=True)
class QosSummary:
    sent_count: int
    traced_count: int
    loss_fraction: float
    mean_rate_bio_hz: float
    throughput_mbit_s: float
    mean_delay_ms: float | None
    jitter_ms: float | None
    min_delay_ms: float | None
    max_delay_ms: float | None

    def as_dict(self) -> dict:
        return asdict(self)


def rate_to_mbit_s(rate_bio_hz: float) -> float:
    """Link throughput for a biological pulse rate (1 Hz bio = 10 kHz technical)."""
    return rate_bio_hz * 1e4 * BITS_PER_PULSE / 1e6


def qos(result: MatchResult, duration_ms: float) -> QosSummary:
    """QoS summary of a matched run.

    The rate is the traced count over ``duration_ms``; jitter is the
    population standard deviation of the delays. Delay fields are None
    when nothing was traced.
    """
    if duration_ms <= 0:
        raise DomainError("duration must be positive")
    n_tr = result.n_pairs
    n_sent = n_tr + result.n_lost
    loss = result.n_lost / n_sent if n_sent else 0.0
    rate = n_tr / (duration_ms / 1000.0)
    d = result.delay_ms
    if d.size:
        mean, jit, lo, hi = float(d.mean()), float(d.std()), float(d.min()), float(d.max())
    else:
        mean = jit = lo = hi = None
    return QosSummary(n_sent, n_tr, loss, rate, rate_to_mbit_s(rate), mean, jit, lo, hi)


def received_rate_bio_hz(traced_ms: np.ndarray) -> float:
    """Steady rate of a traced stream: ``(n - 1)`` intervals over its span."""
    t = np.sort(np.asarray(traced_ms, dtype=np.float64))
    if t.size < 2 or t[-1] <= t[0]:
        return 0.0
    return (t.size - 1) / ((t[-1] - t[0]) / 1000.0)


def cv_isi(train: SpikeTrain | np.ndarray) -> float | None:
    """Coefficient of variation of the interspike intervals.

    Uses the population standard deviation. Returns None for fewer than
    three spikes.
    """
    t = train.times_bio_ms if isinstance(train, SpikeTrain) else np.asarray(train, dtype=np.float64)
    if t.size < 3:
        return None
    isi = np.diff(np.sort(t))
    mu = isi.mean()
    if mu <= 0:
        return None
    return float(isi.std() / mu)


def mean_cv(trains: Sequence[SpikeTrain]) -> float | None:
    vals = [c for c in (cv_isi(t) for t in trains) if c is not None]
    return float(np.mean(vals)) if vals else None


def isi_histogram(train: SpikeTrain | np.ndarray, bin_width_ms: float) -> tuple[np.ndarray, np.ndarray]:
    """Counts of ISIs in left-closed bins ``[k w, (k+1) w)`` starting at 0.

    Returns
    -------
    counts, edges
        ``counts.sum() == n_spikes - 1``.
    """
    if bin_width_ms <= 0:
        raise DomainError("bin width must be positive")
    t = train.times_bio_ms if isinstance(train, SpikeTrain) else np.asarray(train, dtype=np.float64)
    isi = np.diff(np.sort(t))
    if not isi.size:
        return np.zeros(0, dtype=np.int64), np.zeros(1)
    idx = np.floor(isi / bin_width_ms + 1e-9).astype(np.int64)
    counts = np.bincount(idx)
    edges = np.arange(counts.size + 1) * bin_width_ms
    return counts, edges


def network_activity(trains: Sequence[SpikeTrain], bin_ms: float = 10.0,
                     t_stop_ms: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Population rate in Hz per bin of ``bin_ms``, starting at 0.

    Returns
    -------
    rate_hz, edges
        ``rate_hz.sum() * bin_ms / 1000`` equals the total spike count.
    """
    if bin_ms <= 0:
        raise DomainError("bin width must be positive")
    allt = np.concatenate([t.times_bio_ms for t in trains]) if trains else _empty_f()
    stop = t_stop_ms if t_stop_ms is not None else (allt.max() if allt.size else 0.0)
    nbins = max(1, int(math.floor(stop / bin_ms)) + 1)
    counts = np.bincount(np.floor(allt / bin_ms).astype(np.int64), minlength=nbins)[:nbins]
    return counts / (bin_ms / 1000.0), np.arange(nbins + 1) * bin_ms


def delay_vs_isi(result: MatchResult) -> tuple[np.ndarray, np.ndarray]:
    """``(preceding sent ISI, delay)`` for every pair except the first per key."""
    r = result.sorted()
    if r.n_pairs < 2:
        return _empty_f(), _empty_f()
    same = (np.diff(r.hicann) == 0) & (np.diff(r.label9) == 0)
    isi = np.diff(r.sent_ms)[same]
    delay = r.delay_ms[1:][same]
    return isi, delay


def delay_vs_isi_channel(result: MatchResult) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`delay_vs_isi`, but the preceding pulse is taken per HICANN channel."""
    o = np.lexsort((result.sent_ms, result.hicann))
    h, s, d = result.hicann[o], result.sent_ms[o], result.delay_ms[o]
    if h.size < 2:
        return _empty_f(), _empty_f()
    same = np.diff(h) == 0
    return np.diff(s)[same], d[1:][same]


def write_summary_json(path: str | Path, summary: dict) -> None:
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return None
        if isinstance(x, (np.floating, np.integer)):
            return x.item()
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        return x

    Path(path).write_text(json.dumps(clean(summary), indent=2, sort_keys=True) + "\n")


def write_columns_csv(path: str | Path, columns: dict[str, Sequence]) -> None:
    names = list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*(list(columns[n]) for n in names)):
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
