"""Deterministic spike-train sources.

Every random draw comes from numpy's Philox4x64 counter-based generator,
keyed by ``(seed, source_id)``: trains are independent of one another and
of the order in which they are generated.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import DomainError, ParseError, ValidationError
from .timebase import HICANN_TICK_NS, NS_PER_BIO_MS


@dataclass
class SpikeTrain:
    source_id: int
    times_bio_ms: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.times_bio_ms = np.asarray(self.times_bio_ms, dtype=np.float64)
        t = self.times_bio_ms
        if t.ndim != 1:
            raise ValidationError("spike times must be one-dimensional")
        if t.size and t[0] < 0:
            raise ValidationError(f"train {self.source_id}: negative spike time")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValidationError(f"train {self.source_id}: times not strictly increasing")

    def __len__(self) -> int:
        return self.times_bio_ms.size

    @property
    def isis(self) -> np.ndarray:
        return np.diff(self.times_bio_ms)


def rng_for(seed: int, source_id: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(source_id),))
    return np.random.Generator(np.random.Philox(ss))


def gen_regular(rate_bio_hz: float, duration_ms: float, phase_ms: float = 0.0,
                source_id: int = 0) -> SpikeTrain:
    if rate_bio_hz <= 0:
        raise DomainError(f"rate must be positive, got {rate_bio_hz}")
    if duration_ms <= 0:
        raise DomainError(f"duration must be positive, got {duration_ms}")
    isi = 1000.0 / rate_bio_hz
    # index arithmetic avoids cumulative float drift
    n = int(np.ceil((duration_ms - phase_ms) / isi))
    times = phase_ms + np.arange(max(n, 0)) * isi
    return SpikeTrain(source_id, times[times < duration_ms])


def _exp_process(rng: np.random.Generator, mean_isi: float, duration: float,
                 start: float = 0.0) -> np.ndarray:
    chunks = []
    t = start
    expected = max(16, int(1.2 * (duration - start) / mean_isi) + 16)
    while t < duration:
        isi = rng.exponential(mean_isi, expected)
        ts = t + np.cumsum(isi)
        chunks.append(ts)
        t = ts[-1]
    if not chunks:
        return np.empty(0)
    out = np.concatenate(chunks)
    return out[out < duration]


def gen_poisson(rate_bio_hz: float, duration_ms: float, seed: int,
                source_id: int = 0) -> SpikeTrain:
    if rate_bio_hz <= 0:
        raise DomainError(f"rate must be positive, got {rate_bio_hz}")
    rng = rng_for(seed, source_id)
    return SpikeTrain(source_id, _exp_process(rng, 1000.0 / rate_bio_hz, duration_ms))


def gen_beg(mean_rate_bio_hz: float, mode: Literal["regular", "pseudorandom"],
            duration_ms: float, seed: int = 0, source_id: int = 0) -> SpikeTrain:
    """Background-event-generator train.

    ``pseudorandom`` draws geometric ISIs on the 4 ns HICANN clock grid, so
    the shortest possible interval is one clock tick.
    """
    if mean_rate_bio_hz <= 0:
        raise DomainError(f"rate must be positive, got {mean_rate_bio_hz}")
    if mode == "regular":
        return gen_regular(mean_rate_bio_hz, duration_ms, source_id=source_id)
    if mode != "pseudorandom":
        raise DomainError(f"unknown BEG mode {mode!r}")
    mean_ticks = 1000.0 / mean_rate_bio_hz * NS_PER_BIO_MS / HICANN_TICK_NS
    if mean_ticks < 1:
        raise DomainError("mean ISI shorter than one HICANN clock tick")
    p = 1.0 / mean_ticks
    limit_ticks = duration_ms * NS_PER_BIO_MS / HICANN_TICK_NS
    rng = rng_for(seed, source_id)
    chunks = []
    total = 0
    while total < limit_ticks:
        n = max(16, int(1.2 * (limit_ticks - total) * p) + 16)
        ticks = total + np.cumsum(rng.geometric(p, n))
        chunks.append(ticks)
        total = int(ticks[-1])
    ticks = np.concatenate(chunks)
    ticks = ticks[ticks < limit_ticks]
    return SpikeTrain(source_id, ticks * (HICANN_TICK_NS / NS_PER_BIO_MS))


@dataclass
class SurrogateParams:
    """Statistics of the Up/Down-state benchmark surrogate.

    The network state is shared by all neurons: an initial asynchronous
    irregular (AI) window at ``ai_rate_hz`` followed by a two-state Markov
    chain alternating Up and Down epochs with exponential dwell times.
    Inhibitory neurons (the last ``1 - frac_excitatory`` of the ids) fire
    ``inh_rate_factor`` times faster than excitatory ones in every state.
    With ``up_rate_cv > 0`` each Up epoch scales ``up_rate_hz`` by its own
    log-normal gain of mean 1 and that coefficient of variation. An
    infinite ``mean_down_ms`` keeps the network Up for good.

    If ``target_total_rate_hz`` is set, all epoch rates are scaled by one
    common factor so that the expected population rate over the run equals
    it; the Up/Down pattern itself is unchanged.
    """

    n_neurons: int = 500
    frac_excitatory: float = 0.8
    up_rate_hz: float = 74.0
    down_rate_hz: float = 2.0
    mean_up_ms: float = 150.0
    mean_down_ms: float = 150.0
    initial_ai_ms: float = 700.0
    ai_rate_hz: float = 40.0
    inh_rate_factor: float = 1.0
    up_rate_cv: float = 0.3
    target_total_rate_hz: float | None = 19900.0
    duration_ms: float = 10000.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("up_rate_hz", "down_rate_hz", "mean_up_ms", "mean_down_ms",
                     "initial_ai_ms", "ai_rate_hz", "duration_ms", "inh_rate_factor",
                     "up_rate_cv"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        if not 0 <= self.frac_excitatory <= 1:
            raise DomainError("frac_excitatory must lie in [0, 1]")
        if self.target_total_rate_hz is not None and self.target_total_rate_hz <= 0:
            raise DomainError("target_total_rate_hz must be positive")
        if self.n_neurons < 0:
            raise DomainError("n_neurons must be non-negative")


def updown_epochs(p: SurrogateParams) -> list[tuple[float, float, float]]:
    """Shared network state as ``(start_ms, end_ms, rate_hz)`` epochs.

    Rates are the excitatory-neuron rates (after any scaling towards
    ``target_total_rate_hz``); the epoch sequence depends only on the seed.
    """
    rng = rng_for(p.seed, source_id=-1 & 0xFFFFFFFF)
    epochs = []
    t = 0.0
    if p.initial_ai_ms > 0:
        end = min(p.initial_ai_ms, p.duration_ms)
        epochs.append((0.0, end, p.ai_rate_hz))
        t = end
    sigma = np.sqrt(np.log1p(p.up_rate_cv ** 2))
    up = True
    while t < p.duration_ms:
        if up and np.isinf(p.mean_down_ms):
            dwell = p.duration_ms - t
        else:
            mean = p.mean_up_ms if up else p.mean_down_ms
            dwell = rng.exponential(mean) if mean > 0 else 0.0
        end = min(t + dwell, p.duration_ms)
        rate = p.down_rate_hz
        if up:
            gain = rng.lognormal(-sigma ** 2 / 2, sigma) if sigma > 0 else 1.0
            rate = p.up_rate_hz * gain
        if end > t:
            epochs.append((t, end, rate))
        t = end
        up = not up
    if p.target_total_rate_hz is not None and p.duration_ms > 0:
        n_exc = int(round(p.frac_excitatory * p.n_neurons))
        weight = n_exc + (p.n_neurons - n_exc) * p.inh_rate_factor
        expected = weight * sum((e - s) * r for s, e, r in epochs) / p.duration_ms
        if expected > 0:
            k = p.target_total_rate_hz / expected
            epochs = [(s, e, r * k) for s, e, r in epochs]
    return epochs


def gen_updown_surrogate(p: SurrogateParams) -> list[SpikeTrain]:
    p.validate()
    epochs = updown_epochs(p)
    n_exc = int(round(p.frac_excitatory * p.n_neurons))
    trains = []
    for nid in range(p.n_neurons):
        rng = rng_for(p.seed, nid)
        factor = 1.0 if nid < n_exc else p.inh_rate_factor
        parts = []
        for start, end, rate in epochs:
            r = rate * factor
            if r <= 0:
                continue
            parts.append(_exp_process(rng, 1000.0 / r, end, start))
        times = np.concatenate(parts) if parts else np.empty(0)
        trains.append(SpikeTrain(nid, times))
    return trains


def load_spike_file(path: str | Path) -> list[SpikeTrain]:
    """Read a ``neuron_id,time_ms`` CSV into per-neuron sorted trains.

    A header row is optional. Rows may appear in any order; an exact
    duplicate time for one neuron is rejected.
    """
    per_neuron: dict[int, list[float]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ParseError(f"expected 2 columns, got {len(row)}", lineno, str(path))
            try:
                nid = int(row[0])
                t = float(row[1])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ParseError(f"cannot parse row {row!r}", lineno, str(path)) from None
            if nid < 0 or not np.isfinite(t) or t < 0:
                raise ParseError(f"invalid neuron id or time in row {row!r}", lineno, str(path))
            per_neuron[nid].append(t)
    trains = []
    for nid in sorted(per_neuron):
        times = np.sort(np.asarray(per_neuron[nid]))
        if times.size > 1 and np.any(np.diff(times) == 0):
            raise ValidationError(f"{path}: duplicate spike time for neuron {nid}")
        trains.append(SpikeTrain(nid, times))
    return trains


def save_spike_file(path: str | Path, trains: Sequence[SpikeTrain]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["neuron_id", "time_ms"])
        for tr in trains:
            for t in tr.times_bio_ms:
                w.writerow([tr.source_id, repr(float(t))])
