"""Loopback (downstream) and background-generator (upstream) characterization runs."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .analysis import (
    MatchResult,
    cv_isi,
    match,
    qos,
    rate_to_mbit_s,
    received_rate_bio_hz,
)
from .errors import DomainError
from .playback import PackingConfig, pack
from .simcore import BegSource, ExperimentPlan, Fate, HardwareConfig, RunResult, run
from .spikegen import SpikeTrain, gen_beg, gen_poisson, gen_regular
from .timebase import NS_PER_BIO_MS
from .trace import to_spike_trains

END_MARGIN_NS = 2000
DEFAULT_LABEL = 0


@dataclass
class CharPoint:
    """One sweep point; rates are per HICANN, throughput is aggregate."""

    direction: str
    mode: str
    rate_bio_hz: float
    n_hicanns: int
    seed: int
    sent: int
    traced: int
    loss_fraction: float
    received_rate_bio_hz: float
    throughput_mbit_s: float
    mean_delay_ms: float | None = None
    jitter_ms: float | None = None
    max_delay_ms: float | None = None
    cv_sent: float | None = None
    cv_traced: float | None = None
    channel_drops: int = 0
    merger_drops: int = 0
    trace_drops: int = 0
    unfinished: int = 0
    extra: dict = field(default_factory=dict, repr=False)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d


def _source(mode: str, rate: float, duration_ms: float, seed: int, sid: int) -> SpikeTrain:
    if mode == "regular":
        return gen_regular(rate, duration_ms, source_id=sid)
    if mode == "poisson":
        return gen_poisson(rate, duration_ms, seed=seed, source_id=sid)
    raise DomainError(f"unknown downstream mode {mode!r}")


def downstream_run(rate_bio_hz: float, mode: Literal["regular", "poisson"] = "regular",
                   n_pulses: int = 20000, seed: int = 0, n_hicanns: int = 1,
                   hardware: HardwareConfig | None = None, compensation_ns: int = 0,
                   ) -> tuple[RunResult, list[tuple[int, int, SpikeTrain]]]:
    """Loopback experiment with one source of ``rate_bio_hz`` per HICANN."""
    if rate_bio_hz <= 0 or n_pulses <= 0:
        raise DomainError("rate and pulse count must be positive")
    duration_ms = n_pulses / rate_bio_hz * 1000.0
    trains = [(h, DEFAULT_LABEL, _source(mode, rate_bio_hz, duration_ms, seed, h))
              for h in range(n_hicanns)]
    image, _ = pack(trains, PackingConfig(delay_compensation_ns=compensation_ns))
    span = int(image.requested_ns.max()) if image.n_pulses else 0
    plan = ExperimentPlan(duration_ns=span + END_MARGIN_NS, image=image,
                          hardware=hardware or HardwareConfig())
    return run(plan), trains


def upstream_run(rate_bio_hz: float, mode: Literal["regular", "pseudorandom"] = "regular",
                 n_pulses: int = 20000, seed: int = 0, n_hicanns: int = 1,
                 hardware: HardwareConfig | None = None,
                 ) -> tuple[RunResult, list[tuple[int, int, SpikeTrain]]]:
    """One background generator of ``rate_bio_hz`` per HICANN, traced upstream."""
    if rate_bio_hz <= 0 or n_pulses <= 0:
        raise DomainError("rate and pulse count must be positive")
    duration_ms = n_pulses / rate_bio_hz * 1000.0
    trains = [(h, DEFAULT_LABEL, gen_beg(rate_bio_hz, mode, duration_ms, seed=seed, source_id=h))
              for h in range(n_hicanns)]
    span = max((int(round(t.times_bio_ms[-1] * NS_PER_BIO_MS)) for _, _, t in trains
                if t.times_bio_ms.size), default=0)
    plan = ExperimentPlan(duration_ns=span + END_MARGIN_NS,
                          beg_sources={h: [BegSource(t, l9)] for h, l9, t in trains},
                          hardware=hardware or HardwareConfig())
    return run(plan), trains


def summarize(direction: str, mode: str, rate: float, n_hicanns: int, seed: int,
              result: RunResult, trains) -> CharPoint:
    m: MatchResult = match(None, mode="oracle", truth=result.truth, trace=result.trace)
    duration_ms = result.duration_ns / NS_PER_BIO_MS
    q = qos(m, duration_ms)
    recv = received_rate_bio_hz(m.traced_ms)
    counts = result.truth.counts()
    traced_trains = to_spike_trains(result.trace)
    cvs_sent = [c for c in (cv_isi(t) for _, _, t in trains) if c is not None]
    cvs_tr = [c for c in (cv_isi(t) for _, _, t in traced_trains) if c is not None]
    return CharPoint(
        direction=direction, mode=mode, rate_bio_hz=rate, n_hicanns=n_hicanns, seed=seed,
        sent=q.sent_count, traced=q.traced_count, loss_fraction=q.loss_fraction,
        received_rate_bio_hz=recv, throughput_mbit_s=rate_to_mbit_s(recv),
        mean_delay_ms=q.mean_delay_ms if direction == "downstream" else None,
        jitter_ms=q.jitter_ms if direction == "downstream" else None,
        max_delay_ms=q.max_delay_ms if direction == "downstream" else None,
        cv_sent=float(np.mean(cvs_sent)) if cvs_sent else None,
        cv_traced=float(np.mean(cvs_tr)) if cvs_tr else None,
        channel_drops=counts[Fate.CHANNEL_DROP.name.lower()],
        merger_drops=counts[Fate.MERGER_DROP.name.lower()],
        trace_drops=counts[Fate.TRACE_DROP.name.lower()] + counts[Fate.TRACE_FULL.name.lower()],
        unfinished=counts[Fate.UNFINISHED.name.lower()],
        extra={"match": m},
    )


def downstream_point(rate: float, mode: str = "regular", n_pulses: int = 20000, seed: int = 0,
                     n_hicanns: int = 1, hardware: HardwareConfig | None = None) -> CharPoint:
    res, trains = downstream_run(rate, mode, n_pulses, seed, n_hicanns, hardware)
    return summarize("downstream", mode, rate, n_hicanns, seed, res, trains)


def upstream_point(rate: float, mode: str = "regular", n_pulses: int = 20000, seed: int = 0,
                   n_hicanns: int = 1, hardware: HardwareConfig | None = None) -> CharPoint:
    res, trains = upstream_run(rate, mode, n_pulses, seed, n_hicanns, hardware)
    return summarize("upstream", mode, rate, n_hicanns, seed, res, trains)


def loss_onset(rates: Sequence[float], losses: Sequence[float], threshold: float = 1e-3) -> float | None:
    """Lowest rate of the grid whose loss exceeds ``threshold`` (None if none does)."""
    for r, l in sorted(zip(rates, losses)):
        if l > threshold:
            return float(r)
    return None


def write_points_csv(path: str | Path, points: Sequence[CharPoint]) -> None:
    rows = [p.row() for p in points]
    if not rows:
        raise DomainError("no sweep points to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
