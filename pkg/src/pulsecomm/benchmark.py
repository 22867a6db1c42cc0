"""Network benchmark: map neurons onto HICANNs, replay them in loopback, compare.

Every FPGA serves 8 HICANNs. FPGAs are run one after another as separate
experiments and their traces merged by neuron id.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import cv_isi, network_activity
from .errors import ConsistencyError, DomainError
from .events import N_HICANNS
from .playback import PackingConfig, pack
from .simcore import ExperimentPlan, Fate, HardwareConfig, run
from .spikegen import SpikeTrain
from .timebase import NS_PER_BIO_MS, tech_to_bio_array

MAX_SOURCES_PER_HICANN = 256
END_MARGIN_NS = 2000
ACTIVITY_BIN_MS = 10.0


@dataclass(frozen=True)
class MappingPlan:
    """Neuron ``i`` sits on global HICANN ``i // nph``, label ``i % nph``."""

    n_neurons: int
    neurons_per_hicann: int
    fpga: np.ndarray
    hicann: np.ndarray
    label9: np.ndarray

    @property
    def n_hicanns(self) -> int:
        return math.ceil(self.n_neurons / self.neurons_per_hicann)

    @property
    def n_fpgas(self) -> int:
        return math.ceil(self.n_neurons / (N_HICANNS * self.neurons_per_hicann))

    def neurons_on(self, fpga: int) -> np.ndarray:
        return np.flatnonzero(self.fpga == fpga)


def build_mapping(n_neurons: int, neurons_per_hicann: int) -> MappingPlan:
    if n_neurons <= 0:
        raise DomainError("n_neurons must be positive")
    if not 1 <= neurons_per_hicann <= MAX_SOURCES_PER_HICANN:
        raise DomainError(f"neurons_per_hicann must lie in [1, {MAX_SOURCES_PER_HICANN}]")
    ids = np.arange(n_neurons)
    g = ids // neurons_per_hicann
    return MappingPlan(n_neurons, neurons_per_hicann, g // N_HICANNS, g % N_HICANNS,
                       ids % neurons_per_hicann)


@dataclass
class BenchmarkPoint:
    neurons_per_hicann: int
    n_hicanns: int
    n_fpgas: int
    sent: int
    traced: int
    loss_fraction: float
    cv_sent: float | None
    cv_traced: float | None
    activity_correlation: float | None
    channel_drops: int
    merger_drops: int
    trace_drops: int
    unfinished: int

    def row(self) -> dict:
        return asdict(self)


def _mean_cv(trains: Sequence[SpikeTrain]) -> float | None:
    vals = [c for c in (cv_isi(t) for t in trains) if c is not None]
    return float(np.mean(vals)) if vals else None


def run_benchmark(trains: Sequence[SpikeTrain], plan: MappingPlan,
                  hardware: HardwareConfig | None = None,
                  packing: PackingConfig | None = None,
                  duration_ms: float | None = None) -> tuple[list[SpikeTrain], BenchmarkPoint]:
    """Replay ``trains`` (indexed by neuron id) through the mapped FPGAs.

    Returns the traced trains, one per neuron id, and the sweep point.
    """
    if len(trains) != plan.n_neurons:
        raise DomainError(f"{len(trains)} trains for a plan of {plan.n_neurons} neurons")
    hardware = hardware or HardwareConfig()
    packing = packing or PackingConfig()
    if duration_ms is None:
        duration_ms = max((float(t.times_bio_ms[-1]) for t in trains if t.times_bio_ms.size), default=0.0)
    duration_ns = int(round(duration_ms * NS_PER_BIO_MS)) + END_MARGIN_NS

    traced_times: list[np.ndarray] = [np.empty(0)] * plan.n_neurons
    fates = {f: 0 for f in Fate}
    for f in range(plan.n_fpgas):
        ids = plan.neurons_on(f)
        sources = [(int(plan.hicann[i]), int(plan.label9[i]), trains[i]) for i in ids]
        image, _ = pack(sources, packing)
        res = run(ExperimentPlan(duration_ns=duration_ns, image=image, hardware=hardware))
        for fate, n in zip(*np.unique(res.truth.fate, return_counts=True)):
            fates[Fate(int(fate))] += int(n)
        mem = res.trace
        if not len(mem):
            continue
        abs_ms = tech_to_bio_array(mem.absolute_ns())
        hic = np.asarray(mem.hicann)
        lab = np.asarray(mem.label9)
        lookup = {(int(plan.hicann[i]), int(plan.label9[i])): int(i) for i in ids}
        key = hic * 512 + lab
        for k in np.unique(key):
            nid = lookup.get((int(k) // 512, int(k) % 512))
            if nid is None:
                raise ConsistencyError(f"trace record for unmapped source {divmod(int(k), 512)}")
            traced_times[nid] = np.sort(abs_ms[key == k])

    traced = [SpikeTrain(nid, t) for nid, t in enumerate(traced_times)]

    n_sent = sum(t.times_bio_ms.size for t in trains)
    n_traced = sum(t.times_bio_ms.size for t in traced)
    if n_traced != fates[Fate.TRACED]:
        raise ConsistencyError("merged trace count differs from ground truth")
    sent_act, _ = network_activity(list(trains), ACTIVITY_BIN_MS, duration_ms)
    tr_act, _ = network_activity(traced, ACTIVITY_BIN_MS, duration_ms)
    corr = None
    if sent_act.std() > 0 and tr_act.std() > 0:
        corr = float(np.corrcoef(sent_act, tr_act)[0, 1])
    point = BenchmarkPoint(
        neurons_per_hicann=plan.neurons_per_hicann, n_hicanns=plan.n_hicanns, n_fpgas=plan.n_fpgas,
        sent=n_sent, traced=n_traced, loss_fraction=1 - n_traced / n_sent if n_sent else 0.0,
        cv_sent=_mean_cv(trains), cv_traced=_mean_cv(traced), activity_correlation=corr,
        channel_drops=fates[Fate.CHANNEL_DROP], merger_drops=fates[Fate.MERGER_DROP],
        trace_drops=fates[Fate.TRACE_DROP] + fates[Fate.TRACE_FULL],
        unfinished=fates[Fate.UNFINISHED],
    )
    return traced, point


def _sweep_point(args) -> BenchmarkPoint:
    trains, nph, hardware, packing, duration_ms = args
    return run_benchmark(trains, build_mapping(len(trains), nph), hardware, packing, duration_ms)[1]


def sweep(trains: Sequence[SpikeTrain], nph_values: Sequence[int],
          hardware: HardwareConfig | None = None, packing: PackingConfig | None = None,
          duration_ms: float | None = None, jobs: int = 1) -> list[BenchmarkPoint]:
    """One benchmark point per neurons-per-HICANN value, in the given order."""
    if not len(nph_values):
        raise DomainError("sweep needs at least one neurons_per_hicann value")
    tasks = [(trains, int(n), hardware, packing, duration_ms) for n in nph_values]
    if jobs <= 1:
        return [_sweep_point(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sweep_point, tasks))


def write_sweep_csv(path: str | Path, points: Sequence[BenchmarkPoint]) -> None:
    if not points:
        raise DomainError("no sweep points to write")
    fields = ["nph", "loss", "cv_sent", "cv_traced", "activity_correlation",
              "n_hicanns", "n_fpgas", "sent", "traced", "channel_drops", "merger_drops",
              "trace_drops", "unfinished"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for p in points:
            w.writerow([p.neurons_per_hicann, repr(p.loss_fraction),
                        "" if p.cv_sent is None else repr(p.cv_sent),
                        "" if p.cv_traced is None else repr(p.cv_traced),
                        "" if p.activity_correlation is None else repr(p.activity_correlation),
                        p.n_hicanns, p.n_fpgas, p.sent, p.traced, p.channel_drops,
                        p.merger_drops, p.trace_drops, p.unfinished])
