"""Biological/technical time conversion and HICANN timestamp arithmetic.

All simulator-internal time is integer nanoseconds of technical time. The
hardware runs 10^4 times faster than biology, so 1 ms biological equals
100 ns technical. The FPGA clock (125 MHz) and the HICANN clock (250 MHz)
are derived views on the same integer timebase.
"""

from __future__ import annotations

import math
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import DomainError, FormatError

ACCELERATION = 10_000
NS_PER_BIO_MS = 1_000_000 // ACCELERATION  # 100 ns technical per biological ms

FPGA_TICK_NS = 8
HICANN_TICK_NS = 4
TIMESTAMP_BITS = 15
TIMESTAMP_MODULUS = 1 << TIMESTAMP_BITS
WRAP_PERIOD_NS = TIMESTAMP_MODULUS * HICANN_TICK_NS  # 131072 ns

RoundMode = Literal["floor", "ceil"]


def bio_to_tech(t_bio_ms: float) -> int:
    """Convert a biological time in ms to integer technical ns.

    Rounds to the nearest ns, ties away from zero.
    """
    if t_bio_ms < 0:
        raise DomainError(f"biological time must be non-negative, got {t_bio_ms!r}")
    return math.floor(t_bio_ms * NS_PER_BIO_MS + 0.5)


def bio_to_tech_array(t_bio_ms: Sequence[float] | np.ndarray) -> np.ndarray:
    """Vectorised :func:`bio_to_tech` returning an int64 array."""
    t = np.asarray(t_bio_ms, dtype=np.float64)
    if t.size and t.min() < 0:
        raise DomainError("biological times must be non-negative")
    return np.floor(t * NS_PER_BIO_MS + 0.5).astype(np.int64)


def tech_to_bio(t_ns: int | float) -> float:
    return t_ns / NS_PER_BIO_MS


def tech_to_bio_array(t_ns: Sequence[int] | np.ndarray) -> np.ndarray:
    return np.asarray(t_ns, dtype=np.float64) / NS_PER_BIO_MS


def to_fpga_tick(t_ns: int, mode: RoundMode = "ceil") -> int:
    """Quantize a technical time onto the 8 ns FPGA grid.

    Playback release quantization uses ``"ceil"`` so a pulse never leaves
    before its requested time.
    """
    if mode == "floor":
        return t_ns // FPGA_TICK_NS
    if mode == "ceil":
        return -(-t_ns // FPGA_TICK_NS)
    raise ValueError(f"unknown rounding mode {mode!r}")


def floor_to_hicann_grid(t_ns: int) -> int:
    return t_ns - t_ns % HICANN_TICK_NS


def wrap_timestamp(t_ns: int) -> int:
    """15-bit HICANN timestamp for an (already 4 ns aligned) technical time."""
    return (t_ns // HICANN_TICK_NS) % TIMESTAMP_MODULUS


def epoch_of(t_ns: int) -> int:
    """Number of completed timestamp wrap periods at ``t_ns``."""
    return t_ns // WRAP_PERIOD_NS


def unwrap_timestamps(records: Iterable[tuple[int, int]]) -> list[int]:
    """Absolute technical times from ``(ticks15, overflow_epoch)`` pairs.

    Raises :class:`FormatError` if the epoch ever decreases along the
    sequence.
    """
    out: list[int] = []
    last_epoch = 0
    for i, (ts, epoch) in enumerate(records):
        if not 0 <= ts < TIMESTAMP_MODULUS:
            raise FormatError(f"timestamp out of range at index {i}: {ts}")
        if epoch < last_epoch:
            raise FormatError(
                f"overflow epoch decreases at index {i}: {epoch} < {last_epoch}"
            )
        last_epoch = epoch
        out.append(epoch * WRAP_PERIOD_NS + ts * HICANN_TICK_NS)
    return out
