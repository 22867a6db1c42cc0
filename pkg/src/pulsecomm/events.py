"""Bit-exact codecs for pulse events, link packets and playback frames.

Layouts used here (fixed, documented in docs/protocol.md):

* pulse payload: 24 bits, big-endian, ``(label9 << 15) | ts15``
* link packet: ``[header][payload...][crc8]`` with header 0x01 (single) or
  0x02 (double); CRC-8 polynomial 0x07, init 0x00, over header + payload
* playback/trace words: 32 bits, top 3 bits are a word-type tag
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import CapacityError, DomainError, FormatError
from .timebase import FPGA_TICK_NS, TIMESTAMP_MODULUS

LABEL_BITS = 9
N_LABELS = 1 << LABEL_BITS
N_HICANNS = 8

CHUNK_NS = FPGA_TICK_NS  # one 8-bit chunk at 1 Gbit/s
IDLE_CHUNKS = 2

MAX_GROUP_SIZE = 184
MAX_PULSES_PER_DIRECTION = 125_000_000
MEMORY_BYTES_PER_DIRECTION = 512 * 1024 * 1024

# word-type tags (top 3 bits of each 32-bit memory word)
TAG_HEADER = 0b000
TAG_GROUP = 0b001
TAG_PULSE = 0b010
TAG_TRACE = 0b011
TAG_OVERFLOW = 0b100
_TAG_SHIFT = 29
_PAYLOAD_MASK = (1 << _TAG_SHIFT) - 1

FRAME_TYPE_PLAYBACK = 0x1
FRAME_TYPE_TRACE = 0x2


class PacketKind(enum.IntEnum):
    SINGLE = 0x01
    DOUBLE = 0x02

    @property
    def n_pulses(self) -> int:
        return 1 if self is PacketKind.SINGLE else 2

    @property
    def n_chunks(self) -> int:
        return 2 + 3 * self.n_pulses


@dataclass(frozen=True)
class PulseEvent:
    hicann: int
    label9: int
    ts: int = 0

    def __post_init__(self):
        if not 0 <= self.hicann < N_HICANNS:
            raise DomainError(f"hicann index out of range: {self.hicann}")
        if not 0 <= self.label9 < N_LABELS:
            raise DomainError(f"label out of range: {self.label9}")
        if not 0 <= self.ts < TIMESTAMP_MODULUS:
            raise DomainError(f"timestamp out of range: {self.ts}")

    @property
    def channel3(self) -> int:
        return self.label9 >> 6

    @property
    def neuron6(self) -> int:
        return self.label9 & 63


@dataclass(frozen=True)
class PulsePacket:
    kind: PacketKind
    pulses: tuple[PulseEvent, ...]

    def __post_init__(self):
        if len(self.pulses) != self.kind.n_pulses:
            raise DomainError(
                f"{self.kind.name} packet needs {self.kind.n_pulses} pulses, got {len(self.pulses)}"
            )


# --- CRC-8 (poly 0x07, init 0x00, no reflection, no final xor) -------------

def _make_crc8_table(poly: int = 0x07) -> list[int]:
    table = []
    for byte in range(256):
        reg = byte
        for _ in range(8):
            reg = ((reg << 1) ^ poly) & 0xFF if reg & 0x80 else (reg << 1) & 0xFF
        table.append(reg)
    return table


_CRC8_TABLE = _make_crc8_table()


def crc8(data: bytes | Iterable[int]) -> int:
    reg = 0
    for b in data:
        reg = _CRC8_TABLE[reg ^ b]
    return reg


# --- pulse and packet codecs ------------------------------------------------

def encode_pulse(p: PulseEvent) -> bytes:
    v = (p.label9 << 15) | p.ts
    return bytes(((v >> 16) & 0xFF, (v >> 8) & 0xFF, v & 0xFF))


def decode_pulse(octets: bytes, hicann: int = 0) -> PulseEvent:
    if len(octets) != 3:
        raise FormatError(f"pulse payload must be 3 octets, got {len(octets)}")
    v = (octets[0] << 16) | (octets[1] << 8) | octets[2]
    return PulseEvent(hicann, v >> 15, v & (TIMESTAMP_MODULUS - 1))


def encode_packet(pkt: PulsePacket) -> bytes:
    body = bytes([int(pkt.kind)]) + b"".join(encode_pulse(p) for p in pkt.pulses)
    return body + bytes([crc8(body)])


def decode_packet(octets: bytes, hicann: int = 0) -> PulsePacket:
    if not octets:
        raise FormatError("empty packet")
    try:
        kind = PacketKind(octets[0])
    except ValueError:
        raise FormatError(f"unknown packet header 0x{octets[0]:02x}") from None
    if len(octets) != kind.n_chunks:
        raise FormatError(f"{kind.name} packet must be {kind.n_chunks} octets, got {len(octets)}")
    if crc8(octets[:-1]) != octets[-1]:
        raise FormatError("CRC mismatch")
    pulses = tuple(decode_pulse(octets[1 + 3 * i: 4 + 3 * i], hicann) for i in range(kind.n_pulses))
    return PulsePacket(kind, pulses)


def iter_packet_stream(data: bytes, hicann: int = 0) -> Iterator[PulsePacket]:
    """Decode a raw dump of back-to-back packets."""
    pos = 0
    while pos < len(data):
        try:
            kind = PacketKind(data[pos])
        except ValueError:
            raise FormatError(f"unknown packet header 0x{data[pos]:02x} at byte {pos}") from None
        end = pos + kind.n_chunks
        if end > len(data):
            raise FormatError(f"truncated packet at byte {pos}")
        yield decode_packet(data[pos:end], hicann)
        pos = end


def packet_occupancy(kind: PacketKind) -> int:
    """Link time in ns one packet blocks, including the two idle chunks."""
    return (kind.n_chunks + IDLE_CHUNKS) * CHUNK_NS


SINGLE_PACKET_NS = packet_occupancy(PacketKind.SINGLE)  # 56
DOUBLE_PACKET_NS = packet_occupancy(PacketKind.DOUBLE)  # 80


# --- playback frame format --------------------------------------------------

def make_label14(hicann: int, label9: int) -> int:
    """3-bit HICANN select, 9-bit label and 2 reserved zero bits."""
    return (hicann << 11) | (label9 << 2)


def split_label14(label14: int) -> tuple[int, int]:
    return (label14 >> 11) & 0x7, (label14 >> 2) & (N_LABELS - 1)


@dataclass
class PulseGroup:
    release_tick: int
    pulses: list[tuple[int, int]] = field(default_factory=list)  # (label14, ts15)


@dataclass
class PlaybackFrame:
    groups: list[PulseGroup] = field(default_factory=list)
    header_word: int = FRAME_TYPE_PLAYBACK

    @property
    def n_pulses(self) -> int:
        return sum(len(g.pulses) for g in self.groups)

    def validate(self) -> None:
        last = None
        for i, g in enumerate(self.groups):
            if not g.pulses:
                raise FormatError(f"group {i} is empty")
            if len(g.pulses) > MAX_GROUP_SIZE:
                raise FormatError(f"group {i} has {len(g.pulses)} pulses (max {MAX_GROUP_SIZE})")
            if last is not None and g.release_tick <= last:
                raise FormatError(f"group {i} release tick {g.release_tick} not after {last}")
            if not 0 <= g.release_tick <= _PAYLOAD_MASK:
                raise FormatError(f"group {i} release tick out of range")
            last = g.release_tick


def _word(tag: int, payload: int) -> int:
    return (tag << _TAG_SHIFT) | (payload & _PAYLOAD_MASK)


def encode_playback_frame(frame: PlaybackFrame) -> list[int]:
    frame.validate()
    if frame.header_word >> _TAG_SHIFT:
        raise FormatError("header word must leave the tag bits zero")
    words = [_word(TAG_HEADER, frame.header_word)]
    for g in frame.groups:
        words.append(_word(TAG_GROUP, g.release_tick))
        for label14, ts15 in g.pulses:
            words.append(_word(TAG_PULSE, ((label14 & 0x3FFC) << 15) | (ts15 & 0x7FFF)))
    return words


def decode_playback_frame(words: Sequence[int]) -> PlaybackFrame:
    if not len(words):
        raise FormatError("empty frame", 0)
    tag = words[0] >> _TAG_SHIFT
    if tag != TAG_HEADER:
        raise FormatError(f"expected header word, found tag {tag:03b}", 0)
    frame = PlaybackFrame(header_word=words[0] & _PAYLOAD_MASK)
    current: PulseGroup | None = None
    for off in range(1, len(words)):
        w = int(words[off])
        tag, payload = w >> _TAG_SHIFT, w & _PAYLOAD_MASK
        if tag == TAG_GROUP:
            if current is not None and not current.pulses:
                raise FormatError("empty pulse group", off - 1)
            if current is not None and payload <= current.release_tick:
                raise FormatError("release ticks not increasing", off)
            current = PulseGroup(payload)
            frame.groups.append(current)
        elif tag == TAG_PULSE:
            if current is None:
                raise FormatError("pulse word before any group", off)
            if len(current.pulses) == MAX_GROUP_SIZE:
                raise FormatError(f"group exceeds {MAX_GROUP_SIZE} pulses", off)
            # reserved label bits are ignored on decode
            current.pulses.append(((payload >> 15) & 0x3FFC, payload & 0x7FFF))
        else:
            raise FormatError(f"unknown word tag {tag:03b}", off)
    if current is not None and not current.pulses:
        raise FormatError("empty pulse group", len(words) - 1)
    return frame


def write_words(path: str | Path, words: Sequence[int]) -> None:
    """Write 32-bit words little-endian (``.pbm.bin`` / trace ``.bin``)."""
    np.asarray(words, dtype="<u4").tofile(path)


def read_words(path: str | Path) -> list[int]:
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise FormatError(f"{path}: length {len(raw)} is not a multiple of 4 bytes")
    return np.frombuffer(raw, dtype="<u4").astype(np.int64).tolist()


def memory_budget(n_pulses: int, n_groups: int | None = None) -> int:
    """Bytes of playback (or trace) memory needed for ``n_pulses``.

    ``n_groups`` defaults to the densest packing, one group per 184 pulses.
    """
    if n_pulses < 0:
        raise DomainError("pulse count must be non-negative")
    if n_groups is None:
        n_groups = -(-n_pulses // MAX_GROUP_SIZE)
    nbytes = 4 * (1 + n_groups + n_pulses)
    if n_pulses > MAX_PULSES_PER_DIRECTION:
        raise CapacityError(
            f"{n_pulses} pulses exceed the {MAX_PULSES_PER_DIRECTION} pulse memory capacity"
        )
    if nbytes > MEMORY_BYTES_PER_DIRECTION:
        raise CapacityError(f"{nbytes} bytes exceed the 512 MiB memory")
    return nbytes
