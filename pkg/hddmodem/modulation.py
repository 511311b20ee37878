"""On-off keying: '1' is carrier (seek activity) for t1 seconds, '0' is silence for t0 seconds."""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

from .errors import ModulationError
from .framing import BitString

# demodulate_ideal accepts segment durations within this fraction of t0/t1
DURATION_TOLERANCE = 0.01


@dataclass(frozen=True)
class SymbolTiming:
    t0: float = 0.3
    t1: float = 0.3

    def __post_init__(self):
        if self.t0 <= 0 or self.t1 <= 0:
            raise ModulationError(
                f"symbol durations must be positive, got t0={self.t0} t1={self.t1}"
            )

    @property
    def symmetric(self) -> bool:
        return self.t0 == self.t1

    def duration(self, bit: int) -> float:
        return self.t1 if bit else self.t0


class Segment(NamedTuple):
    carrier_on: bool
    duration: float


@dataclass(frozen=True)
class SymbolSchedule:
    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        segments = tuple(Segment(bool(on), float(d)) for on, d in self.segments)
        if any(s.duration <= 0 for s in segments):
            raise ModulationError("all segment durations must be positive")
        object.__setattr__(self, "segments", segments)

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    @property
    def total_duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def on_intervals(self) -> list[tuple[float, float]]:
        """(start, end) times of the carrier-on segments, adjacent ones merged"""
        intervals = []
        t = 0.0
        for segment in self.merged():
            if segment.carrier_on:
                intervals.append((t, t + segment.duration))
            t += segment.duration
        return intervals

    def merged(self) -> "SymbolSchedule":
        merged: list[Segment] = []
        for segment in self.segments:
            if merged and merged[-1].carrier_on == segment.carrier_on:
                merged[-1] = Segment(segment.carrier_on, merged[-1].duration + segment.duration)
            else:
                merged.append(segment)
        return SymbolSchedule(tuple(merged))

    def padded(self, lead_in_s: float = 0.0, tail_s: float = 0.0) -> "SymbolSchedule":
        """Surround the schedule with idle time"""
        segments = list(self.segments)
        if lead_in_s > 0:
            segments.insert(0, Segment(False, lead_in_s))
        if tail_s > 0:
            segments.append(Segment(False, tail_s))
        return SymbolSchedule(tuple(segments))

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["state", "duration_seconds"])
            for segment in self.segments:
                writer.writerow(["on" if segment.carrier_on else "off", repr(segment.duration)])
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "SymbolSchedule":
        with Path(path).open(newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        try:
            segments = [
                Segment({"on": True, "off": False}[row["state"]], float(row["duration_seconds"]))
                for row in rows
            ]
        except (KeyError, ValueError) as e:
            raise ModulationError(f"malformed schedule file {path}: {e}")
        return cls(tuple(segments))


def modulate(bits: BitString, timing: SymbolTiming) -> SymbolSchedule:
    """One segment per bit. Adjacent same-state segments are kept apart."""
    bits = BitString(bits)
    if not bits:
        raise ModulationError("nothing to modulate")
    return SymbolSchedule(tuple(Segment(bool(b), timing.duration(b)) for b in bits))


def demodulate_ideal(schedule: SymbolSchedule, timing: SymbolTiming) -> BitString:
    """Noise-free inverse of modulate"""
    bits = []
    for i, segment in enumerate(schedule):
        expected = timing.t1 if segment.carrier_on else timing.t0
        if abs(segment.duration - expected) > DURATION_TOLERANCE * expected:
            raise ModulationError(
                f"malformed schedule: segment {i} lasts {segment.duration}s, expected {expected}s"
            )
        bits.append(int(segment.carrier_on))
    return BitString(bits)


def raw_bit_rate(timing: SymbolTiming) -> float:
    """Bits per second for symmetric timing"""
    if not timing.symmetric:
        raise ModulationError("rate undefined for asymmetric timing")
    return 1 / timing.t0
