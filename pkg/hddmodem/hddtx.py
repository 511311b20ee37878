"""
Drive a disk with a SymbolSchedule: during carrier-on segments the actuator is kept busy with
alternating positioned reads at two distant sectors; during carrier-off segments it rests.

Reads only. Nothing here ever writes to a device.
"""

import csv
import logging
import os
import shlex
import shutil
import stat
import subprocess
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple, Protocol

from .errors import TransmitError
from .modulation import Segment, SymbolSchedule

log = logging.getLogger(__name__)

DROP_CACHES = Path("/proc/sys/vm/drop_caches")
OVERRUN_TOLERANCE = 0.1
MIN_SEGMENT_S = 1e-6


class CacheStatus(str, Enum):
    APPLIED = "applied"
    UNAVAILABLE = "unavailable"
    DENIED = "denied"


CACHE_MEASURES = ("synchronized_io", "page_cache_drop", "write_cache_disable")


@dataclass(frozen=True)
class SeekSpan:
    begin_sector: int
    end_sector: int
    sector_stride: int = 10000
    sector_size_bytes: int = 512

    def __post_init__(self):
        if self.begin_sector == self.end_sector:
            raise TransmitError("begin and end sectors must differ")
        if min(self.begin_sector, self.end_sector) < 0:
            raise TransmitError("sectors must be >= 0")
        if self.sector_stride <= 0:
            raise TransmitError(f"stride must be positive, got {self.sector_stride}")
        if self.sector_size_bytes <= 0:
            raise TransmitError("sector size must be positive")

    @classmethod
    def full(cls, capacity_sectors: int, **kwargs) -> "SeekSpan":
        """First to last addressable sector"""
        return cls(0, capacity_sectors - 1, **kwargs)

    def check_capacity(self, capacity_sectors: int):
        if max(self.begin_sector, self.end_sector) >= capacity_sectors:
            raise TransmitError(
                f"span {self.begin_sector}..{self.end_sector} exceeds device capacity "
                f"of {capacity_sectors} sectors"
            )


class SeekEvent(NamedTuple):
    timestamp: float
    target_sector: int
    latency_s: float


class SeekBackend(Protocol):
    capacity_sectors: int
    sector_size: int

    def now(self) -> float:
        ...

    def sleep(self, seconds: float):
        ...

    def read_sector(self, sector: int):
        ...

    def synchronized_io(self) -> CacheStatus:
        ...

    def drop_page_cache(self) -> CacheStatus:
        ...

    def disable_write_cache(self) -> CacheStatus:
        ...

    def close(self):
        ...


class MockBackend:
    """Virtual clock; every read costs exactly `latency_s`"""

    def __init__(
        self,
        capacity_sectors: int = 1 << 31,
        latency_s: float = 0.005,
        capabilities: Iterable[str] = CACHE_MEASURES,
        privileged: bool = True,
        fail_after: int | None = None,
        sector_size: int = 512,
    ):
        if latency_s <= 0:
            raise TransmitError("mock latency must be positive")
        self.capacity_sectors = capacity_sectors
        self.sector_size = sector_size
        self.latency_s = latency_s
        self.capabilities = frozenset(capabilities)
        self.privileged = privileged
        self.fail_after = fail_after
        self.clock = 0.0
        self.sectors_read: list[int] = []

    def close(self):
        pass

    def now(self) -> float:
        return self.clock

    def sleep(self, seconds: float):
        self.clock += max(0.0, seconds)

    def read_sector(self, sector: int):
        if self.fail_after is not None and len(self.sectors_read) >= self.fail_after:
            raise OSError(5, "simulated I/O error")
        if not 0 <= sector < self.capacity_sectors:
            raise OSError(22, f"sector {sector} out of range")
        self.clock += self.latency_s
        self.sectors_read.append(sector)

    def _request(self, measure: str, needs_privilege: bool) -> CacheStatus:
        if measure not in self.capabilities:
            return CacheStatus.UNAVAILABLE
        if needs_privilege and not self.privileged:
            return CacheStatus.DENIED
        return CacheStatus.APPLIED

    def synchronized_io(self) -> CacheStatus:
        return self._request("synchronized_io", needs_privilege=False)

    def drop_page_cache(self) -> CacheStatus:
        return self._request("page_cache_drop", needs_privilege=True)

    def disable_write_cache(self) -> CacheStatus:
        return self._request("write_cache_disable", needs_privilege=True)


class DeviceBackend:
    """A block device or a large preallocated file, read one sector at a time"""

    def __init__(self, path: str | Path, sector_size: int = 512):
        self.path = Path(path)
        if not self.path.exists():
            raise FileNotFoundError(self.path.as_posix())
        self.sector_size = sector_size
        self.is_block_device = stat.S_ISBLK(self.path.stat().st_mode)
        self._fd = os.open(self.path, os.O_RDONLY)
        size = os.lseek(self._fd, 0, os.SEEK_END)
        self.capacity_sectors = size // sector_size
        if self.capacity_sectors < 2:
            self.close()
            raise TransmitError(f"{self.path} is too small to seek on")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float):
        if seconds > 0:
            time.sleep(seconds)

    def read_sector(self, sector: int):
        offset = sector * self.sector_size
        os.posix_fadvise(self._fd, offset, self.sector_size, os.POSIX_FADV_DONTNEED)
        os.pread(self._fd, self.sector_size, offset)

    def synchronized_io(self) -> CacheStatus:
        sync_flags = getattr(os, "O_DSYNC", 0) | getattr(os, "O_RSYNC", 0)
        if not sync_flags:
            return CacheStatus.UNAVAILABLE
        try:
            fd = os.open(self.path, os.O_RDONLY | sync_flags)
        except PermissionError:
            return CacheStatus.DENIED
        os.close(self._fd)
        self._fd = fd
        return CacheStatus.APPLIED

    def drop_page_cache(self) -> CacheStatus:
        os.sync()
        try:
            DROP_CACHES.write_text("3\n")
        except PermissionError:
            return CacheStatus.DENIED
        except FileNotFoundError:
            return CacheStatus.UNAVAILABLE
        return CacheStatus.APPLIED

    def disable_write_cache(self) -> CacheStatus:
        if not self.is_block_device or shutil.which("hdparm") is None:
            return CacheStatus.UNAVAILABLE
        process = _run_hdparm(f"hdparm -W0 {shlex.quote(self.path.as_posix())}")
        if process.returncode == 0:
            return CacheStatus.APPLIED
        return CacheStatus.DENIED if os.geteuid() != 0 else CacheStatus.UNAVAILABLE


def _run_hdparm(cmd: str) -> subprocess.CompletedProcess:
    """Unpack command into subprocess. Failures are reported by the caller."""
    process = subprocess.run(shlex.split(cmd), capture_output=True, text=True)
    if process.returncode:
        log.info("%s failed: %s", cmd, process.stderr.strip())
    return process


@dataclass
class CacheReport:
    measures: dict[str, CacheStatus] = field(default_factory=dict)

    @property
    def applied(self) -> list[str]:
        return [name for name, status in self.measures.items() if status is CacheStatus.APPLIED]

    def __str__(self):
        return ", ".join(f"{name}: {status.value}" for name, status in self.measures.items())


def cache_avoidance_setup(backend: SeekBackend) -> CacheReport:
    """Ask for every cache measure in turn. Refusals are reported, never raised."""
    report = CacheReport()
    requests = (backend.synchronized_io, backend.drop_page_cache, backend.disable_write_cache)
    for name, request in zip(CACHE_MEASURES, requests):
        try:
            status = request()
        except PermissionError:
            status = CacheStatus.DENIED
        except OSError as e:
            log.info("%s failed: %s", name, e)
            status = CacheStatus.UNAVAILABLE
        report.measures[name] = status
        log.info("%s: %s", name, status.value)
    if len(report.applied) < len(CACHE_MEASURES):
        log.warning("cache avoidance incomplete (%s); relying on the sector stride", report)
    return report


def execute_schedule(
    schedule: SymbolSchedule,
    span: SeekSpan,
    backend: SeekBackend,
) -> list[SeekEvent]:
    """
    Run the schedule against the backend's clock. Segment deadlines are absolute, so an overrun
    in one segment is taken out of the next rather than accumulating.
    """
    capacity = backend.capacity_sectors
    span.check_capacity(capacity)
    events: list[SeekEvent] = []
    begin, end = span.begin_sector, span.end_sector
    deadline = backend.now()
    for i, segment in enumerate(schedule):
        deadline += segment.duration
        if segment.carrier_on:
            while backend.now() < deadline:
                for sector in (begin, end):
                    started = backend.now()
                    if started >= deadline:
                        break
                    try:
                        backend.read_sector(sector)
                    except OSError as e:
                        raise TransmitError(f"read of sector {sector} failed: {e}", events)
                    events.append(SeekEvent(started, sector, backend.now() - started))
                begin = (begin + span.sector_stride) % capacity
                end = (end + span.sector_stride) % capacity
        else:
            backend.sleep(deadline - backend.now())
        overrun = backend.now() - deadline
        if overrun > OVERRUN_TOLERANCE * segment.duration:
            log.warning(
                "segment %d (%s, %.3fs) overran its deadline by %.3fs",
                i,
                "on" if segment.carrier_on else "off",
                segment.duration,
                overrun,
            )
    log.info("issued %d reads over %.2fs", len(events), schedule.total_duration)
    return events


def events_to_schedule(
    events: Iterable[SeekEvent],
    gap_threshold_s: float,
    origin_s: float | None = None,
    end_s: float | None = None,
) -> SymbolSchedule:
    """
    Rebuild the on/off timeline from a read log: reads closer together than the gap threshold
    form one carrier-on segment. origin_s and end_s add the idle time before and after.
    """
    if gap_threshold_s <= 0:
        raise TransmitError(f"gap threshold must be positive, got {gap_threshold_s}")
    events = sorted(events)
    if not events:
        return SymbolSchedule()
    clusters: list[list[SeekEvent]] = [[events[0]]]
    for event in events[1:]:
        last = clusters[-1][-1]
        if event.timestamp - (last.timestamp + last.latency_s) >= gap_threshold_s:
            clusters.append([event])
        else:
            clusters[-1].append(event)

    segments = []
    first_start = clusters[0][0].timestamp
    if origin_s is not None and first_start - origin_s > MIN_SEGMENT_S:
        segments.append(Segment(False, first_start - origin_s))
    for i, cluster in enumerate(clusters):
        start = cluster[0].timestamp
        stop = cluster[-1].timestamp + cluster[-1].latency_s
        segments.append(Segment(True, max(stop - start, MIN_SEGMENT_S)))
        if i + 1 < len(clusters):
            segments.append(Segment(False, clusters[i + 1][0].timestamp - stop))
    last = clusters[-1][-1]
    stop = last.timestamp + last.latency_s
    if end_s is not None and end_s - stop > MIN_SEGMENT_S:
        segments.append(Segment(False, end_s - stop))
    return SymbolSchedule(tuple(segments))


def write_events_csv(path: str | Path, events: Iterable[SeekEvent]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["timestamp_s", "sector", "latency_s"])
        for event in events:
            writer.writerow(
                [f"{event.timestamp:.6f}", event.target_sector, f"{event.latency_s:.6f}"]
            )
    return path


def read_events_csv(path: str | Path) -> list[SeekEvent]:
    with Path(path).open(newline="", encoding="utf-8") as f:
        return [
            SeekEvent(float(row["timestamp_s"]), int(row["sector"]), float(row["latency_s"]))
            for row in csv.DictReader(f)
        ]
