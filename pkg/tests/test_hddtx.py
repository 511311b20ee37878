import os

import numpy as np
import pytest

from hddmodem.errors import TransmitError
from hddmodem.framing import BitString
from hddmodem.hddtx import (
    CACHE_MEASURES,
    CacheStatus,
    DeviceBackend,
    MockBackend,
    SeekEvent,
    SeekSpan,
    cache_avoidance_setup,
    events_to_schedule,
    execute_schedule,
    read_events_csv,
    write_events_csv,
)
from hddmodem.modulation import Segment, SymbolSchedule, SymbolTiming, modulate

GAP_S = 0.05


def _random_schedule(seed: int) -> SymbolSchedule:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 15))
    states = rng.integers(0, 2, n).astype(bool)
    durations = rng.uniform(0.1, 2.0, n)
    return SymbolSchedule(tuple(Segment(s, d) for s, d in zip(states, durations)))


def _off_intervals(schedule: SymbolSchedule) -> list[tuple[float, float]]:
    intervals = []
    t = 0.0
    for segment in schedule.merged():
        if not segment.carrier_on:
            intervals.append((t, t + segment.duration))
        t += segment.duration
    return intervals


@pytest.mark.parametrize("seed", range(20))
def test_timeline_fidelity(seed):
    schedule = _random_schedule(seed)
    backend = MockBackend(latency_s=0.005)
    span = SeekSpan.full(backend.capacity_sectors)
    events = execute_schedule(schedule, span, backend)
    rebuilt = events_to_schedule(events, GAP_S, origin_s=0.0, end_s=backend.now())

    commanded = schedule.merged()
    if not any(s.carrier_on for s in commanded):
        assert events == []
        return
    assert [s.carrier_on for s in rebuilt] == [s.carrier_on for s in commanded]
    for got, want in zip(rebuilt, commanded):
        assert got.duration == pytest.approx(want.duration, rel=0.1)
    for start, end in _off_intervals(schedule):
        assert not [e for e in events if start + 1e-9 < e.timestamp < end - 1e-9]


def test_reads_alternate_and_stride():
    backend = MockBackend(capacity_sectors=100000, latency_s=0.25)
    span = SeekSpan(0, 99999, sector_stride=10000)
    execute_schedule(SymbolSchedule((Segment(True, 1.0),)), span, backend)
    assert backend.sectors_read == [0, 99999, 10000, 9999]


def test_off_segments_only_sleep():
    backend = MockBackend()
    events = execute_schedule(
        SymbolSchedule((Segment(False, 1.5),)), SeekSpan.full(1000), backend
    )
    assert events == []
    assert backend.now() == pytest.approx(1.5)


def test_modulated_frame_on_the_mock():
    timing = SymbolTiming(0.3, 0.3)
    schedule = modulate(BitString("1010" + "110"), timing)
    backend = MockBackend(latency_s=0.004)
    events = execute_schedule(schedule, SeekSpan.full(backend.capacity_sectors), backend)
    rebuilt = events_to_schedule(events, GAP_S, origin_s=0.0, end_s=backend.now())
    assert len(rebuilt.on_intervals()) == len(schedule.on_intervals()) == 3
    assert all(e.latency_s == pytest.approx(0.004) for e in events)


def test_overrun_is_logged(caplog):
    backend = MockBackend(latency_s=0.2)
    execute_schedule(SymbolSchedule((Segment(True, 0.1),)), SeekSpan.full(1000), backend)
    assert "overran its deadline" in caplog.text


def test_io_failure_keeps_partial_log():
    backend = MockBackend(fail_after=3)
    with pytest.raises(TransmitError) as e:
        execute_schedule(SymbolSchedule((Segment(True, 1.0),)), SeekSpan.full(1000), backend)
    assert len(e.value.events) == 3
    assert "simulated I/O error" in str(e.value)


def test_span_larger_than_device():
    with pytest.raises(TransmitError, match="exceeds device capacity"):
        execute_schedule(
            SymbolSchedule((Segment(True, 0.1),)), SeekSpan(0, 5000), MockBackend(1000)
        )


@pytest.mark.parametrize(
    "args",
    [
        (5, 5),
        (-1, 10),
        (0, 10, 0),
    ],
)
def test_span_validation(args):
    with pytest.raises(TransmitError):
        SeekSpan(*args)


def test_cache_avoidance_privileged():
    report = cache_avoidance_setup(MockBackend())
    assert report.applied == list(CACHE_MEASURES)


def test_cache_avoidance_unprivileged(caplog):
    report = cache_avoidance_setup(MockBackend(privileged=False))
    assert report.measures == {
        "synchronized_io": CacheStatus.APPLIED,
        "page_cache_drop": CacheStatus.DENIED,
        "write_cache_disable": CacheStatus.DENIED,
    }
    assert "cache avoidance incomplete" in caplog.text
    assert str(report).startswith("synchronized_io: applied, page_cache_drop: denied")


def test_cache_avoidance_unavailable():
    report = cache_avoidance_setup(MockBackend(capabilities=()))
    assert set(report.measures.values()) == {CacheStatus.UNAVAILABLE}
    assert report.applied == []


def test_events_to_schedule_splits_on_gaps():
    events = [
        SeekEvent(1.0, 0, 0.01),
        SeekEvent(1.01, 9, 0.01),
        SeekEvent(1.5, 0, 0.01),
    ]
    rebuilt = events_to_schedule(events, 0.1, origin_s=0.0, end_s=2.0)
    assert [s.carrier_on for s in rebuilt] == [False, True, False, True, False]
    assert [round(s.duration, 6) for s in rebuilt] == [1.0, 0.02, 0.48, 0.01, 0.49]


def test_events_to_schedule_of_nothing():
    assert len(events_to_schedule([], 0.1)) == 0


def test_events_csv(tmp_path):
    events = [SeekEvent(0.0, 0, 0.005), SeekEvent(0.005, 2047, 0.0051234567)]
    path = write_events_csv(tmp_path / "events.csv", events)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "timestamp_s,sector,latency_s"
    assert lines[2] == "0.005000,2047,0.005123"
    assert [e.target_sector for e in read_events_csv(path)] == [0, 2047]


@pytest.fixture
def disk_image(tmp_path):
    path = tmp_path / "disk.img"
    with path.open("wb") as f:
        f.truncate(1 << 20)
    return path


def test_device_backend_on_a_file(disk_image):
    with DeviceBackend(disk_image) as backend:
        assert backend.capacity_sectors == 2048
        assert backend.disable_write_cache() is CacheStatus.UNAVAILABLE
        backend.read_sector(2047)
        schedule = SymbolSchedule((Segment(True, 0.05), Segment(False, 0.05)))
        events = execute_schedule(schedule, SeekSpan.full(2048, sector_stride=7), backend)
    assert events
    assert {e.target_sector for e in events[:2]} == {0, 2047}


def test_device_backend_missing_device(tmp_path):
    with pytest.raises(FileNotFoundError):
        DeviceBackend(tmp_path / "nope")


def test_device_backend_too_small(tmp_path):
    tiny = tmp_path / "tiny.img"
    tiny.write_bytes(os.urandom(600))
    with pytest.raises(TransmitError, match="too small"):
        DeviceBackend(tiny)


@pytest.mark.parametrize("gap_s", [0.0, -0.1])
def test_gap_threshold_must_be_positive(gap_s):
    events = [SeekEvent(0.0, 0, 0.005), SeekEvent(0.005, 9, 0.005)]
    with pytest.raises(TransmitError, match="gap threshold must be positive"):
        events_to_schedule(events, gap_s)
