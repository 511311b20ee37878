"""
Monte Carlo evaluation of the whole link.

A trial is one payload pushed through frame -> modulate -> render -> channel -> receive and
compared bit for bit. Trials are grouped into sweep points (a distance, or a carrier-band SNR
target) and summarized as BER with a standard error. Reports are written as CSV + JSON with
fixed formatting, so a seeded experiment always produces byte-identical files.
"""

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .acoustics import HddProfile, Waveform, render_schedule
from .channel import ChannelConfig, propagate
from .dsp import DEFAULT_BIN_WIDTH_HZ, FrequencyBand, snr_in_band, stft
from .errors import ExperimentError, ModemError
from .framing import BitString, Frame, FrameConfig, frame_encode, frame_serialize
from .modulation import Segment, SymbolSchedule, SymbolTiming, modulate, raw_bit_rate
from .receiver import DemodResult, ReceiverConfig, receive

log = logging.getLogger(__name__)

PAYLOAD_SEED_OFFSET = 21
CALIBRATION_RANGE_DB = (-120.0, -10.0)
SNR_TOLERANCE_DB = 1.0
MIN_SWEEP_POINTS = 3
RECOMMENDED_SWEEP_SEEDS = 30
CALIBRATION_PROBE = SymbolSchedule(
    (Segment(False, 1.0), Segment(True, 1.0), Segment(False, 1.0))
)
SPECTROGRAM_MARKERS_HZ = (2050.0, 2100.0)


@dataclass(frozen=True)
class PayloadSource:
    """Literal bits, random bits drawn per trial seed, or the bytes of a file"""

    kind: str = "random"
    bits: BitString = BitString()
    n_bits: int = 36
    path: Path | None = None

    def __post_init__(self):
        match self.kind:
            case "literal":
                if not self.bits:
                    raise ExperimentError("a literal payload needs at least one bit")
            case "random":
                if self.n_bits < 1:
                    raise ExperimentError(f"random payloads need n_bits >= 1, got {self.n_bits}")
            case "file":
                if self.path is None or not Path(self.path).is_file():
                    raise ExperimentError(f"payload file doesn't exist: {self.path}")
            case _:
                raise ExperimentError(f"unknown payload source {self.kind!r}")

    @classmethod
    def literal(cls, bits: BitString | str) -> "PayloadSource":
        return cls(kind="literal", bits=BitString(bits))

    @classmethod
    def random(cls, n_bits: int) -> "PayloadSource":
        return cls(kind="random", n_bits=n_bits)

    @classmethod
    def file(cls, path: str | Path) -> "PayloadSource":
        return cls(kind="file", path=Path(path))

    @classmethod
    def parse(cls, text: str) -> "PayloadSource":
        """'random:36', 'file:secret.txt' or a literal '0'/'1' string"""
        kind, _, value = text.strip().partition(":")
        match kind:
            case "random":
                return cls.random(int(value) if value else 36)
            case "file":
                return cls.file(value)
            case _:
                return cls.literal(text)

    def payload(self, seed: int) -> BitString:
        match self.kind:
            case "literal":
                return self.bits
            case "random":
                rng = np.random.default_rng(seed + PAYLOAD_SEED_OFFSET)
                return BitString.random(self.n_bits, rng)
            case "file":
                return BitString.from_bytes(Path(self.path).read_bytes())

    def __str__(self):
        match self.kind:
            case "literal":
                return str(self.bits)
            case "random":
                return f"random:{self.n_bits}"
            case "file":
                return f"file:{self.path}"


@dataclass(frozen=True)
class ExperimentSpec:
    payload: PayloadSource = PayloadSource()
    timing: SymbolTiming = SymbolTiming()
    profile: HddProfile = HddProfile()
    channel: ChannelConfig = ChannelConfig()
    receiver: ReceiverConfig = ReceiverConfig()
    frame: FrameConfig = FrameConfig()
    distances: tuple[float, ...] = (0.5, 1.0, 2.0)
    snr_targets: tuple[float, ...] = ()
    seeds: tuple[int, ...] = tuple(range(100))
    sample_rate_hz: int = 16000
    lead_in_s: float = 1.0
    tail_s: float = 1.0
    workers: int = 1
    output_dir: Path | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ExperimentError("an experiment needs explicit seeds")
        if not self.distances and not self.snr_targets:
            raise ExperimentError("an experiment needs at least one sweep point")
        if self.workers < 1:
            raise ExperimentError(f"workers must be >= 1, got {self.workers}")
        if self.lead_in_s <= 0:
            raise ExperimentError("a lead-in is needed as the noise reference")

    def receiver_config(self) -> ReceiverConfig:
        return replace(self.receiver, payload_len=self.frame.payload_len)


@dataclass(frozen=True)
class TrialTask:
    payload: BitString
    timing: SymbolTiming
    profile: HddProfile
    channel: ChannelConfig
    receiver: ReceiverConfig
    frame: FrameConfig
    sample_rate_hz: int
    lead_in_s: float
    tail_s: float
    seed: int
    snr_target_db: float | None = None


@dataclass(frozen=True)
class TrialResult:
    distance_m: float
    snr_target_db: float | None
    ambient_db: float
    seed: int
    payload_bits: int
    bit_errors: int
    frames_sent: int
    frames_lost: int
    measured_snr_db: float | None
    error: str = ""

    @property
    def ber(self) -> float:
        return self.bit_errors / self.payload_bits if self.payload_bits else 0.0


@dataclass(frozen=True)
class BerPoint:
    distance_m: float
    snr_target_db: float | None
    ambient_db: float | None
    measured_snr_db: float | None
    trials: int
    bits: int
    bit_errors: int
    frames_lost: int
    attainable: bool = True

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else 0.0

    @property
    def std_error(self) -> float:
        if not self.bits:
            return 0.0
        return math.sqrt(self.ber * (1 - self.ber) / self.bits)

    @classmethod
    def from_trials(cls, trials: Sequence[TrialResult]) -> "BerPoint":
        first = trials[0]
        measured = [t.measured_snr_db for t in trials if t.measured_snr_db is not None]
        return cls(
            distance_m=first.distance_m,
            snr_target_db=first.snr_target_db,
            ambient_db=first.ambient_db,
            measured_snr_db=float(np.mean(measured)) if measured else None,
            trials=len(trials),
            bits=sum(t.payload_bits for t in trials),
            bit_errors=sum(t.bit_errors for t in trials),
            frames_lost=sum(t.frames_lost for t in trials),
        )

    @classmethod
    def unattainable(cls, distance_m: float, snr_target_db: float) -> "BerPoint":
        return cls(distance_m, snr_target_db, None, None, 0, 0, 0, 0, attainable=False)


@dataclass
class BerReport:
    axis: str
    points: list[BerPoint] = field(default_factory=list)
    trials: list[TrialResult] = field(default_factory=list)
    monotone: bool | None = None

    @property
    def bits(self) -> int:
        return sum(p.bits for p in self.points)

    @property
    def bit_errors(self) -> int:
        return sum(p.bit_errors for p in self.points)

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else 0.0

    def summary(self) -> dict:
        return {
            "axis": self.axis,
            "ber": _fmt(self.ber),
            "bit_errors": self.bit_errors,
            "bits": self.bits,
            "monotone": self.monotone,
            "points": [_point_row(p) for p in self.points],
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def _fmt(value: float | None, digits: int = 6) -> str:
    return "" if value is None else f"{value:.{digits}f}"


POINT_COLUMNS = [
    "distance_m",
    "snr_target_db",
    "ambient_db",
    "measured_snr_db",
    "trials",
    "bits",
    "bit_errors",
    "ber",
    "std_error",
    "frames_lost",
    "attainable",
]
TRIAL_COLUMNS = [
    "distance_m",
    "snr_target_db",
    "ambient_db",
    "seed",
    "payload_bits",
    "bit_errors",
    "frames_sent",
    "frames_lost",
    "measured_snr_db",
    "error",
]


def _point_row(point: BerPoint) -> dict:
    return {
        "distance_m": _fmt(point.distance_m, 3),
        "snr_target_db": _fmt(point.snr_target_db, 2),
        "ambient_db": _fmt(point.ambient_db, 3),
        "measured_snr_db": _fmt(point.measured_snr_db, 3),
        "trials": point.trials,
        "bits": point.bits,
        "bit_errors": point.bit_errors,
        "ber": _fmt(point.ber),
        "std_error": _fmt(point.std_error),
        "frames_lost": point.frames_lost,
        "attainable": point.attainable,
    }


def _trial_row(trial: TrialResult) -> dict:
    row = asdict(trial)
    row.update(
        distance_m=_fmt(trial.distance_m, 3),
        snr_target_db=_fmt(trial.snr_target_db, 2),
        ambient_db=_fmt(trial.ambient_db, 3),
        measured_snr_db=_fmt(trial.measured_snr_db, 3),
    )
    return row


def write_report(report: BerReport, out_dir: str | Path) -> tuple[Path, Path, Path]:
    """<axis>_points.csv, <axis>_trials.csv and <axis>_summary.json in out_dir"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    points_path = out_dir / f"{report.axis}_points.csv"
    trials_path = out_dir / f"{report.axis}_trials.csv"
    summary_path = out_dir / f"{report.axis}_summary.json"
    for path, columns, rows in (
        (points_path, POINT_COLUMNS, [_point_row(p) for p in report.points]),
        (trials_path, TRIAL_COLUMNS, [_trial_row(t) for t in report.trials]),
    ):
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    summary_path.write_text(report.to_json(), encoding="utf-8")
    log.info("report written to %s", out_dir)
    return points_path, trials_path, summary_path


def carrier_band(profile: HddProfile, bin_width_hz: float = DEFAULT_BIN_WIDTH_HZ) -> FrequencyBand:
    """The spectral bin holding the seek carrier"""
    return FrequencyBand.of_bin(math.floor(profile.seek_carrier_hz / bin_width_hz), bin_width_hz)


def measure_snr(
    received: Waveform,
    noise_span: tuple[float, float],
    signal_spans: Sequence[tuple[float, float]],
    band: FrequencyBand,
) -> float:
    """Carrier-band SNR of the carrier-on spans against a stretch of idle audio"""
    spec = stft(received)
    noise = spec.slice_time(*noise_span)
    on = [spec.slice_time(*span) for span in signal_spans]
    signal = replace(on[0], frames=np.vstack([s.frames for s in on]))
    return snr_in_band(signal, noise, band)


def _preamble_spans(timing: SymbolTiming, lead_in_s: float) -> list[tuple[float, float]]:
    first = (lead_in_s, lead_in_s + timing.t1)
    second_start = first[1] + timing.t0
    return [first, (second_start, second_start + timing.t1)]


def _payload_starts(frames: Sequence[Frame], timing: SymbolTiming, lead_in_s: float) -> list[float]:
    starts = []
    t = lead_in_s
    for frame in frames:
        t += sum(timing.duration(b) for b in frame.preamble)
        starts.append(t)
        t += sum(timing.duration(b) for b in frame.payload)
    return starts


def _score(
    payload: BitString,
    frames: Sequence[Frame],
    starts: Sequence[float],
    result: DemodResult,
    tolerance_s: float,
) -> tuple[int, int]:
    """(bit errors, frames lost). Decoded frames are matched to sent frames by start time."""
    errors = lost = 0
    remaining = len(payload)
    for frame, start in zip(frames, starts):
        sent = frame.payload[:remaining]
        remaining -= len(sent)
        match = [d for d in result.frames if abs(d.start_s - start) <= tolerance_s]
        if not match:
            errors += len(sent)
            lost += 1
            continue
        decoded = match[0].payload[: len(sent)]
        errors += sum(a != b for a, b in zip(sent, decoded))
    return errors, lost


def run_trial(task: TrialTask) -> TrialResult:
    """One end-to-end transmission. Stage failures count every frame as lost."""
    payload = task.payload
    frames: list[Frame] = []
    common = dict(
        distance_m=task.channel.distance_m,
        snr_target_db=task.snr_target_db,
        ambient_db=task.channel.ambient_noise_level_db,
        seed=task.seed,
        payload_bits=len(payload),
    )
    try:
        frames = frame_encode(payload, task.frame)
        schedule = modulate(frame_serialize(frames), task.timing)
        schedule = schedule.padded(task.lead_in_s, task.tail_s)
        emitted = render_schedule(schedule, task.profile, task.sample_rate_hz, seed=task.seed)
        received = propagate(emitted, replace(task.channel, seed=task.seed), task.sample_rate_hz)
        snr = measure_snr(
            received,
            (0.0, task.lead_in_s),
            _preamble_spans(task.timing, task.lead_in_s),
            carrier_band(task.profile),
        )
        result = receive(received, task.receiver)
    except ModemError as e:
        log.warning("trial with seed %d failed: %s", task.seed, e)
        return TrialResult(
            **common,
            bit_errors=len(payload),
            frames_sent=len(frames),
            frames_lost=len(frames),
            measured_snr_db=None,
            error=str(e),
        )
    starts = _payload_starts(frames, task.timing, task.lead_in_s)
    tolerance = 0.5 * min(task.timing.t0, task.timing.t1)
    errors, lost = _score(payload, frames, starts, result, tolerance)
    return TrialResult(
        **common,
        bit_errors=errors,
        frames_sent=len(frames),
        frames_lost=lost,
        measured_snr_db=snr,
    )


def _run_tasks(tasks: Sequence[TrialTask], workers: int) -> list[TrialResult]:
    """Results come back in task order whatever the number of workers"""
    if workers == 1:
        return [run_trial(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_trial, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _tasks(spec: ExperimentSpec, channel: ChannelConfig, snr_target_db=None) -> list[TrialTask]:
    return [
        TrialTask(
            payload=spec.payload.payload(seed),
            timing=spec.timing,
            profile=spec.profile,
            channel=channel,
            receiver=spec.receiver_config(),
            frame=spec.frame,
            sample_rate_hz=spec.sample_rate_hz,
            lead_in_s=spec.lead_in_s,
            tail_s=spec.tail_s,
            seed=seed,
            snr_target_db=snr_target_db,
        )
        for seed in spec.seeds
    ]


def _chunks(results: list[TrialResult], size: int) -> list[list[TrialResult]]:
    return [results[i : i + size] for i in range(0, len(results), size)]


def run_loopback(spec: ExperimentSpec) -> BerReport:
    """BER at every distance of the spec, one trial per seed"""
    tasks = []
    for distance in spec.distances:
        tasks += _tasks(spec, replace(spec.channel, distance_m=distance))
    results = _run_tasks(tasks, spec.workers)
    report = BerReport(
        axis="distance",
        points=[BerPoint.from_trials(chunk) for chunk in _chunks(results, len(spec.seeds))],
        trials=results,
    )
    for point in report.points:
        log.info(
            "%.2f m: BER %.4f over %d bits (%d frames lost)",
            point.distance_m,
            point.ber,
            point.bits,
            point.frames_lost,
        )
    if spec.output_dir is not None:
        write_report(report, spec.output_dir)
    return report


def calibrate_ambient(spec: ExperimentSpec, snr_target_db: float) -> float | None:
    """
    Ambient level giving the target carrier-band SNR on a fixed probe transmission, found by
    bisection. None when no level in range comes within tolerance of the target.
    """
    seed = spec.seeds[0]
    rate = spec.sample_rate_hz
    emitted = render_schedule(CALIBRATION_PROBE, spec.profile, rate, seed=seed)
    channel = replace(spec.channel, burst_rate_hz=0.0, seed=seed)
    band = carrier_band(spec.profile)

    def snr_at(level_db: float) -> float:
        received = propagate(emitted, replace(channel, ambient_noise_level_db=level_db), rate)
        return measure_snr(received, (0.0, 1.0), [(1.0, 2.0)], band)

    low, high = CALIBRATION_RANGE_DB
    if snr_at(high) > snr_target_db + SNR_TOLERANCE_DB:
        return None
    if snr_at(low) < snr_target_db - SNR_TOLERANCE_DB:
        return None
    while high - low > 0.01:
        middle = (low + high) / 2
        if snr_at(middle) > snr_target_db:
            low = middle
        else:
            high = middle
    level = (low + high) / 2
    if abs(snr_at(level) - snr_target_db) > SNR_TOLERANCE_DB:
        return None
    return level


def is_monotone(points: Sequence[BerPoint]) -> bool:
    """BER non-increasing with SNR target, allowing one standard error either side"""
    ordered = sorted((p for p in points if p.attainable), key=lambda p: p.snr_target_db)
    return all(
        higher.ber <= lower.ber + lower.std_error + higher.std_error + 1e-12
        for lower, higher in zip(ordered, ordered[1:])
    )


def sweep_snr(spec: ExperimentSpec) -> BerReport:
    """BER against carrier-band SNR at the channel's distance"""
    if len(spec.snr_targets) < MIN_SWEEP_POINTS:
        raise ExperimentError(
            f"an SNR sweep needs at least {MIN_SWEEP_POINTS} points, got {len(spec.snr_targets)}"
        )
    if len(spec.seeds) < RECOMMENDED_SWEEP_SEEDS:
        log.warning("only %d seeds per SNR point", len(spec.seeds))
    tasks, levels = [], {}
    for target in spec.snr_targets:
        level = calibrate_ambient(spec, target)
        levels[target] = level
        if level is None:
            log.warning("SNR target %.1f dB is unattainable", target)
            continue
        log.info("SNR target %.1f dB: ambient %.2f dBFS", target, level)
        tasks += _tasks(spec, replace(spec.channel, ambient_noise_level_db=level), target)
    results = _run_tasks(tasks, spec.workers)
    chunks = iter(_chunks(results, len(spec.seeds)))
    points = [
        BerPoint.from_trials(next(chunks))
        if levels[target] is not None
        else BerPoint.unattainable(spec.channel.distance_m, target)
        for target in spec.snr_targets
    ]
    report = BerReport(axis="snr", points=points, trials=results, monotone=is_monotone(points))
    if not report.monotone:
        log.warning("BER is not monotone in SNR")
    if spec.output_dir is not None:
        write_report(report, spec.output_dir)
    return report


def run_experiment(spec: ExperimentSpec) -> BerReport:
    return sweep_snr(spec) if spec.snr_targets else run_loopback(spec)


@dataclass(frozen=True)
class ThroughputRow:
    t0_s: float
    t1_s: float
    symbol_s: float
    raw_bps: float
    effective_bps: float
    nominal_bps: int
    note: str = ""

    @property
    def raw_bits_per_minute(self) -> float:
        return self.raw_bps * 60

    @property
    def raw_bits_per_hour(self) -> float:
        return self.raw_bps * 3600

    @property
    def nominal_bits_per_minute(self) -> int:
        return self.nominal_bps * 60

    @property
    def nominal_bits_per_hour(self) -> int:
        return self.nominal_bps * 3600


def throughput_table(
    timings: Sequence[SymbolTiming],
    frame: FrameConfig = FrameConfig(),
) -> list[ThroughputRow]:
    """
    Raw rate 1/T, effective payload rate raw * L / (L + preamble), and the whole-bit nominal
    figure (3 bit/s at T = 0.3 s, i.e. 180 bit/min).
    """
    if not timings:
        raise ExperimentError("no timings given")
    rows = []
    for timing in timings:
        if timing.symmetric:
            raw, note = raw_bit_rate(timing), ""
        else:
            raw = 2 / (timing.t0 + timing.t1)
            note = "asymmetric timing: mean symbol time used"
        rows.append(
            ThroughputRow(
                t0_s=timing.t0,
                t1_s=timing.t1,
                symbol_s=1 / raw,
                raw_bps=raw,
                effective_bps=raw * frame.payload_len / frame.frame_len,
                nominal_bps=math.floor(raw + 1e-9),
                note=note,
            )
        )
    return rows


def format_throughput(rows: Sequence[ThroughputRow]) -> str:
    header = (
        f"{'T (s)':>8} {'raw bit/s':>10} {'eff. bit/s':>10} {'raw bit/min':>12} "
        f"{'raw bit/h':>12} {'nominal bit/min':>16} {'nominal bit/h':>14}  note"
    )
    lines = [header]
    for row in rows:
        lines.append(
            f"{row.symbol_s:>8.3f} {row.raw_bps:>10.3f} {row.effective_bps:>10.3f} "
            f"{row.raw_bits_per_minute:>12,.1f} {row.raw_bits_per_hour:>12,.0f} "
            f"{row.nominal_bits_per_minute:>16,} {row.nominal_bits_per_hour:>14,}  {row.note}"
        )
    return "\n".join(lines)


def spectrogram_export(
    w: Waveform,
    path: str | Path,
    markers_hz: Sequence[float] = SPECTROGRAM_MARKERS_HZ,
) -> Path:
    if not len(w):
        raise ExperimentError("empty waveform")
    return stft(w).to_csv(path, markers_hz=markers_hz)
