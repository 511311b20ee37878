"""
Decoding state machine: scan for the carrier, find a 1010 preamble, estimate the symbol timing
and levels from it, then read payload bits by comparing the envelope against the estimated
threshold. After every frame the search for the next preamble starts where the frame ended.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.ndimage import uniform_filter1d

from .acoustics import Waveform
from .channel import resample
from .dsp import (
    DEFAULT_BAND,
    DEFAULT_BIN_WIDTH_HZ,
    FrequencyBand,
    IntensityEnvelope,
    SpectralSeries,
    bandpass,
    envelope,
    power_to_db,
    stft,
)
from .errors import (
    DspError,
    InsufficientContrast,
    NoCarrierFound,
    PreambleNotFound,
    ReceiverError,
)
from .framing import BitString

log = logging.getLogger(__name__)

WORKING_RATE_HZ = 16000
MIN_INPUT_RATE_HZ = 4200
# plateaus of the two preamble '1's may differ by this fraction
PLATEAU_TOLERANCE = 0.2
DECISION_WINDOW = (0.2, 0.8)
RESYNC_TOLERANCE = 0.25
MAX_AMBIGUOUS_SYMBOLS = 2


@dataclass(frozen=True)
class ReceiverConfig:
    scan_band: FrequencyBand = FrequencyBand(1500.0, 6000.0)
    default_band: FrequencyBand = DEFAULT_BAND
    force_default_band: bool = False
    payload_len: int = 36
    min_symbol_s: float = 0.1
    max_symbol_s: float = 5.0
    threshold_margin_db: float = 3.0
    smoothing_window_s: float = 0.06
    envelope_hop_s: float = 0.005
    scan_min_contrast_db: float = 8.0
    scan_quantiles: tuple[float, float] = (0.10, 0.97)

    def __post_init__(self):
        if self.payload_len < 1:
            raise ReceiverError(f"payload_len must be >= 1, got {self.payload_len}")
        if not 0 < self.min_symbol_s < self.max_symbol_s:
            raise ReceiverError("symbol bounds must satisfy 0 < min_symbol_s < max_symbol_s")
        if self.threshold_margin_db <= 0:
            raise ReceiverError("threshold margin must be positive")
        if self.smoothing_window_s <= 0 or self.envelope_hop_s <= 0:
            raise ReceiverError("envelope smoothing and hop must be positive")
        low, high = self.scan_quantiles
        if not 0 <= low < high <= 1:
            raise ReceiverError(f"invalid scan quantiles {self.scan_quantiles}")

    def symbol_in_bounds(self, duration_s: float) -> bool:
        return self.min_symbol_s <= duration_s <= self.max_symbol_s


@dataclass(frozen=True)
class ChannelEstimate:
    carrier_bin: int
    carrier_hz: float
    t0_s: float
    t1_s: float
    on_level_db: float
    off_level_db: float
    threshold_db: float
    payload_start_s: float = 0.0

    def __post_init__(self):
        if not self.on_level_db > self.threshold_db > self.off_level_db:
            raise ReceiverError(
                f"levels out of order: on {self.on_level_db:.1f} dB, "
                f"threshold {self.threshold_db:.1f} dB, off {self.off_level_db:.1f} dB"
            )

    @property
    def contrast_db(self) -> float:
        return self.on_level_db - self.off_level_db

    @property
    def shortest_symbol_s(self) -> float:
        return min(self.t0_s, self.t1_s)

    @property
    def edge_level_db(self) -> float:
        """Where the linear power is halfway between the levels; transitions cross it mid-ramp"""
        return _linear_midpoint(self.on_level_db, self.off_level_db)


@dataclass(frozen=True)
class DecodedFrame:
    payload: BitString
    confidence: tuple[float, ...]
    start_s: float
    end_s: float
    estimate: ChannelEstimate


@dataclass
class Diagnostics:
    preambles_detected: int = 0
    rejected_candidates: int = 0
    lost_signal: int = 0
    notes: list[str] = field(default_factory=list)


@dataclass
class DemodResult:
    frames: list[DecodedFrame] = field(default_factory=list)
    estimate: ChannelEstimate | None = None
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    @property
    def payload(self) -> BitString:
        return BitString.concat(frame.payload for frame in self.frames)


class Run(NamedTuple):
    on: bool
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start


def _linear_midpoint(a_db: float, b_db: float) -> float:
    return float(10 * np.log10((10 ** (a_db / 10) + 10 ** (b_db / 10)) / 2))


def _segment(values: np.ndarray, upper: float, lower: float) -> list[Run]:
    """Hysteresis segmentation into alternating on/off runs"""
    state = bool(values[0] >= (upper + lower) / 2)
    runs = []
    start = 0
    for i, value in enumerate(values):
        if (state and value < lower) or (not state and value > upper):
            runs.append(Run(state, start, i))
            state = not state
            start = i
    runs.append(Run(state, start, len(values)))
    return runs


def _absorb_short_runs(runs: list[Run], min_length: int) -> list[Run]:
    """Merge interior runs shorter than min_length into their neighbours, shortest first"""
    runs = list(runs)
    while len(runs) > 2:
        short = [(r.length, i) for i, r in enumerate(runs[1:-1], 1) if r.length < min_length]
        if not short:
            break
        _, i = min(short)
        before, after = runs[i - 1], runs[i + 1]
        runs[i - 1 : i + 2] = [Run(before.on, before.start, after.end)]
    return runs


def _find_runs(values: np.ndarray, margin_db: float, min_length: int) -> list[Run]:
    """
    Two passes: a rough split around the middle of the dB range, then a split at the linear
    power midpoint of the rough on/off medians so that rising and falling edges are timed alike.
    """
    low, high = np.percentile(values, [5, 99])
    if high - low < margin_db:
        return [Run(False, 0, len(values))]
    middle = (low + high) / 2
    rough = _segment(values, middle + margin_db / 2, middle - margin_db / 2)
    runs = _absorb_short_runs(rough, min_length)
    on = [values[r.start : r.end] for r in runs if r.on]
    off = [values[r.start : r.end] for r in runs if not r.on]
    if not on or not off:
        return runs
    edge = _linear_midpoint(np.median(np.concatenate(on)), np.median(np.concatenate(off)))
    fine = _segment(values, edge + margin_db / 2, edge - margin_db / 2)
    return _absorb_short_runs(fine, min_length)


def _central(values: np.ndarray, start: int, length: int) -> np.ndarray:
    trim = int(DECISION_WINDOW[0] * length)
    central = values[start + trim : start + length - trim]
    return central if len(central) else values[start : start + max(1, length)]


def scan_carrier(spec: SpectralSeries, cfg: ReceiverConfig = ReceiverConfig()) -> list[int]:
    """
    Bins of the scan band ranked by how bimodal their power is over time: the spread between an
    upper and a lower quantile of the smoothed per-bin power, in dB.
    """
    duration = spec.n_frames * spec.hop_s
    if duration < 8 * cfg.min_symbol_s:
        raise ReceiverError(f"{duration:.2f}s of spectra is too short to scan for a carrier")
    size = max(1, round(cfg.min_symbol_s / spec.hop_s))
    smoothed = power_to_db(uniform_filter1d(spec.frames**2, size, axis=0, mode="nearest"))
    low, high = np.quantile(smoothed, cfg.scan_quantiles, axis=0)
    contrast = high - low
    candidates = [
        k
        for k in cfg.scan_band.bin_indices(spec.bin_width_hz)
        if k < spec.n_bins and contrast[k] >= cfg.scan_min_contrast_db
    ]
    if not candidates:
        raise NoCarrierFound(f"no carrier found in {cfg.scan_band}")
    ranked = sorted(candidates, key=lambda k: (-contrast[k], k))
    log.debug(
        "carrier candidates: %s",
        ", ".join(f"{k * spec.bin_width_hz:g} Hz ({contrast[k]:.1f} dB)" for k in ranked[:5]),
    )
    return ranked


def detect_preamble(
    env: IntensityEnvelope,
    cfg: ReceiverConfig = ReceiverConfig(),
    band: FrequencyBand | None = None,
    start_s: float = 0.0,
) -> ChannelEstimate:
    """
    Earliest on/off/on/off pattern at or after start_s whose on-runs agree within 20% (t1) and
    whose first gap gives t0. The returned estimate carries the start of the payload.
    """
    band = band or cfg.default_band
    hop = env.hop_s
    first = min(len(env), max(0, env.index_at(start_s)))
    values = env.values[first:]
    if len(values) < 4:
        raise PreambleNotFound(f"preamble not found: envelope ends before {start_s:.2f}s")
    min_length = max(1, round(0.5 * cfg.min_symbol_s / hop))
    runs = _find_runs(values, cfg.threshold_margin_db, min_length)

    def edge_time(index: int) -> float:
        return env.start_s + (first + index - 0.5) * hop

    for j in range(len(runs) - 3):
        on1, off1, on2, off2 = runs[j : j + 4]
        if not on1.on:
            continue
        if abs(on1.length - on2.length) > PLATEAU_TOLERANCE * max(on1.length, on2.length):
            continue
        t1 = (on1.length + on2.length) / 2 * hop
        t0 = off1.length * hop
        if not (cfg.symbol_in_bounds(t1) and cfg.symbol_in_bounds(t0)):
            continue
        if off2.length * hop < (1 - PLATEAU_TOLERANCE) * t0:
            continue

        plateaus = [_central(values, run.start, run.length) for run in (on1, on2)]
        on_level = float(np.mean(np.concatenate(plateaus)))
        gap = round(t0 / hop)
        off_level = float(
            np.mean(
                np.concatenate(
                    [
                        _central(values, off1.start, off1.length),
                        _central(values, off2.start, min(off2.length, gap)),
                    ]
                )
            )
        )
        preamble_end = edge_time(on2.end)
        if on_level - off_level < cfg.threshold_margin_db:
            raise InsufficientContrast(
                f"insufficient contrast: {on_level - off_level:.1f} dB "
                f"at {edge_time(on1.start):.2f}s",
                resume_s=preamble_end,
            )
        estimate = ChannelEstimate(
            carrier_bin=int(band.low_hz // DEFAULT_BIN_WIDTH_HZ),
            carrier_hz=band.centre_hz,
            t0_s=t0,
            t1_s=t1,
            on_level_db=on_level,
            off_level_db=off_level,
            threshold_db=(on_level + off_level) / 2,
            payload_start_s=preamble_end + t0,
        )
        log.debug(
            "preamble at %.2fs: t0=%.3fs t1=%.3fs contrast %.1f dB",
            edge_time(on1.start),
            t0,
            t1,
            estimate.contrast_db,
        )
        return estimate
    raise PreambleNotFound(f"preamble not found after {start_s:.2f}s")


def _payload_edges(
    env: IntensityEnvelope,
    est: ChannelEstimate,
    cfg: ReceiverConfig,
    start_s: float,
) -> np.ndarray:
    """Times of on/off transitions over the stretch a payload can occupy"""
    hop = env.hop_s
    first = max(0, env.index_at(start_s - est.shortest_symbol_s))
    span = cfg.payload_len * max(est.t0_s, est.t1_s) + 2 * est.shortest_symbol_s
    last = min(len(env), env.index_at(start_s + span) + 1)
    values = env.values[first:last]
    if len(values) < 2:
        return np.array([])
    margin = cfg.threshold_margin_db
    runs = _segment(values, est.edge_level_db + margin / 2, est.edge_level_db - margin / 2)
    runs = _absorb_short_runs(runs, max(1, round(0.5 * cfg.min_symbol_s / hop)))
    return np.array([env.start_s + (first + r.start - 0.5) * hop for r in runs[1:]])


def _demodulate_frame(
    env: IntensityEnvelope,
    est: ChannelEstimate,
    cfg: ReceiverConfig,
    start_s: float,
) -> tuple[DecodedFrame | None, float]:
    """One payload starting at start_s. Returns the frame, or None if the signal was lost, and
    the time to resume searching from."""
    shortest = est.shortest_symbol_s
    edges = _payload_edges(env, est, cfg, start_s)
    bits, confidence = [], []
    ambiguous = 0
    t = start_s
    for i in range(cfg.payload_len):
        if edges.size:
            nearest = edges[np.argmin(np.abs(edges - t))]
            if abs(nearest - t) <= RESYNC_TOLERANCE * shortest:
                t = float(nearest)
        a = env.index_at(t + DECISION_WINDOW[0] * shortest)
        b = env.index_at(t + DECISION_WINDOW[1] * shortest)
        if b > len(env) or a >= b:
            log.debug("envelope ended %d bits into a payload at %.2fs", i, start_s)
            return None, t
        mean = float(env.values[a:b].mean())
        margin = abs(mean - est.threshold_db)
        ambiguous = ambiguous + 1 if margin < cfg.threshold_margin_db / 2 else 0
        if ambiguous > MAX_AMBIGUOUS_SYMBOLS:
            log.debug("signal lost %d bits into a payload at %.2fs", i, start_s)
            return None, t
        bit = int(mean > est.threshold_db)
        bits.append(bit)
        confidence.append(margin)
        t += est.t1_s if bit else est.t0_s
    frame = DecodedFrame(
        payload=BitString(bits),
        confidence=tuple(confidence),
        start_s=start_s,
        end_s=t,
        estimate=est,
    )
    return frame, t


def demodulate(
    env: IntensityEnvelope,
    est: ChannelEstimate,
    cfg: ReceiverConfig = ReceiverConfig(),
    start_s: float | None = None,
) -> DemodResult:
    """Read one payload of cfg.payload_len bits, by default right after the detected preamble"""
    start_s = est.payload_start_s if start_s is None else start_s
    frame, _ = _demodulate_frame(env, est, cfg, start_s)
    result = DemodResult(estimate=est)
    if frame is None:
        result.diagnostics.lost_signal += 1
    else:
        result.frames.append(frame)
    return result


def _carrier_band(w: Waveform, cfg: ReceiverConfig) -> FrequencyBand:
    if cfg.force_default_band:
        return cfg.default_band
    spec = stft(w)
    best = scan_carrier(spec, cfg)[0]
    return FrequencyBand.of_bin(best, spec.bin_width_hz)


def receive(w: Waveform, cfg: ReceiverConfig = ReceiverConfig()) -> DemodResult:
    """Decode every frame in a recording"""
    if w.sample_rate_hz < MIN_INPUT_RATE_HZ:
        raise ReceiverError(
            f"sample rate {w.sample_rate_hz} Hz is below the {MIN_INPUT_RATE_HZ} Hz minimum"
        )
    if w.sample_rate_hz != WORKING_RATE_HZ:
        w = resample(w, WORKING_RATE_HZ)
    cfg.scan_band.check_nyquist(w.sample_rate_hz)
    result = DemodResult()
    diagnostics = result.diagnostics

    try:
        band = _carrier_band(w, cfg)
        log.debug("listening on %s", band)
        env = envelope(bandpass(w, band), cfg.smoothing_window_s, cfg.envelope_hop_s)
    except (ReceiverError, DspError) as e:
        log.info("nothing to decode: %s", e)
        diagnostics.notes.append(str(e))
        return result

    t = 0.0
    while t < env.duration:
        try:
            est = detect_preamble(env, cfg, band=band, start_s=t)
        except InsufficientContrast as e:
            diagnostics.rejected_candidates += 1
            diagnostics.notes.append(str(e))
            t = max(e.resume_s, t + env.hop_s)
            continue
        except PreambleNotFound as e:
            if not diagnostics.preambles_detected:
                diagnostics.notes.append(str(e))
            break
        diagnostics.preambles_detected += 1
        if result.estimate is None:
            result.estimate = est
        frame, resume = _demodulate_frame(env, est, cfg, est.payload_start_s)
        if frame is None:
            diagnostics.lost_signal += 1
        else:
            log.debug("frame %d: %s", len(result.frames), frame.payload)
            result.frames.append(frame)
        t = max(resume, t + env.hop_s)
    return result


def bit_errors(sent: BitString, received: BitString) -> int:
    """Mismatches over the length of `sent`; missing bits count as errors"""
    received = received[: len(sent)]
    mismatches = sum(a != b for a, b in zip(sent, received))
    return mismatches + len(sent) - len(received)


def report_json(result: DemodResult, reference: BitString | None = None) -> str:
    est = result.estimate
    report = {
        "carrier_hz": est.carrier_hz if est else None,
        "t0_s": round(est.t0_s, 4) if est else None,
        "t1_s": round(est.t1_s, 4) if est else None,
        "threshold_db": round(est.threshold_db, 2) if est else None,
        "frames": [
            {
                "start_s": round(frame.start_s, 4),
                "payload": str(frame.payload),
                "confidence_db": [round(c, 2) for c in frame.confidence],
            }
            for frame in result.frames
        ],
        "diagnostics": asdict(result.diagnostics),
    }
    if reference is not None:
        errors = bit_errors(reference, result.payload)
        report["bit_errors"] = errors
        report["ber"] = errors / len(reference) if reference else 0.0
    return json.dumps(report, indent=2, sort_keys=True)
