"""
The air path between the drive and a microphone.

    enclose -> attenuate -> add_ambient -> add_casual_bursts -> resample

Every stochastic stage draws from its own generator, derived from `ChannelConfig.seed` by a fixed
offset, so the pipeline is reproducible stage by stage.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal

from .acoustics import RAMP_S, Waveform, noise_rms
from .errors import ChannelError

log = logging.getLogger(__name__)

AMBIENT_SEED_OFFSET = 11
BURST_SEED_OFFSET = 12
MIN_USEFUL_RATE_HZ = 4200
ANTI_ALIAS_CUTOFF = 0.45
ANTI_ALIAS_WIDTH = 0.075
ANTI_ALIAS_ATTENUATION_DB = 60


@dataclass(frozen=True)
class ChannelConfig:
    distance_m: float = 1.0
    reference_distance_m: float = 1.0
    ambient_noise_level_db: float = -50.0
    burst_rate_hz: float = 0.05
    burst_duration_s: float = 0.5
    burst_level_db: float = -30.0
    burst_band_hz: float = 6000.0
    enclosure_loss_db: float = 35.0
    seed: int = 0

    def __post_init__(self):
        if self.distance_m < 0:
            raise ChannelError(f"distance must be >= 0, got {self.distance_m}")
        if self.reference_distance_m <= 0:
            raise ChannelError("reference distance must be positive")
        if self.burst_rate_hz < 0:
            raise ChannelError(f"burst rate must be >= 0, got {self.burst_rate_hz}")
        if self.burst_duration_s <= 0:
            raise ChannelError(f"burst duration must be positive, got {self.burst_duration_s}")
        if self.burst_band_hz <= 0:
            raise ChannelError("burst band must be positive")
        if self.enclosure_loss_db < 0:
            raise ChannelError("enclosure loss must be >= 0 dB")
        if self.seed < 0:
            raise ChannelError(f"seed must be >= 0, got {self.seed}")

    @property
    def gain(self) -> float:
        """Amplitude gain of the inverse-distance law, unity at the reference distance"""
        ref = self.reference_distance_m
        return ref / max(self.distance_m, ref / 10)


# casual disk activity of different workloads
WORKLOADS = {
    "quiet": dict(burst_rate_hz=0.0),
    "office": dict(burst_rate_hz=0.05, burst_duration_s=0.5, burst_level_db=-30.0),
    "video": dict(burst_rate_hz=0.2, burst_duration_s=1.0, burst_level_db=-32.0),
    "compile": dict(burst_rate_hz=0.5, burst_duration_s=0.3, burst_level_db=-28.0),
}


def with_workload(cfg: ChannelConfig, workload: str) -> ChannelConfig:
    try:
        return dataclasses.replace(cfg, **WORKLOADS[workload])
    except KeyError:
        raise ChannelError(f"unknown workload {workload!r}; choose from {sorted(WORKLOADS)}")


def enclose(w: Waveform, cfg: ChannelConfig) -> Waveform:
    """Insertion loss of the chassis between the platters and the reference distance"""
    if cfg.enclosure_loss_db == 0:
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    return w.scaled(10 ** (-cfg.enclosure_loss_db / 20))


def attenuate(w: Waveform, cfg: ChannelConfig) -> Waveform:
    return w.scaled(cfg.gain)


def add_ambient(w: Waveform, cfg: ChannelConfig) -> Waveform:
    if not math.isfinite(cfg.ambient_noise_level_db):
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    rng = np.random.default_rng(cfg.seed + AMBIENT_SEED_OFFSET)
    noise = rng.normal(0, noise_rms(cfg.ambient_noise_level_db), len(w))
    return Waveform(w.samples + noise, w.sample_rate_hz)


def burst_times(cfg: ChannelConfig, duration_s: float) -> list[tuple[float, float]]:
    """(start, duration) of casual-activity bursts: Poisson arrivals, exponential lengths"""
    if cfg.burst_rate_hz == 0:
        return []
    rng = np.random.default_rng(cfg.seed + BURST_SEED_OFFSET)
    bursts = []
    t = rng.exponential(1 / cfg.burst_rate_hz)
    while t < duration_s:
        length = rng.exponential(cfg.burst_duration_s)
        bursts.append((t, min(length, duration_s - t)))
        t += rng.exponential(1 / cfg.burst_rate_hz)
    return bursts


def _burst(
    n: int,
    sample_rate_hz: int,
    level_db: float,
    band_hz: float,
    rng: np.random.Generator,
) -> np.ndarray:
    noise = rng.standard_normal(n)
    if band_hz < sample_rate_hz / 2:
        sos = signal.butter(8, band_hz, btype="lowpass", fs=sample_rate_hz, output="sos")
        noise = signal.sosfilt(sos, noise)
    rms = np.sqrt(np.mean(noise**2))
    if rms == 0:
        return np.zeros(n)
    burst = noise * (noise_rms(level_db) / rms)
    ramp = min(round(RAMP_S * sample_rate_hz), n // 2)
    if ramp > 0:
        edge = 0.5 - 0.5 * np.cos(np.pi * (np.arange(ramp) + 0.5) / ramp)
        burst[:ramp] *= edge
        burst[n - ramp :] *= edge[::-1]
    return burst


def _burst_slice(w: Waveform, start_s: float, duration_s: float) -> slice:
    start = max(0, round(start_s * w.sample_rate_hz))
    end = min(len(w), round((start_s + duration_s) * w.sample_rate_hz))
    return slice(start, max(start, end))


def place_burst(
    w: Waveform,
    start_s: float,
    duration_s: float,
    level_db: float,
    band_hz: float = 6000.0,
    seed: int | Sequence[int] = 0,
) -> Waveform:
    """Add one broadband noise burst spanning 0..band_hz"""
    samples = w.samples.copy()
    span = _burst_slice(w, start_s, duration_s)
    n = span.stop - span.start
    if n > 0:
        rng = np.random.default_rng(seed)
        samples[span] += _burst(n, w.sample_rate_hz, level_db, band_hz, rng)
    return Waveform(samples, w.sample_rate_hz)


def add_casual_bursts(w: Waveform, cfg: ChannelConfig) -> Waveform:
    samples = w.samples.copy()
    bursts = burst_times(cfg, w.duration)
    for i, (start_s, duration_s) in enumerate(bursts):
        span = _burst_slice(w, start_s, duration_s)
        n = span.stop - span.start
        if n == 0:
            continue
        rng = np.random.default_rng([cfg.seed, BURST_SEED_OFFSET, i])
        samples[span] += _burst(n, w.sample_rate_hz, cfg.burst_level_db, cfg.burst_band_hz, rng)
    if bursts:
        log.debug("added %d casual bursts over %.1fs", len(bursts), w.duration)
    return Waveform(samples, w.sample_rate_hz)


def anti_alias_taps(source_rate_hz: int, target_rate_hz: int) -> np.ndarray:
    """Kaiser low-pass at 0.45 x the lower rate, designed at the upsampled rate"""
    up = target_rate_hz // math.gcd(source_rate_hz, target_rate_hz)
    fs = source_rate_hz * up
    lower = min(source_rate_hz, target_rate_hz)
    numtaps, beta = signal.kaiserord(ANTI_ALIAS_ATTENUATION_DB, ANTI_ALIAS_WIDTH * lower / (fs / 2))
    numtaps |= 1
    return signal.firwin(numtaps, ANTI_ALIAS_CUTOFF * lower, window=("kaiser", beta), fs=fs)


def resample(w: Waveform, target_rate_hz: int) -> Waveform:
    if target_rate_hz <= 0:
        raise ChannelError(f"target rate must be positive, got {target_rate_hz}")
    if target_rate_hz == w.sample_rate_hz:
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    if target_rate_hz < MIN_USEFUL_RATE_HZ:
        log.warning("resampling to %d Hz loses the seek carrier band", target_rate_hz)
    g = math.gcd(w.sample_rate_hz, target_rate_hz)
    up, down = target_rate_hz // g, w.sample_rate_hz // g
    taps = anti_alias_taps(w.sample_rate_hz, target_rate_hz)
    # resample_poly scales the taps by `up` itself
    samples = signal.resample_poly(w.samples, up, down, window=taps)
    return Waveform(samples, target_rate_hz)


def propagate(
    w: Waveform,
    cfg: ChannelConfig,
    target_rate_hz: int | None = None,
) -> Waveform:
    """The full channel. Leaves the sample rate alone when no target is given."""
    received = enclose(w, cfg)
    received = attenuate(received, cfg)
    received = add_ambient(received, cfg)
    received = add_casual_bursts(received, cfg)
    if target_rate_hz is not None:
        received = resample(received, target_rate_hz)
    return received
