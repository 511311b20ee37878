"""
Phenomenological model of HDD acoustic emissions.

Idle noise is the spindle tone at RPM/60 Hz plus a few harmonics over a low broadband floor.
Seek noise is a narrowband component near 1/track-to-track-seek-time (≈2083 Hz) riding on
band-limited noise between 1500 and 8000 Hz. Levels are dB relative to a full-scale sine.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.ndimage import uniform_filter1d

from .errors import SynthesisError
from .modulation import SymbolSchedule

log = logging.getLogger(__name__)

# seek track is drawn from its own stream so that an all-off render equals synth_idle
SEEK_SEED_OFFSET = 1
RAMP_S = 0.005
JITTER_BANDWIDTH_HZ = 10.0


def db_to_amplitude(level_db: float) -> float:
    """Peak amplitude of a sine at level_db. -inf gives 0."""
    return 10 ** (level_db / 20)


def noise_rms(level_db: float) -> float:
    """RMS of a noise carrying the same power as a sine at level_db"""
    return db_to_amplitude(level_db) / math.sqrt(2)


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise SynthesisError(f"sample rate must be positive, got {self.sample_rate_hz}")
        samples = np.clip(np.asarray(self.samples, dtype=float), -1.0, 1.0)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    @property
    def nyquist_hz(self) -> float:
        return self.sample_rate_hz / 2

    def scaled(self, gain: float) -> "Waveform":
        return Waveform(self.samples * gain, self.sample_rate_hz)

    def slice_time(self, start_s: float, end_s: float) -> "Waveform":
        start = max(0, round(start_s * self.sample_rate_hz))
        end = min(len(self), round(end_s * self.sample_rate_hz))
        return Waveform(self.samples[start:end], self.sample_rate_hz)


@dataclass(frozen=True)
class HddProfile:
    rpm: int = 7200
    seek_carrier_hz: float = 2083.3
    seek_band: tuple[float, float] = (1500.0, 8000.0)
    carrier_level_db: float = -20.0
    broadband_level_db: float = -35.0
    idle_level_db: float = -45.0
    idle_harmonics: int = 3
    idle_floor_db: float = -70.0
    jitter_depth: float = 0.1

    def __post_init__(self):
        low, high = self.seek_band
        if self.rpm <= 0:
            raise SynthesisError(f"rpm must be positive, got {self.rpm}")
        if not low < high:
            raise SynthesisError(f"invalid seek band {self.seek_band}")
        if not low <= self.seek_carrier_hz <= high:
            raise SynthesisError(f"carrier {self.seek_carrier_hz} Hz outside seek band")
        levels = (
            self.carrier_level_db,
            self.broadband_level_db,
            self.idle_level_db,
            self.idle_floor_db,
        )
        if any(level > 0 for level in levels):
            raise SynthesisError("levels are relative to full scale and must be <= 0 dB")
        if self.idle_harmonics < 1:
            raise SynthesisError("idle_harmonics must be >= 1")
        if not 0 <= self.jitter_depth < 1:
            raise SynthesisError("jitter_depth must be in [0, 1)")


PROFILES = {
    "desktop": HddProfile(),
    "external": HddProfile(
        rpm=5400,
        carrier_level_db=-26.0,
        broadband_level_db=-38.0,
        idle_level_db=-48.0,
    ),
    "aam-off": HddProfile(carrier_level_db=-12.0, broadband_level_db=-27.0),
}


def idle_fundamental_hz(rpm: int) -> float:
    if rpm <= 0:
        raise SynthesisError(f"rpm must be positive, got {rpm}")
    return rpm / 60


def carrier_from_track_seek(track_seek_time_s: float) -> float:
    if track_seek_time_s <= 0:
        raise SynthesisError(f"track seek time must be positive, got {track_seek_time_s}")
    return 1 / track_seek_time_s


def _n_samples(duration: float, sample_rate_hz: int) -> int:
    if duration <= 0:
        raise SynthesisError(f"duration must be positive, got {duration}")
    return max(1, round(duration * sample_rate_hz))


def _slow_jitter(n: int, sample_rate_hz: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance noise band-limited to a few Hz, clipped to +-3"""
    noise = rng.standard_normal(n)
    if n < 64:
        return np.zeros(n)
    sos = signal.butter(2, JITTER_BANDWIDTH_HZ, btype="lowpass", fs=sample_rate_hz, output="sos")
    slow = signal.sosfiltfilt(sos, noise)
    std = slow.std()
    return np.clip(slow / std, -3, 3) if std > 0 else np.zeros(n)


def synth_idle(
    profile: HddProfile,
    duration: float,
    sample_rate_hz: int,
    seed: int = 0,
) -> Waveform:
    n = _n_samples(duration, sample_rate_hz)
    fundamental = idle_fundamental_hz(profile.rpm)
    if sample_rate_hz < 2 * profile.idle_harmonics * fundamental:
        raise SynthesisError(
            f"Nyquist violation: {sample_rate_hz} Hz cannot carry "
            f"{profile.idle_harmonics} harmonics of {fundamental} Hz"
        )
    rng = np.random.default_rng(seed)
    t = np.arange(n) / sample_rate_hz
    amplitude = db_to_amplitude(profile.idle_level_db)
    samples = np.zeros(n)
    for k in range(1, profile.idle_harmonics + 1):
        phase = rng.uniform(0, 2 * np.pi)
        samples += amplitude / k * np.sin(2 * np.pi * k * fundamental * t + phase)
    if math.isfinite(profile.idle_floor_db):
        samples += rng.normal(0, noise_rms(profile.idle_floor_db), n)
    return Waveform(samples, sample_rate_hz)


def synth_seek_burst(
    profile: HddProfile,
    duration: float,
    sample_rate_hz: int,
    seed: int = 0,
) -> Waveform:
    n = _n_samples(duration, sample_rate_hz)
    rng = np.random.default_rng(seed)
    nyquist = sample_rate_hz / 2
    low, high = profile.seek_band
    if high > nyquist:
        log.warning("seek band %s truncated at Nyquist (%s Hz)", profile.seek_band, nyquist)
        high = nyquist
    if low >= high:
        raise SynthesisError(f"seek band starts above Nyquist ({nyquist} Hz)")

    samples = np.zeros(n)
    if math.isfinite(profile.broadband_level_db):
        noise = rng.standard_normal(n)
        if high >= nyquist:
            sos = signal.butter(6, low, btype="highpass", fs=sample_rate_hz, output="sos")
        else:
            sos = signal.butter(6, [low, high], btype="bandpass", fs=sample_rate_hz, output="sos")
        shaped = signal.sosfilt(sos, noise)
        rms = np.sqrt(np.mean(shaped**2))
        if rms > 0:
            samples += shaped * (noise_rms(profile.broadband_level_db) / rms)

    if math.isfinite(profile.carrier_level_db):
        t = np.arange(n) / sample_rate_hz
        envelope = 1 + profile.jitter_depth * _slow_jitter(n, sample_rate_hz, rng)
        phase = rng.uniform(0, 2 * np.pi)
        carrier = np.sin(2 * np.pi * profile.seek_carrier_hz * t + phase)
        samples += db_to_amplitude(profile.carrier_level_db) * envelope * carrier
    return Waveform(samples, sample_rate_hz)


def _gate(schedule: SymbolSchedule, n: int, sample_rate_hz: int) -> np.ndarray:
    """1 during carrier-on segments, 0 elsewhere, with raised-cosine edges"""
    gate = np.zeros(n)
    for start, end in schedule.on_intervals():
        gate[round(start * sample_rate_hz) : round(end * sample_rate_hz)] = 1.0
    ramp = round(RAMP_S * sample_rate_hz)
    if ramp > 1:
        linear = uniform_filter1d(gate, size=ramp, mode="constant")
        gate = 0.5 - 0.5 * np.cos(np.pi * np.clip(linear, 0, 1))
    return gate


def render_schedule(
    schedule: SymbolSchedule,
    profile: HddProfile,
    sample_rate_hz: int,
    seed: int = 0,
) -> Waveform:
    """Seek bursts during carrier-on segments, mixed over a continuous idle bed"""
    if not len(schedule):
        raise SynthesisError("nothing to render: empty schedule")
    total = schedule.total_duration
    bed = synth_idle(profile, total, sample_rate_hz, seed=seed)
    gate = _gate(schedule, len(bed), sample_rate_hz)
    if not gate.any():
        return bed
    seek = synth_seek_burst(profile, total, sample_rate_hz, seed=seed + SEEK_SEED_OFFSET)
    return Waveform(bed.samples + gate * seek.samples, sample_rate_hz)
