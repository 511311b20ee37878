"""
Spectral primitives used by the receiver and the experiment harness.

Magnitudes and powers are normalized so that bin powers sum to the mean signal power, and dB
values are relative to a full-scale sine (power 0.5).
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .acoustics import Waveform
from .errors import DspError

log = logging.getLogger(__name__)

FULL_SCALE_POWER = 0.5
TINY = 1e-30
DEFAULT_BIN_WIDTH_HZ = 50.0
# psd windows span this many bins' worth of resolution before pooling
PSD_WINDOW_BINS = 4


def power_to_db(power):
    return 10 * np.log10(np.maximum(power, TINY) / FULL_SCALE_POWER)


def rms_dbfs(samples) -> float:
    """Level of a signal relative to a full-scale sine. Silence gives -inf."""
    rms = np.sqrt(np.mean(np.square(samples)))
    if rms == 0:
        return -math.inf
    return float(20 * np.log10(rms * math.sqrt(2)))


@dataclass(frozen=True)
class FrequencyBand:
    low_hz: float
    high_hz: float

    def __post_init__(self):
        if not 0 <= self.low_hz < self.high_hz:
            raise DspError(f"invalid band [{self.low_hz}, {self.high_hz}]")

    def __str__(self):
        return f"[{self.low_hz:g}, {self.high_hz:g}] Hz"

    @property
    def centre_hz(self) -> float:
        return (self.low_hz + self.high_hz) / 2

    def check_nyquist(self, sample_rate_hz: int):
        if self.high_hz > sample_rate_hz / 2:
            raise DspError(f"band {self} exceeds Nyquist of {sample_rate_hz} Hz audio")

    def bin_indices(self, bin_width_hz: float) -> range:
        """Bins k whose span [k*bw, (k+1)*bw) overlaps the band"""
        first = math.floor(self.low_hz / bin_width_hz)
        last = max(first + 1, math.ceil(self.high_hz / bin_width_hz))
        return range(first, last)

    @classmethod
    def of_bin(cls, k: int, bin_width_hz: float) -> "FrequencyBand":
        return cls(k * bin_width_hz, (k + 1) * bin_width_hz)


DEFAULT_BAND = FrequencyBand(2050.0, 2100.0)


@dataclass(frozen=True, eq=False)
class SpectralSeries:
    """Magnitude spectra, one row per frame. Bin k covers [k*bin_width, (k+1)*bin_width)."""

    frames: np.ndarray
    bin_width_hz: float
    hop_s: float
    window_s: float
    start_s: float = 0.0

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_bins(self) -> int:
        return self.frames.shape[1]

    @property
    def frame_starts(self) -> np.ndarray:
        return self.start_s + np.arange(self.n_frames) * self.hop_s

    @property
    def times(self) -> np.ndarray:
        """Frame centres"""
        return self.frame_starts + self.window_s / 2

    @property
    def bin_edges(self) -> np.ndarray:
        """Lower edge of every bin"""
        return np.arange(self.n_bins) * self.bin_width_hz

    def slice_time(self, start_s: float, end_s: float) -> "SpectralSeries":
        """Frames lying entirely within [start_s, end_s]"""
        eps = 1e-9
        starts = self.frame_starts
        keep = np.flatnonzero((starts >= start_s - eps) & (starts + self.window_s <= end_s + eps))
        if not len(keep):
            raise DspError(f"no complete frame within [{start_s:.3f}, {end_s:.3f}] s")
        return SpectralSeries(
            frames=self.frames[keep[0] : keep[-1] + 1],
            bin_width_hz=self.bin_width_hz,
            hop_s=self.hop_s,
            window_s=self.window_s,
            start_s=float(starts[keep[0]]),
        )

    def to_csv(self, path: str | Path, markers_hz: Iterable[float] = ()) -> Path:
        """One row per (frame, bin); `marker` is 1 on the bins containing a marker frequency"""
        path = Path(path)
        marked = {math.floor(f / self.bin_width_hz) for f in markers_hz}
        magnitude_db = power_to_db(self.frames**2)
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["time_s", "bin_hz", "magnitude_db", "marker"])
            for t, row in zip(self.times, magnitude_db):
                for k, value in enumerate(row):
                    writer.writerow(
                        [
                            f"{t:.4f}",
                            f"{k * self.bin_width_hz:.1f}",
                            f"{value:.2f}",
                            int(k in marked),
                        ]
                    )
        return path


@dataclass(frozen=True, eq=False)
class IntensityEnvelope:
    values: np.ndarray
    hop_s: float
    start_s: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise DspError("envelope values must be finite")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.start_s + np.arange(len(self.values)) * self.hop_s

    @property
    def duration(self) -> float:
        return len(self.values) * self.hop_s

    def index_at(self, t: float) -> int:
        return round((t - self.start_s) / self.hop_s)


@dataclass(frozen=True, eq=False)
class PowerSpectrum:
    power_db: np.ndarray
    bin_width_hz: float

    @property
    def bin_edges(self) -> np.ndarray:
        return np.arange(len(self.power_db)) * self.bin_width_hz

    @property
    def peak_bin(self) -> int:
        return int(np.argmax(self.power_db))


def _pooling_matrix(n_win: int, sample_rate_hz: int, bin_width_hz: float, n_bins: int):
    """Maps fine FFT bins (centred at (j + 1/2) * rate / n_win) onto bin_width-wide bins"""
    n_fine = n_win // 2
    centres = (np.arange(n_fine) + 0.5) * sample_rate_hz / n_win
    coarse = np.floor(centres / bin_width_hz).astype(int)
    matrix = np.zeros((n_fine, n_bins))
    inside = coarse < n_bins
    matrix[np.flatnonzero(inside), coarse[inside]] = 1.0
    return matrix


def _frame_powers(
    samples: np.ndarray,
    sample_rate_hz: int,
    n_win: int,
    hop: int,
    bin_width_hz: float,
) -> np.ndarray:
    """Per-frame, per-bin power. Each row sums to the frame's mean power."""
    n_bins = math.floor(sample_rate_hz / 2 / bin_width_hz)
    window = signal.get_window("hann", n_win)
    # half-bin shift puts fine bin centres at (j + 1/2) * rate / n_win
    taper = window * np.exp(-1j * np.pi * np.arange(n_win) / n_win)
    frames = sliding_window_view(samples, n_win)[::hop]
    spectra = np.fft.fft(frames * taper, axis=1)[:, : n_win // 2]
    fine = 2 * np.abs(spectra) ** 2 / (n_win * np.sum(window**2))
    return fine @ _pooling_matrix(n_win, sample_rate_hz, bin_width_hz, n_bins)


def _window_samples(window_s: float, sample_rate_hz: int) -> int:
    # round up so fine bins are never wider than the requested bins
    return math.ceil(window_s * sample_rate_hz - 1e-9)


def stft(
    w: Waveform,
    bin_width_hz: float = DEFAULT_BIN_WIDTH_HZ,
    hop_s: float | None = None,
    window_s: float | None = None,
) -> SpectralSeries:
    """
    Moving-window FFT with a Hann taper. Returns floor(Nyquist / bin_width) bins per frame.
    The window defaults to 1/bin_width and the hop to half a window.
    """
    if bin_width_hz <= 0:
        raise DspError(f"bin width must be positive, got {bin_width_hz}")
    window_s = window_s if window_s is not None else 1 / bin_width_hz
    hop_s = hop_s if hop_s is not None else window_s / 2
    if window_s < 1 / bin_width_hz - 1e-9:
        raise DspError(f"a {window_s}s window cannot resolve {bin_width_hz} Hz bins")
    if not 0 < hop_s <= window_s:
        raise DspError(f"hop must be in (0, window], got {hop_s}")
    n_win = _window_samples(window_s, w.sample_rate_hz)
    hop = max(1, round(hop_s * w.sample_rate_hz))
    if n_win > len(w):
        raise DspError(f"signal too short: {w.duration:.3f}s for a {window_s}s window")
    power = _frame_powers(w.samples, w.sample_rate_hz, n_win, hop, bin_width_hz)
    return SpectralSeries(
        frames=np.sqrt(power),
        bin_width_hz=bin_width_hz,
        hop_s=hop / w.sample_rate_hz,
        window_s=n_win / w.sample_rate_hz,
    )


def psd(w: Waveform, bin_width_hz: float = DEFAULT_BIN_WIDTH_HZ) -> PowerSpectrum:
    """Time-averaged power per bin in dB"""
    n_win = _window_samples(PSD_WINDOW_BINS / bin_width_hz, w.sample_rate_hz)
    if len(w) < 2 * n_win:
        raise DspError(f"signal too short for psd: need {2 * n_win} samples, got {len(w)}")
    power = _frame_powers(w.samples, w.sample_rate_hz, n_win, n_win // 2, bin_width_hz)
    return PowerSpectrum(power_db=power_to_db(power.mean(axis=0)), bin_width_hz=bin_width_hz)


def write_psd_csv(path: str | Path, spectrum: PowerSpectrum) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_hz", "power_db"])
        for edge, value in zip(spectrum.bin_edges, spectrum.power_db):
            writer.writerow([f"{edge:.1f}", f"{value:.2f}"])
    return path


def bandpass(w: Waveform, band: FrequencyBand, order: int = 4) -> Waveform:
    """Zero-phase Butterworth filter, so envelope timing matches the schedule"""
    band.check_nyquist(w.sample_rate_hz)
    nyquist = w.nyquist_hz
    fs = w.sample_rate_hz
    if band.low_hz <= 0 and band.high_hz >= nyquist:
        return Waveform(w.samples.copy(), fs)
    if band.low_hz <= 0:
        sos = signal.butter(order, band.high_hz, btype="lowpass", fs=fs, output="sos")
    elif band.high_hz >= nyquist:
        sos = signal.butter(order, band.low_hz, btype="highpass", fs=fs, output="sos")
    else:
        edges = [band.low_hz, band.high_hz]
        sos = signal.butter(order, edges, btype="bandpass", fs=fs, output="sos")
    try:
        filtered = signal.sosfiltfilt(sos, w.samples)
    except ValueError as e:
        raise DspError(f"signal too short to filter: {e}")
    return Waveform(filtered, fs)


def envelope(
    w: Waveform,
    smoothing_window_s: float,
    hop_s: float = 0.005,
) -> IntensityEnvelope:
    """Squared amplitude smoothed by a unit-area Hann window, sampled every hop_s, in dB"""
    if smoothing_window_s <= 0:
        raise DspError(f"smoothing window must be positive, got {smoothing_window_s}")
    if hop_s <= 0:
        raise DspError(f"hop must be positive, got {hop_s}")
    n = max(1, round(smoothing_window_s * w.sample_rate_hz))
    window = signal.get_window("hann", n, fftbins=False) if n > 2 else np.ones(n)
    window = window / window.sum()
    power = signal.fftconvolve(w.samples**2, window, mode="same")
    step = max(1, round(hop_s * w.sample_rate_hz))
    return IntensityEnvelope(values=power_to_db(power[::step]), hop_s=step / w.sample_rate_hz)


def snr_in_band(
    signal_frames: SpectralSeries,
    noise_frames: SpectralSeries,
    band: FrequencyBand,
) -> float:
    """20*log10 of the summed in-band magnitudes, each averaged over the frames of its slice"""
    if not signal_frames.n_frames or not noise_frames.n_frames:
        raise DspError("snr needs non-empty signal and noise slices")
    if (signal_frames.bin_width_hz, signal_frames.n_bins) != (
        noise_frames.bin_width_hz,
        noise_frames.n_bins,
    ):
        raise DspError("signal and noise slices have different bins")
    bins = [k for k in band.bin_indices(signal_frames.bin_width_hz) if k < signal_frames.n_bins]
    if not bins:
        raise DspError(f"band {band} maps to no bins")
    x = signal_frames.frames[:, bins].mean(axis=0).sum()
    n = noise_frames.frames[:, bins].mean(axis=0).sum()
    if n <= 0:
        raise DspError("degenerate noise reference")
    if x <= 0:
        return -math.inf
    return float(20 * np.log10(x / n))
