"""16-bit PCM WAV files and raw PCM streams in and out of Waveform"""

import logging
from pathlib import Path
from typing import BinaryIO

import numpy as np
from scipy.io import wavfile

from .acoustics import Waveform
from .errors import ModemError

log = logging.getLogger(__name__)

FULL_SCALE = 32767


def write_wav(waveform: Waveform, path: str | Path) -> Path:
    path = Path(path)
    pcm = np.round(waveform.samples * FULL_SCALE).astype(np.int16)
    wavfile.write(path, waveform.sample_rate_hz, pcm)
    log.debug("wrote %.2fs to %s", waveform.duration, path)
    return path


def _to_float(data: np.ndarray) -> np.ndarray:
    match data.dtype.kind:
        case "i":
            return data.astype(float) / np.iinfo(data.dtype).max
        case "u":
            # 8-bit WAV is offset binary
            half = (np.iinfo(data.dtype).max + 1) / 2
            return (data.astype(float) - half) / half
        case _:
            return data.astype(float)


def read_wav(path: str | Path) -> Waveform:
    """Any integer or float WAV, scaled to [-1, 1]. Multichannel audio is averaged to mono."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path.as_posix())
    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise ModemError(f"couldn't read {path} as WAV: {e}")
    samples = _to_float(data)
    if samples.ndim > 1:
        log.info("%s has %d channels, mixing down to mono", path, samples.shape[1])
        samples = samples.mean(axis=1)
    return Waveform(samples, rate)


def read_pcm(stream: BinaryIO, sample_rate_hz: int) -> Waveform:
    """Headerless 16-bit little-endian mono, e.g. piped on stdin"""
    raw = stream.read()
    if len(raw) % 2:
        log.warning("dropping trailing odd byte of PCM stream")
        raw = raw[:-1]
    if not raw:
        raise ModemError("empty PCM stream")
    data = np.frombuffer(raw, dtype="<i2")
    return Waveform(_to_float(data), sample_rate_hz)
