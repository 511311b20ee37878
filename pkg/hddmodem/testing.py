"""Utility stuff for use in tests"""

import math
import operator
import re
from typing import Optional, Sequence

import numpy as np
import pytest

from .acoustics import Waveform, db_to_amplitude, noise_rms
from .dsp import FrequencyBand, power_to_db, rms_dbfs, snr_in_band, stft

__all__ = [
    "param",
    "parametrize",
    "set_difference",
    "assert_dicts_equal",
    "tone",
    "white_noise",
    "band_energy_db",
    "rms_dbfs",
    "full_band_snr",
    "band_limited_fixture",
]


class param:
    """
    Shadows pytest.param, but the values go in the **kwargs, not the *args.
    """

    def __init__(
        self,
        *,  # force kwargs
        marks: tuple = (),
        id: Optional[str] = None,
        **kwargs,
    ):
        self.marks = marks
        self.id = id
        self.kwargs = kwargs


def parametrize(argnames: str | Sequence[str], params: Sequence[param], **kwargs):
    """
    Wraps pytest.mark.parametrize, unpacking `param`s into pytest.params in argnames order.
    """
    if isinstance(argnames, str):
        argnames = re.split(", |,", argnames)
    else:
        argnames = list(argnames)

    argvalues = []
    for p in params:
        expected_args = set(argnames)
        passed_kwargs = set(p.kwargs.keys())
        if missing := expected_args.difference(passed_kwargs):
            raise TypeError(f"Param with id={p.id!r} is missing these kwargs: {sorted(missing)}")
        if unexpected := passed_kwargs.difference(expected_args):
            raise TypeError(
                f"Param with id={p.id!r} received unexpected kwargs: {sorted(unexpected)}"
            )
        values = [p.kwargs.get(n) for n in argnames]
        argvalues.append(pytest.param(*values, marks=p.marks, id=p.id))
    return pytest.mark.parametrize(argnames, argvalues, **kwargs)


def set_difference(a, b):
    """Symmetrical difference between two sets, e.g. the keys of two reports."""
    a = set(a)
    b = set(b)
    return {*(a - b), *(b - a)}


def assert_dicts_equal(a: dict, b: dict, rel_tol: float = 0.0):
    """
    Compares two dictionaries (e.g. parsed JSON reports) and says which key differs.
    Floats are compared with `math.isclose(rel_tol=rel_tol)`.
    """
    if a == b:
        return

    keys_diff = set_difference(a.keys(), b.keys())
    assert not keys_diff, f"These keys are not present in both dictionaries: {sorted(keys_diff)}"
    for key, a_value in a.items():
        b_value = b[key]
        if isinstance(a_value, dict) and isinstance(b_value, dict):
            assert_dicts_equal(a_value, b_value, rel_tol)
            continue
        if isinstance(a_value, bool) or isinstance(b_value, bool):
            # `1 == True` in python
            func = operator.is_
        elif isinstance(a_value, float) and isinstance(b_value, float):
            func = lambda x, y: math.isclose(x, y, rel_tol=rel_tol)  # noqa: E731
        else:
            func = operator.eq
        assert func(a_value, b_value), f"Values don't match for key '{key}': {b_value} != {a_value}"


def tone(
    frequency_hz: float,
    duration_s: float,
    sample_rate_hz: int = 16000,
    level_db: float = -20.0,
    phase: float = 0.0,
) -> Waveform:
    t = np.arange(round(duration_s * sample_rate_hz)) / sample_rate_hz
    samples = db_to_amplitude(level_db) * np.sin(2 * np.pi * frequency_hz * t + phase)
    return Waveform(samples, sample_rate_hz)


def white_noise(
    duration_s: float,
    sample_rate_hz: int = 16000,
    level_db: float = -30.0,
    seed: int = 0,
) -> Waveform:
    rng = np.random.default_rng(seed)
    n = round(duration_s * sample_rate_hz)
    return Waveform(rng.normal(0.0, noise_rms(level_db), n), sample_rate_hz)


def band_energy_db(w: Waveform, band: FrequencyBand) -> float:
    """Share of the signal power falling inside the band, by FFT"""
    spectrum = np.abs(np.fft.rfft(w.samples)) ** 2
    total = spectrum.sum()
    if total == 0:
        return -math.inf
    freqs = np.fft.rfftfreq(len(w), 1 / w.sample_rate_hz)
    inside = (freqs >= band.low_hz) & (freqs <= band.high_hz)
    power = np.mean(np.square(w.samples)) * spectrum[inside].sum() / total
    return float(power_to_db(power))


def full_band_snr(signal: Waveform, noise: Waveform) -> float:
    """snr_in_band taken over every bin up to Nyquist"""
    return snr_in_band(stft(signal), stft(noise), FrequencyBand(0.0, signal.nyquist_hz))


def band_limited_fixture(
    seed: int,
    full_band_snr_db: float = 1.5,
    carrier_hz: float = 2075.0,
    noise_level_db: float = -30.0,
    duration_s: float = 2.0,
    sample_rate_hz: int = 16000,
) -> tuple[Waveform, Waveform]:
    """
    (signal, noise): a carrier over white noise, and an independent noise reference of the same
    level. The carrier level is bisected until the full-band SNR is within 0.05 dB of the target.
    """
    noise = white_noise(duration_s, sample_rate_hz, noise_level_db, seed=2 * seed + 1)
    bed = white_noise(duration_s, sample_rate_hz, noise_level_db, seed=2 * seed)
    phase = np.random.default_rng(seed).uniform(0, 2 * np.pi)

    def signal_at(level_db: float) -> Waveform:
        carrier = tone(carrier_hz, duration_s, sample_rate_hz, level_db, phase)
        return Waveform(bed.samples + carrier.samples, sample_rate_hz)

    low, high = noise_level_db - 40, noise_level_db + 20
    for _ in range(60):
        middle = (low + high) / 2
        snr = full_band_snr(signal_at(middle), noise)
        if abs(snr - full_band_snr_db) < 0.05:
            break
        if snr < full_band_snr_db:
            low = middle
        else:
            high = middle
    return signal_at(middle), noise
