import math

import numpy as np
import pytest

from hddmodem.acoustics import (
    PROFILES,
    HddProfile,
    Waveform,
    carrier_from_track_seek,
    idle_fundamental_hz,
    render_schedule,
    synth_idle,
    synth_seek_burst,
)
from hddmodem.dsp import FrequencyBand, psd
from hddmodem.errors import SynthesisError
from hddmodem.framing import BitString
from hddmodem.modulation import Segment, SymbolSchedule, SymbolTiming, modulate
from hddmodem.testing import band_energy_db

CARRIER_BAND = FrequencyBand(2050, 2100)


@pytest.mark.parametrize("rpm, hz", [(7200, 120), (5400, 90), (15000, 250)])
def test_idle_fundamental(rpm, hz):
    assert idle_fundamental_hz(rpm) == hz


@pytest.mark.parametrize("seek_s, hz", [(0.00048, 2083.33), (0.001, 1000), (0.0005, 2000)])
def test_carrier_from_track_seek(seek_s, hz):
    assert carrier_from_track_seek(seek_s) == pytest.approx(hz, abs=0.01)


def test_idle_peak_is_the_spindle_bin():
    spectrum = psd(synth_idle(HddProfile(rpm=7200), 2.0, 16000, seed=0))
    below_1k = spectrum.power_db[: 1000 // 50]
    assert int(np.argmax(below_1k)) == 120 // 50


def test_pure_idle_tone_matches_direct_dft():
    profile = HddProfile(idle_harmonics=1, idle_floor_db=-math.inf)
    w = synth_idle(profile, 2.0, 16000, seed=3)
    t = np.arange(len(w)) / w.sample_rate_hz

    def dft_magnitude(f):
        return abs(np.sum(w.samples * np.exp(-2j * np.pi * f * t)))

    assert dft_magnitude(120) > 10 * max(dft_magnitude(110), dft_magnitude(130))
    spectrum = np.abs(np.fft.rfft(w.samples))
    freqs = np.fft.rfftfreq(len(w), 1 / w.sample_rate_hz)
    assert freqs[np.argmax(spectrum)] == pytest.approx(120)


def test_idle_needs_positive_duration():
    with pytest.raises(SynthesisError):
        synth_idle(HddProfile(), 0, 16000)


def test_idle_nyquist_violation():
    with pytest.raises(SynthesisError, match="Nyquist violation"):
        synth_idle(HddProfile(idle_harmonics=3), 1.0, 600)


def test_synthesis_is_seeded():
    a = synth_seek_burst(HddProfile(), 0.5, 16000, seed=9)
    b = synth_seek_burst(HddProfile(), 0.5, 16000, seed=9)
    c = synth_seek_burst(HddProfile(), 0.5, 16000, seed=10)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_seek_burst_dominates_carrier_band():
    profile = HddProfile()
    burst = synth_seek_burst(profile, 1.0, 16000, seed=0)
    idle = synth_idle(profile, 1.0, 16000, seed=0)
    assert band_energy_db(burst, CARRIER_BAND) - band_energy_db(idle, CARRIER_BAND) >= 10


def test_broadband_is_flat_over_seek_band():
    profile = HddProfile(carrier_level_db=-math.inf)
    spectrum = psd(synth_seek_burst(profile, 2.0, 16000, seed=1))
    in_band = spectrum.power_db[1500 // 50 : 8000 // 50]
    assert np.all(np.abs(in_band - np.median(in_band)) <= 6)


def test_seek_band_up_to_nyquist_is_accepted():
    w = synth_seek_burst(HddProfile(seek_band=(1500.0, 8000.0)), 0.5, 16000)
    assert len(w) == 8000


def test_seek_band_truncated_at_nyquist(caplog):
    w = synth_seek_burst(HddProfile(), 0.5, 8000)
    assert len(w) == 4000
    assert "truncated at Nyquist" in caplog.text


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(rpm=0),
        dict(seek_band=(8000.0, 1500.0)),
        dict(seek_carrier_hz=9000.0),
        dict(carrier_level_db=3.0),
        dict(idle_harmonics=0),
        dict(jitter_depth=1.0),
    ],
)
def test_profile_validation(kwargs):
    with pytest.raises(SynthesisError):
        HddProfile(**kwargs)


def test_waveform_is_clipped():
    w = Waveform(np.array([-3.0, 0.5, 2.0]), 16000)
    assert list(w.samples) == [-1.0, 0.5, 1.0]
    assert w.duration == pytest.approx(3 / 16000)


@pytest.mark.parametrize("name", sorted(PROFILES))
def test_render_never_clips(name):
    schedule = modulate(BitString("1" * 10), SymbolTiming()).padded(0.5, 0.5)
    w = render_schedule(schedule, PROFILES[name], 16000, seed=0)
    assert np.max(np.abs(w.samples)) < 1.0


def test_render_all_off_is_the_idle_bed():
    schedule = SymbolSchedule((Segment(False, 1.0),))
    w = render_schedule(schedule, HddProfile(), 16000, seed=5)
    idle = synth_idle(HddProfile(), 1.0, 16000, seed=5)
    assert np.array_equal(w.samples, idle.samples)


def test_render_gates_the_bursts():
    schedule = SymbolSchedule((Segment(False, 1.0), Segment(True, 1.0), Segment(False, 1.0)))
    w = render_schedule(schedule, HddProfile(), 16000, seed=0)
    on = band_energy_db(w.slice_time(1.1, 1.9), CARRIER_BAND)
    off = band_energy_db(w.slice_time(0.1, 0.9), CARRIER_BAND)
    assert on - off >= 10
    assert len(w) == 3 * 16000


def test_render_empty_schedule():
    with pytest.raises(SynthesisError):
        render_schedule(SymbolSchedule(), HddProfile(), 16000)
