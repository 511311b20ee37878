import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hddmodem.acoustics import HddProfile, Waveform, render_schedule
from hddmodem.channel import ChannelConfig, place_burst, propagate
from hddmodem.dsp import FrequencyBand, IntensityEnvelope, stft
from hddmodem.errors import (
    DspError,
    InsufficientContrast,
    NoCarrierFound,
    PreambleNotFound,
    ReceiverError,
)
from hddmodem.framing import BitString, FrameConfig, frame_encode, frame_serialize
from hddmodem.modulation import SymbolTiming, modulate
from hddmodem.receiver import (
    ChannelEstimate,
    ReceiverConfig,
    bit_errors,
    demodulate,
    detect_preamble,
    receive,
    report_json,
    scan_carrier,
)
from hddmodem.testing import tone, white_noise

LEAD_IN_S = 1.0
HOP_S = 0.005


def _transmit(
    payload: str,
    timing: SymbolTiming = SymbolTiming(),
    distance_m: float = 1.0,
    seed: int = 0,
    sample_rate_hz: int = 16000,
) -> Waveform:
    frames = frame_encode(BitString(payload), FrameConfig())
    schedule = modulate(frame_serialize(frames), timing).padded(LEAD_IN_S, 1.0)
    emitted = render_schedule(schedule, HddProfile(), sample_rate_hz, seed=seed)
    return propagate(emitted, ChannelConfig(distance_m=distance_m, burst_rate_hz=0.0, seed=seed))


def _envelope(
    bits: str,
    t0: float = 0.3,
    t1: float = 0.3,
    on_db: float = -20.0,
    off_db: float = -40.0,
    noise_db: float = 0.0,
    seed: int = 0,
) -> IntensityEnvelope:
    pieces = [np.full(round(0.5 / HOP_S), off_db)]
    for bit in bits:
        length = round((t1 if bit == "1" else t0) / HOP_S)
        pieces.append(np.full(length, on_db if bit == "1" else off_db))
    pieces.append(np.full(round(1.0 / HOP_S), off_db))
    values = np.concatenate(pieces)
    values += np.random.default_rng(seed).normal(0, noise_db, len(values)) if noise_db else 0
    return IntensityEnvelope(values, HOP_S)


def test_scan_finds_the_seek_carrier():
    ranked = scan_carrier(stft(_transmit("101010")))
    assert ranked[0] == 41


def test_scan_of_ambient_noise():
    with pytest.raises(NoCarrierFound, match="no carrier found"):
        scan_carrier(stft(white_noise(20.0, level_db=-50)))


def test_scan_prefers_the_stronger_carrier():
    rate = 16000
    gate = np.zeros(6 * rate)
    for start in (1, 2, 3, 4):
        gate[int((start + 0.25) * rate) : int((start + 0.75) * rate)] = 1.0
    weak = tone(2083.3, 6.0, rate, level_db=-30).samples
    strong = tone(3020.0, 6.0, rate, level_db=-20).samples
    floor = white_noise(6.0, rate, level_db=-60, seed=1).samples
    ranked = scan_carrier(stft(Waveform(gate * (weak + strong) + floor, rate)))
    assert ranked[0] == 60
    assert 41 in ranked


def test_scan_needs_enough_audio():
    with pytest.raises(ReceiverError, match="too short"):
        scan_carrier(stft(white_noise(0.5)))


@pytest.mark.parametrize("t0, t1", [(0.3, 0.3), (2.0, 1.0), (0.5, 1.0)])
def test_preamble_timing_estimates(t0, t1):
    payload = "110100101" * 4
    est = detect_preamble(_envelope("1010" + payload, t0, t1))
    assert est.t0_s == pytest.approx(t0, rel=0.1)
    assert est.t1_s == pytest.approx(t1, rel=0.1)
    assert est.on_level_db > est.threshold_db > est.off_level_db
    assert est.payload_start_s == pytest.approx(0.5 + 2 * (t0 + t1), abs=2 * HOP_S)


def test_constant_envelope_has_no_preamble():
    with pytest.raises(PreambleNotFound, match="preamble not found"):
        detect_preamble(IntensityEnvelope(np.full(1000, -30.0), HOP_S))


def test_faint_preamble_is_rejected():
    # loud edges, weak middles: segmentation succeeds but the plateau contrast is 2.9 dB
    on = np.concatenate([np.full(12, -20.0), np.full(36, -25.6), np.full(12, -20.0)])
    values = np.concatenate(
        [np.full(100, -28.5), on, np.full(60, -28.5), on, np.full(200, -28.5)]
    )
    with pytest.raises(InsufficientContrast, match="insufficient contrast") as e:
        detect_preamble(IntensityEnvelope(values, HOP_S))
    assert e.value.resume_s == pytest.approx((340 - 0.5) * HOP_S)


def test_demodulate_ideal_envelope():
    payload = "011010011100101101001110100101101101"
    env = _envelope("1010" + payload)
    result = demodulate(env, detect_preamble(env))
    assert str(result.payload) == payload
    (frame,) = result.frames
    assert len(frame.confidence) == 36
    assert min(frame.confidence) > 5


def test_demodulate_reports_lost_signal():
    env = _envelope("1010" + "1" * 5)
    est = detect_preamble(env)
    silent = IntensityEnvelope(np.full(len(env), est.threshold_db), HOP_S)
    result = demodulate(silent, est)
    assert result.frames == []
    assert result.diagnostics.lost_signal == 1


@settings(max_examples=1000, deadline=None)
@given(
    payload=st.lists(st.integers(0, 1), min_size=36, max_size=36),
    gain=st.floats(0.1, 1.0),
)
def test_decoded_bits_are_gain_invariant(payload, gain):
    bits = "".join(map(str, payload))
    env = _envelope("1010" + bits, noise_db=0.5)
    scaled = IntensityEnvelope(env.values + 20 * math.log10(gain), env.hop_s)
    plain = demodulate(env, detect_preamble(env))
    shifted = demodulate(scaled, detect_preamble(scaled))
    assert str(plain.payload) == str(shifted.payload) == bits


def test_channel_estimate_levels_must_be_ordered():
    with pytest.raises(ReceiverError):
        ChannelEstimate(41, 2075.0, 0.3, 0.3, -40.0, -20.0, -30.0)


def test_receive_one_metre():
    result = receive(_transmit("101010"))
    (frame,) = result.frames
    assert str(frame.payload).startswith("101010")
    assert frame.payload.ones == 3
    assert result.estimate.carrier_hz == pytest.approx(2075)
    assert result.diagnostics.preambles_detected == 1


def test_receive_two_metres():
    result = receive(_transmit("101010", distance_m=2.0, seed=3))
    assert str(result.payload) == "101010" + "0" * 30


def test_receive_back_to_back_frames():
    payload = BitString.random(108, np.random.default_rng(5))
    result = receive(_transmit(str(payload), seed=5))
    assert len(result.frames) == 3
    assert result.payload == payload
    starts = [frame.start_s for frame in result.frames]
    assert starts == sorted(starts)


def test_receive_asymmetric_timing():
    result = receive(_transmit("101010", SymbolTiming(t0=2.0, t1=1.0), seed=1))
    assert str(result.payload) == "101010" + "0" * 30
    assert result.estimate.t0_s == pytest.approx(2.0, rel=0.1)
    assert result.estimate.t1_s == pytest.approx(1.0, rel=0.1)


def test_receive_resamples_44k_recordings():
    result = receive(_transmit("110011", sample_rate_hz=44100))
    assert str(result.payload).startswith("110011")


def test_receive_forced_band():
    cfg = ReceiverConfig(force_default_band=True)
    result = receive(_transmit("1001"), cfg)
    assert str(result.payload).startswith("1001")
    assert result.estimate.carrier_hz == pytest.approx(2075)


@pytest.mark.parametrize("gain", [0.1, 0.35, 1.0])
def test_receive_is_gain_invariant(gain):
    received = _transmit("011101", seed=2)
    assert receive(received.scaled(gain)).payload == receive(received).payload


def test_burst_over_a_zero_flips_it():
    timing = SymbolTiming()
    received = _transmit("101010", seed=4)
    # the second payload bit is a '0'
    start = LEAD_IN_S + 4 * timing.t0 + timing.t1
    received = place_burst(received, start, timing.t0, level_db=-30.0, seed=4)
    sent = BitString("101010" + "0" * 30)
    decoded = receive(received, ReceiverConfig(force_default_band=True)).payload
    assert decoded[1] == 1
    assert bit_errors(sent, decoded) == 1


def test_ambient_only_audio():
    result = receive(white_noise(60.0, level_db=-50, seed=6))
    assert result.frames == []
    assert result.diagnostics.notes[0].startswith("no carrier found")


def test_receive_needs_carrier_bandwidth():
    with pytest.raises(ReceiverError, match="below"):
        receive(white_noise(1.0, 4000))


@pytest.mark.parametrize(
    "sent, received, errors",
    [
        ("1010", "1010", 0),
        ("1010", "1011", 1),
        ("1010", "10", 2),
        ("1010", "101011", 0),
    ],
)
def test_bit_errors(sent, received, errors):
    assert bit_errors(BitString(sent), BitString(received)) == errors


def test_report_json():
    env = _envelope("1010" + "1" * 36)
    result = demodulate(env, detect_preamble(env))
    report = json.loads(report_json(result, BitString("1" * 35 + "0")))
    assert report["t0_s"] == pytest.approx(0.3)
    assert report["frames"][0]["payload"] == "1" * 36
    assert report["bit_errors"] == 1
    assert report["ber"] == pytest.approx(1 / 36)
    assert set(report["diagnostics"]) == {
        "preambles_detected",
        "rejected_candidates",
        "lost_signal",
        "notes",
    }


def test_report_json_without_frames():
    report = json.loads(report_json(receive(white_noise(5.0, level_db=-50))))
    assert report["carrier_hz"] is None
    assert report["frames"] == []
    assert "ber" not in report


def test_scan_band_must_fit_the_working_rate():
    cfg = ReceiverConfig(scan_band=FrequencyBand(1500, 9000))
    with pytest.raises(DspError):
        receive(white_noise(1.0), cfg)


@pytest.mark.parametrize(
    "duration_s, note",
    [
        (0.5, "too short to scan"),
        (0.01, "signal too short"),
    ],
)
def test_short_recordings_decode_to_nothing(duration_s, note):
    result = receive(white_noise(duration_s))
    assert result.frames == []
    assert result.estimate is None
    assert note in result.diagnostics.notes[0]


def test_short_recording_on_the_default_band():
    result = receive(white_noise(0.01), ReceiverConfig(force_default_band=True))
    assert result.frames == []


@pytest.mark.parametrize("symbol_s", [0.3, 0.5, 1.0])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_payload_identity(symbol_s, seed):
    payload = BitString.random(36, np.random.default_rng(100 + seed))
    received = _transmit(str(payload), SymbolTiming(symbol_s, symbol_s), seed=seed)
    result = receive(received)
    assert bit_errors(payload, result.payload) == 0
    assert result.estimate.t0_s == pytest.approx(symbol_s, rel=0.1)


def test_scan_finds_a_sparse_carrier():
    # the carrier is on for about 6 % of the recording
    received = _transmit("1" + "0" * 35, seed=3)
    assert scan_carrier(stft(received))[0] == 41
    assert str(receive(received).payload) == "1" + "0" * 35
