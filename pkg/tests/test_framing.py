import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hddmodem.errors import FramingError
from hddmodem.framing import (
    PREAMBLE,
    BitString,
    Frame,
    FrameConfig,
    frame_deserialize,
    frame_encode,
    frame_serialize,
    frames_payload,
)
from hddmodem.testing import param, parametrize

bit_lists = st.lists(st.integers(0, 1), min_size=1, max_size=200)


@parametrize(
    "payload, payload_len, n_frames, serialized_len",
    [
        param(id="exact fit", payload="1" * 36, payload_len=36, n_frames=1, serialized_len=40),
        param(id="short payload", payload="101010", payload_len=36, n_frames=1, serialized_len=40),
        param(id="two frames", payload="01" * 36, payload_len=36, n_frames=2, serialized_len=80),
        param(id="one bit frames", payload="110", payload_len=1, n_frames=3, serialized_len=15),
    ],
)
def test_frame_encode_sizes(payload, payload_len, n_frames, serialized_len):
    frames = frame_encode(BitString(payload), FrameConfig(payload_len))
    assert len(frames) == n_frames
    assert len(frame_serialize(frames)) == serialized_len


def test_short_payload_is_zero_padded():
    (frame,) = frame_encode(BitString("101010"))
    assert str(frame.bits) == "1010" + "101010" + "0" * 30


def test_serialize_all_zero_frame():
    assert str(frame_serialize([Frame(BitString("0" * 36))])) == "1010" + "0" * 36


def test_serialize_starts_with_preamble_then_payload():
    frames = frame_encode(BitString("0101110101" + "0" * 26))
    assert str(frame_serialize(frames)).startswith("10100101110101")


@pytest.mark.parametrize(
    "bits, message",
    [
        ("1100" + "0" * 36, "preamble mismatch at frame 0"),
        ("1010" + "0" * 36 + "0000" + "1" * 36, "preamble mismatch at frame 1"),
        ("1010" + "0" * 37, "truncated frame"),
        ("", "truncated frame"),
    ],
)
def test_frame_deserialize_errors(bits, message):
    with pytest.raises(FramingError) as e:
        frame_deserialize(BitString(bits))
    assert str(e.value).startswith(message)


def test_nothing_to_transmit():
    with pytest.raises(FramingError, match="nothing to transmit"):
        frame_encode(BitString())


@pytest.mark.parametrize("text", ["10a1", "1 0", "2"])
def test_bitstring_rejects_non_bits(text):
    with pytest.raises(FramingError):
        BitString(text)


def test_bitstring_text_and_counts():
    bits = BitString("0011101")
    assert str(bits) == "0011101"
    assert bits.ones == 4
    assert bits.zeros == 3
    assert isinstance(bits[1:3], BitString)
    assert bits[2] == 1


def test_bitstring_bytes_are_msb_first():
    bits = BitString.from_bytes(b"A")
    assert str(bits) == "01000001"
    assert bits.to_bytes() == b"A"


def test_random_bits_follow_the_generator():
    a = BitString.random(50, np.random.default_rng(3))
    b = BitString.random(50, np.random.default_rng(3))
    assert a == b
    assert len(a) == 50


def test_frame_rejects_wrong_preamble():
    with pytest.raises(FramingError):
        Frame(BitString("1"), preamble=BitString("1111"))


@settings(max_examples=1000, deadline=None)
@given(payload=bit_lists, payload_len=st.integers(1, 64))
def test_frame_round_trip(payload, payload_len):
    cfg = FrameConfig(payload_len)
    bits = BitString(payload)
    serialized = frame_serialize(frame_encode(bits, cfg))
    assert len(serialized) % cfg.frame_len == 0
    assert serialized[: len(PREAMBLE)] == PREAMBLE
    assert frames_payload(frame_deserialize(serialized, cfg), len(bits)) == bits


def test_large_file_payload_serializes_in_linear_time():
    payload = BitString.from_bytes(np.random.default_rng(0).bytes(16000))
    started = time.perf_counter()
    frames = frame_encode(payload, FrameConfig())
    serialized = frame_serialize(frames)
    recovered = frames_payload(frame_deserialize(serialized), len(payload))
    assert time.perf_counter() - started < 5.0
    assert len(serialized) == len(frames) * 40 == 3556 * 40
    assert recovered == payload


def test_concat():
    assert BitString.concat([BitString("10"), "01", [1]]) == BitString("10011")
    assert BitString.concat([]) == BitString()
    with pytest.raises(FramingError):
        BitString.concat(["10", [2]])
