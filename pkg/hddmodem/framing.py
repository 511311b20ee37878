"""Frames: a fixed 1010 preamble followed by a fixed-length payload."""

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import FramingError


class BitString(tuple):
    """An immutable sequence of 0/1 ints that prints as ASCII '0'/'1' text"""

    def __new__(cls, bits: Iterable = ()):
        if isinstance(bits, str):
            return cls.from_text(bits)
        values = tuple(int(b) for b in bits)
        if any(b not in (0, 1) for b in values):
            raise FramingError(f"not a bit string: {values!r}")
        return super().__new__(cls, values)

    @classmethod
    def from_text(cls, text: str) -> "BitString":
        text = text.strip()
        if set(text) - {"0", "1"}:
            raise FramingError(f"bit strings may only contain '0' and '1', got {text!r}")
        return super().__new__(cls, tuple(int(c) for c in text))

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitString":
        """MSB first, 8 bits per byte"""
        return cls(np.unpackbits(np.frombuffer(data, dtype=np.uint8)))

    @classmethod
    def concat(cls, parts: Iterable[Iterable]) -> "BitString":
        """Join many bit strings with a single validation pass"""
        return cls(itertools.chain.from_iterable(parts))

    @classmethod
    def random(cls, n_bits: int, rng: np.random.Generator) -> "BitString":
        return cls(rng.integers(0, 2, size=n_bits))

    def to_bytes(self) -> bytes:
        """Inverse of from_bytes. Trailing bits that don't fill a byte are zero-padded."""
        return np.packbits(np.array(self, dtype=np.uint8)).tobytes()

    @property
    def ones(self) -> int:
        return sum(self)

    @property
    def zeros(self) -> int:
        return len(self) - self.ones

    def __str__(self) -> str:
        return "".join(str(b) for b in self)

    def __repr__(self) -> str:
        return f"BitString({str(self)!r})"

    def __add__(self, other) -> "BitString":
        return BitString(tuple(self) + tuple(BitString(other)))

    def __getitem__(self, item):
        result = super().__getitem__(item)
        return BitString(result) if isinstance(item, slice) else result


PREAMBLE = BitString("1010")


@dataclass(frozen=True)
class FrameConfig:
    payload_len: int = 36

    def __post_init__(self):
        if self.payload_len < 1:
            raise FramingError(f"payload_len must be >= 1, got {self.payload_len}")

    @property
    def frame_len(self) -> int:
        return len(PREAMBLE) + self.payload_len


@dataclass(frozen=True)
class Frame:
    payload: BitString
    preamble: BitString = PREAMBLE

    def __post_init__(self):
        if self.preamble != PREAMBLE:
            raise FramingError(f"preamble must be {PREAMBLE}, got {self.preamble}")

    @property
    def bits(self) -> BitString:
        return self.preamble + self.payload


def frame_encode(payload: BitString, cfg: FrameConfig = FrameConfig()) -> list[Frame]:
    """
    Split the payload into chunks of cfg.payload_len bits. The last chunk is zero-padded on the
    right; the original length has to travel out of band (see frames_payload).
    """
    payload = BitString(payload)
    if not payload:
        raise FramingError("nothing to transmit")
    n_frames = math.ceil(len(payload) / cfg.payload_len)
    padded = payload + BitString([0] * (n_frames * cfg.payload_len - len(payload)))
    return [
        Frame(payload=padded[i * cfg.payload_len : (i + 1) * cfg.payload_len])
        for i in range(n_frames)
    ]


def frame_serialize(frames: Sequence[Frame]) -> BitString:
    if not frames:
        raise FramingError("nothing to serialize")
    return BitString.concat(frame.bits for frame in frames)


def frame_deserialize(bits: BitString, cfg: FrameConfig = FrameConfig()) -> list[Frame]:
    bits = BitString(bits)
    if not bits or len(bits) % cfg.frame_len:
        raise FramingError(
            f"truncated frame: {len(bits)} bits is not a multiple of {cfg.frame_len}"
        )
    frames = []
    for i in range(len(bits) // cfg.frame_len):
        chunk = bits[i * cfg.frame_len : (i + 1) * cfg.frame_len]
        if chunk[: len(PREAMBLE)] != PREAMBLE:
            raise FramingError(f"preamble mismatch at frame {i}")
        frames.append(Frame(payload=chunk[len(PREAMBLE) :]))
    return frames


def frames_payload(frames: Sequence[Frame], n_bits: int) -> BitString:
    """Concatenate the frame payloads and drop the padding"""
    return BitString.concat(frame.payload for frame in frames)[:n_bits]
