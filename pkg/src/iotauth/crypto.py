"""Deterministic primitives shared by every protocol variant.

Everything here is a pure function of its inputs apart from the injected
``random.Random`` and :class:`SimClock`, which the simulation loop owns.
"""

from __future__ import annotations

import hashlib
import random
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Iterator, Sequence

VALUE_BYTES = 32

Bits = tuple[int, ...]


class Value256(bytes):
    """Fixed-width 256-bit opaque value (identity, key, nonce, digest...)."""

    __slots__ = ()

    def __new__(cls, data: bytes = bytes(VALUE_BYTES)) -> "Value256":
        if len(data) != VALUE_BYTES:
            raise ValueError(f"Value256 needs {VALUE_BYTES} bytes, got {len(data)}")
        return super().__new__(cls, data)

    @classmethod
    def random(cls, rng: random.Random) -> "Value256":
        return cls(rng.randbytes(VALUE_BYTES))

    @classmethod
    def zero(cls) -> "Value256":
        return cls(bytes(VALUE_BYTES))

    @classmethod
    def fromhex(cls, text: str) -> "Value256":  # type: ignore[override]
        return cls(bytes.fromhex(text))

    def flip_bit(self, position: int) -> "Value256":
        """Return a copy with bit ``position`` inverted (bit 0 = MSB of byte 0)."""
        if not 0 <= position < VALUE_BYTES * 8:
            raise ValueError(f"bit position {position} out of range")
        raw = bytearray(self)
        raw[position // 8] ^= 0x80 >> (position % 8)
        return Value256(bytes(raw))

    def __xor__(self, other: bytes) -> "Value256":  # type: ignore[override]
        return xor(self, other)

    def __repr__(self) -> str:
        return f"Value256({self.hex()[:16]}...)"


# --------------------------------------------------------------------------
# Operation counting


@dataclass
class OpCounts:
    hash: int = 0
    xor: int = 0
    puf: int = 0

    def __sub__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(self.hash - other.hash, self.xor - other.xor, self.puf - other.puf)

    def as_dict(self) -> dict[str, int]:
        return {"hash": self.hash, "xor": self.xor, "puf": self.puf}


_counters: ContextVar[tuple[OpCounts, ...]] = ContextVar("_counters", default=())


@contextmanager
def count_ops() -> Iterator[OpCounts]:
    """Count hash / xor / PUF evaluations made inside the block.

    Nested blocks each see every operation performed inside them.
    """
    counts = OpCounts()
    token = _counters.set(_counters.get() + (counts,))
    try:
        yield counts
    finally:
        _counters.reset(token)


def _tick(kind: str) -> None:
    for c in _counters.get():
        setattr(c, kind, getattr(c, kind) + 1)


# --------------------------------------------------------------------------
# Hashing and XOR


def hash_bytes(data: bytes) -> Value256:
    """Plain SHA-256 of a single byte string, h(x)."""
    _tick("hash")
    return Value256(hashlib.sha256(data).digest())


def concat(*parts: bytes) -> bytes:
    """Length-prefixed concatenation: each operand preceded by a 4-byte BE length."""
    out = bytearray()
    for part in parts:
        out += len(part).to_bytes(4, "big")
        out += part
    return bytes(out)


def hash_concat(*parts: bytes) -> Value256:
    """h(a || b || ...) over the unambiguous length-prefixed encoding."""
    _tick("hash")
    return Value256(hashlib.sha256(concat(*parts)).digest())


def xor(a: bytes, b: bytes) -> Value256:
    if len(a) != len(b):
        raise ValueError(f"xor width mismatch: {len(a)} vs {len(b)}")
    _tick("xor")
    n = int.from_bytes(a, "big") ^ int.from_bytes(b, "big")
    return Value256(n.to_bytes(len(a), "big"))


def u64(n: int) -> bytes:
    return n.to_bytes(8, "big")


# --------------------------------------------------------------------------
# PUF


@dataclass(frozen=True)
class PufDevice:
    """Noiseless PUF modelled as a keyed hash over a per-device secret."""

    device_secret: Value256 = field(repr=False)

    def eval(self, challenge: Value256) -> Value256:
        return puf_eval(self, challenge)


def puf_eval(device: PufDevice, challenge: Value256) -> Value256:
    _tick("puf")
    # raw sha256 so PUF evaluations are not also counted as protocol hashes
    digest = hashlib.sha256(concat(device.device_secret, challenge)).digest()
    return Value256(digest)


# --------------------------------------------------------------------------
# Bit strings and the fuzzy extractor


@dataclass(frozen=True)
class FuzzyParams:
    k: int = 32
    r: int = 5

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("fuzzy k must be >= 1")
        if self.r < 3 or self.r % 2 == 0:
            raise ValueError("fuzzy r must be odd and >= 3")

    @property
    def t(self) -> int:
        return (self.r - 1) // 2

    @property
    def length(self) -> int:
        return self.k * self.r


@dataclass(frozen=True)
class FuzzySketch:
    s1: Bits
    s2: Bits


def bits_from_str(text: str) -> Bits:
    return tuple(int(c) for c in text)


def bits_to_str(bits: Sequence[int]) -> str:
    return "".join(str(b) for b in bits)


def pack_bits(bits: Sequence[int]) -> bytes:
    """4-byte BE bit count followed by the bits packed MSB-first."""
    out = bytearray((len(bits) + 7) // 8)
    for i, bit in enumerate(bits):
        if bit:
            out[i // 8] |= 0x80 >> (i % 8)
    return len(bits).to_bytes(4, "big") + bytes(out)


def unpack_bits(data: bytes) -> tuple[Bits, int]:
    """Inverse of :func:`pack_bits`; returns (bits, bytes consumed)."""
    n = int.from_bytes(data[:4], "big")
    nbytes = (n + 7) // 8
    body = data[4 : 4 + nbytes]
    if len(body) != nbytes:
        raise ValueError("truncated bit string")
    bits = tuple((body[i // 8] >> (7 - i % 8)) & 1 for i in range(n))
    return bits, 4 + nbytes


def xor_bits(a: Sequence[int], b: Sequence[int]) -> Bits:
    if len(a) != len(b):
        raise ValueError(f"bit string length mismatch: {len(a)} vs {len(b)}")
    return tuple(x ^ y for x, y in zip(a, b))


def repetition_encode(bits: Sequence[int], r: int) -> Bits:
    return tuple(b for b in bits for _ in range(r))


def majority_decode(bits: Sequence[int], r: int) -> Bits:
    if len(bits) % r:
        raise ValueError("length is not a multiple of the repetition factor")
    return tuple(int(sum(bits[i : i + r]) * 2 > r) for i in range(0, len(bits), r))


def random_biometric(p: FuzzyParams, rng: random.Random) -> Bits:
    return tuple(rng.getrandbits(1) for _ in range(p.length))


def fe_gen(b: Sequence[int], p: FuzzyParams, rng: random.Random) -> FuzzySketch:
    """Code-offset Gen: fresh secret s1, helper s2 = encode(s1) xor b."""
    if len(b) != p.length:
        raise ValueError(f"biometric has {len(b)} bits, expected {p.length}")
    s1 = tuple(rng.getrandbits(1) for _ in range(p.k))
    return FuzzySketch(s1=s1, s2=xor_bits(repetition_encode(s1, p.r), b))


def fe_rep(b_prime: Sequence[int], s2: Sequence[int], p: FuzzyParams) -> Bits:
    """Code-offset Rep: majority-decode (b' xor s2) block by block.

    Returns the original s1 whenever no r-bit block of the noise carries
    more than t flips; otherwise some bit comes back wrong.
    """
    if len(b_prime) != p.length or len(s2) != p.length:
        raise ValueError("biometric / helper length does not match k*r")
    return majority_decode(xor_bits(b_prime, s2), p.r)


def perturb_biometric(b: Sequence[int], flips: int, rng: random.Random) -> Bits:
    """Invert exactly ``flips`` distinct, uniformly chosen positions."""
    if not 0 <= flips <= len(b):
        raise ValueError(f"cannot flip {flips} of {len(b)} bits")
    out = list(b)
    for i in rng.sample(range(len(b)), flips):
        out[i] ^= 1
    return tuple(out)


def perturb_per_block(
    b: Sequence[int], p: FuzzyParams, max_per_block: int, rng: random.Random
) -> Bits:
    """Noise with an independent 0..max_per_block flips inside every r-bit block."""
    out = list(b)
    for block in range(p.k):
        n = rng.randint(0, max_per_block)
        for i in rng.sample(range(p.r), n):
            out[block * p.r + i] ^= 1
    return tuple(out)


# --------------------------------------------------------------------------
# Simulated clock


@dataclass
class SimClock:
    now_ms: int = 0

    def now(self) -> int:
        return self.now_ms

    def advance(self, ms: int) -> int:
        if ms < 0:
            raise ValueError("clock cannot run backwards")
        self.now_ms += ms
        return self.now_ms
