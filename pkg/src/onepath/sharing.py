"""Two-party additive secret sharing over Z_{2^l} with signed decoding."""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass

from .errors import ParameterError

_SHARE_MAGIC = b"OP1S"

MIN_RING_BITS = 8
MAX_RING_BITS = 32


@dataclass(frozen=True)
class RingParams:
    """Share ring Z_{2^bits}; signed values live in [-2^(bits-1), 2^(bits-1))."""

    bits: int

    def __post_init__(self):
        if not MIN_RING_BITS <= self.bits <= MAX_RING_BITS:
            raise ParameterError(
                f"ring bits must be in [{MIN_RING_BITS}, {MAX_RING_BITS}]"
            )

    @property
    def modulus(self) -> int:
        return 1 << self.bits

    @property
    def half(self) -> int:
        return 1 << (self.bits - 1)

    @property
    def entry_bytes(self) -> int:
        return (self.bits + 7) // 8


@dataclass(frozen=True)
class Share:
    value: int
    party: int

    def __post_init__(self):
        if self.party not in (1, 2):
            raise ParameterError("party tag must be 1 or 2")
        if self.value < 0:
            raise ParameterError("share value must be a ring element")


def split(value: int, ring: RingParams, rng: random.Random) -> tuple[Share, Share]:
    """Split value = s1 + s2 (mod 2^l); the second share is uniform."""
    if not 0 <= value < ring.modulus:
        raise ParameterError("value outside ring")
    r = rng.randrange(ring.modulus)
    return Share((value - r) % ring.modulus, 1), Share(r, 2)


def reconstruct(s1: Share, s2: Share, ring: RingParams) -> int:
    if s1.party == s2.party:
        raise ParameterError("shares carry the same party tag")
    if s1.value >= ring.modulus or s2.value >= ring.modulus:
        raise ParameterError("share outside ring")
    return (s1.value + s2.value) % ring.modulus


def signed_decode(value: int, ring: RingParams) -> int:
    """Centered representative of a ring element."""
    value %= ring.modulus
    return value if value < ring.half else value - ring.modulus


def signed_encode(value: int, ring: RingParams) -> int:
    if not -ring.half <= value < ring.half:
        raise ParameterError("value outside signed range")
    return value % ring.modulus


def dot_mod(vec: list[int], shares: list[int], ring: RingParams) -> int:
    if len(vec) != len(shares):
        raise ParameterError("length mismatch in ring dot product")
    total = 0
    for a, b in zip(vec, shares):
        total += a * b
    return total % ring.modulus


@dataclass
class ShareVector:
    """One party's query bundle: feature shares, the gamma mask-offset
    shares, and the unit share."""

    party: int
    features: list[int]
    offsets: list[int]
    unit: int

    def to_bytes(self, ring: RingParams) -> bytes:
        w = ring.entry_bytes
        head = _SHARE_MAGIC + struct.pack(
            ">BIIB", ring.bits, len(self.features), len(self.offsets), self.party
        )
        body = bytearray()
        for v in self.features + self.offsets + [self.unit]:
            body += v.to_bytes(w, "little")
        return head + bytes(body)

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple["ShareVector", RingParams]:
        if blob[:4] != _SHARE_MAGIC:
            raise ParameterError("not a share-vector blob")
        bits, n, gamma, party = struct.unpack_from(">BIIB", blob, 4)
        ring = RingParams(bits)
        w = ring.entry_bytes
        off = 14
        need = (n + gamma + 1) * w
        if len(blob) != off + need:
            raise ParameterError("share-vector blob has wrong length")
        vals = [
            int.from_bytes(blob[off + i * w : off + (i + 1) * w], "little")
            for i in range(n + gamma + 1)
        ]
        return cls(party, vals[:n], vals[n : n + gamma], vals[-1]), ring
