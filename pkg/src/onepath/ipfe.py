"""Inner-product functional encryption for 2-slot vectors over a
discrete-log group.

A ciphertext hides a signed coefficient pair; a functional key for a
nonnegative vector y lets its holder learn exactly <message, y> (as a signed
integer, via bounded dlog recovery) and nothing else.  Key derivation is
linear: sk_{y+y'} = sk_y + sk_{y'} (mod q).
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass

import gmpy2

from .errors import ParameterError
from .primitives import DlogTable, GroupParams

SLOTS = 2
_FMT_VERSION = 1


def _pack_int(value: int, width: int) -> bytes:
    return struct.pack(">H", width) + value.to_bytes(width, "big")


def _unpack_int(blob: bytes, off: int) -> tuple[int, int]:
    (width,) = struct.unpack_from(">H", blob, off)
    off += 2
    return int.from_bytes(blob[off : off + width], "big"), off + width


@dataclass(frozen=True)
class IpfeMasterKeys:
    """mpk = (group, pk_1, pk_2); msk = (s_1, s_2) with pk_i = g^{s_i}.
    `bound` caps the absolute value of each message slot."""

    group: GroupParams
    pk: tuple[int, int]
    bound: int
    sk: tuple[int, int] | None = None

    def public(self) -> "IpfeMasterKeys":
        return IpfeMasterKeys(self.group, self.pk, self.bound, None)

    @property
    def has_secret(self) -> bool:
        return self.sk is not None


@dataclass(frozen=True)
class IpfeCiphertext:
    ct0: int
    ct: tuple[int, int]

    def to_bytes(self, group: GroupParams) -> bytes:
        w = group.element_bytes
        return bytes([_FMT_VERSION]) + b"".join(
            _pack_int(v, w) for v in (self.ct0, *self.ct)
        )

    @classmethod
    def from_bytes(cls, blob: bytes, off: int = 0) -> tuple["IpfeCiphertext", int]:
        if blob[off] != _FMT_VERSION:
            raise ParameterError("unsupported ciphertext format version")
        off += 1
        ct0, off = _unpack_int(blob, off)
        c1, off = _unpack_int(blob, off)
        c2, off = _unpack_int(blob, off)
        return cls(ct0, (c1, c2)), off

    def validate(self, group: GroupParams) -> None:
        for v in (self.ct0, *self.ct):
            if not group.contains(v):
                raise ParameterError("ciphertext element outside subgroup")


@dataclass(frozen=True)
class FunctionalKey:
    """Derived key bound to its vector y (the decryptor needs y to
    exponentiate the ciphertext slots)."""

    y: tuple[int, int]
    sk_y: int

    def to_bytes(self, group: GroupParams) -> bytes:
        return struct.pack(">II", *self.y) + _pack_int(self.sk_y, group.scalar_bytes)

    @classmethod
    def from_bytes(cls, blob: bytes, off: int = 0) -> tuple["FunctionalKey", int]:
        y1, y2 = struct.unpack_from(">II", blob, off)
        sk_y, off = _unpack_int(blob, off + 8)
        return cls((y1, y2), sk_y), off


def ipfe_setup(group: GroupParams, bound: int, rng: random.Random | None = None) -> IpfeMasterKeys:
    if bound < 1:
        raise ParameterError("message bound must be >= 1")
    rng = rng or random.SystemRandom()
    s1 = group.random_scalar(rng)
    s2 = group.random_scalar(rng)
    pk = (group.power(group.g, s1), group.power(group.g, s2))
    return IpfeMasterKeys(group=group, pk=pk, bound=bound, sk=(s1, s2))


def ipfe_encrypt(
    mpk: IpfeMasterKeys, message: tuple[int, int], rng: random.Random | None = None
) -> IpfeCiphertext:
    """Encrypt a signed 2-slot message; negative slots map to q - |m|."""
    if len(message) != SLOTS:
        raise ParameterError("message must have exactly 2 slots")
    for m in message:
        if abs(m) > mpk.bound:
            raise ParameterError(
                f"coefficient {m} exceeds configured bound {mpk.bound}"
            )
    rng = rng or random.SystemRandom()
    group = mpk.group
    r = group.random_scalar(rng)
    ct0 = group.power(group.g, r)
    cts = []
    for m, pk_i in zip(message, mpk.pk):
        gm = group.power(group.g, m % group.q)
        cts.append(group.mul(gm, group.power(pk_i, r)))
    return IpfeCiphertext(ct0=ct0, ct=(cts[0], cts[1]))


def ipfe_keyder(msk: IpfeMasterKeys, y: tuple[int, int]) -> FunctionalKey:
    if not msk.has_secret:
        raise ParameterError("key derivation requires the master secret key")
    if len(y) != SLOTS or any(v < 0 for v in y):
        raise ParameterError("key vector must be 2 nonnegative ring elements")
    s1, s2 = msk.sk
    sk_y = (y[0] * s1 + y[1] * s2) % msk.group.q
    return FunctionalKey(y=(y[0], y[1]), sk_y=sk_y)


def ipfe_decrypt(
    mpk: IpfeMasterKeys, ct: IpfeCiphertext, fk: FunctionalKey, table: DlogTable
) -> int:
    """Recover <message, y> exactly as a signed integer."""
    group = mpk.group
    p = gmpy2.mpz(group.p)
    num = gmpy2.powmod(ct.ct[0], fk.y[0], p) * gmpy2.powmod(ct.ct[1], fk.y[1], p) % p
    den = gmpy2.powmod(ct.ct0, fk.sk_y, p)
    val = int(num * gmpy2.invert(den, p) % p)
    return table.recover(val)
