"""Group arithmetic, keyed PRF, authenticated symmetric encryption, and
bounded signed discrete-log recovery.

Everything here is pure or read-only after construction, so values can be
shared freely across concurrent sessions.
"""

from __future__ import annotations

import hashlib
import hmac
import random
import struct
from dataclasses import dataclass
from functools import lru_cache
from math import isqrt

import gmpy2
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import AuthenticationError, OutOfWindowError, ParameterError

_DERIVATION_LABEL = b"onepath-group-v1"

# security bits -> (subgroup order bits, modulus bits), conventional strengths
_GROUP_SIZES = {112: (224, 2048), 128: (256, 3072)}

_PRIMALITY_REPS = 40


def _system_rng() -> random.Random:
    return random.SystemRandom()


def _hash_stream(label: bytes, nbits: int) -> int:
    """Expand `label` into an nbits-wide integer via SHA-256 counter blocks."""
    out = b""
    counter = 0
    while len(out) * 8 < nbits:
        out += hashlib.sha256(label + struct.pack(">I", counter)).digest()
        counter += 1
    value = int.from_bytes(out, "big") >> (len(out) * 8 - nbits)
    return value | (1 << (nbits - 1)) | 1


@dataclass(frozen=True)
class GroupParams:
    """A prime-order subgroup of Z_p*: p prime, q prime dividing p-1,
    g a generator of the order-q subgroup."""

    p: int
    q: int
    g: int
    security_bits: int

    def __post_init__(self):
        if self.q.bit_length() < 2 * self.security_bits:
            raise ParameterError("subgroup order too small for security level")
        if (self.p - 1) % self.q != 0:
            raise ParameterError("q does not divide p-1")
        if self.g in (0, 1) or pow(self.g, self.q, self.p) != 1:
            raise ParameterError("g does not generate an order-q subgroup")

    @property
    def element_bytes(self) -> int:
        return (self.p.bit_length() + 7) // 8

    @property
    def scalar_bytes(self) -> int:
        return (self.q.bit_length() + 7) // 8

    def contains(self, x: int) -> bool:
        """Order-q subgroup membership check."""
        return 0 < x < self.p and pow(gmpy2.mpz(x), self.q, self.p) == 1

    def power(self, base: int, exp: int) -> int:
        return int(gmpy2.powmod(base, exp, self.p))

    def mul(self, a: int, b: int) -> int:
        return int(gmpy2.mpz(a) * b % self.p)

    def inv(self, a: int) -> int:
        return int(gmpy2.invert(a, self.p))

    def random_scalar(self, rng: random.Random) -> int:
        return rng.randrange(1, self.q)


@lru_cache(maxsize=None)
def group_setup(security_bits: int) -> GroupParams:
    """Derive group parameters deterministically from a fixed label.

    The subgroup order q is the first probable prime at or above a
    hash-derived starting point; the modulus p is the first prime of the
    form q*c + 1 with the required bit length.  The derivation is a pure
    function of `security_bits`, so repeated calls (and independent
    processes) agree bit for bit.
    """
    if security_bits not in _GROUP_SIZES:
        raise ParameterError(
            f"unsupported security level {security_bits}; choose one of "
            f"{sorted(_GROUP_SIZES)}"
        )
    q_bits, p_bits = _GROUP_SIZES[security_bits]
    seed = _DERIVATION_LABEL + struct.pack(">H", security_bits)
    q = gmpy2.mpz(_hash_stream(seed + b"|q", q_bits))
    while not gmpy2.is_prime(q, _PRIMALITY_REPS):
        q = gmpy2.next_prime(q)

    c = (gmpy2.mpz(1) << (p_bits - 1)) // q + 1
    if c % 2:
        c += 1
    p = q * c + 1
    while not gmpy2.is_prime(p, _PRIMALITY_REPS):
        c += 2
        p = q * c + 1

    cofactor = (p - 1) // q
    h = gmpy2.mpz(2)
    while True:
        g = gmpy2.powmod(h, cofactor, p)
        if g != 1:
            break
        h += 1
    return GroupParams(p=int(p), q=int(q), g=int(g), security_bits=security_bits)


# ---------------------------------------------------------------------------
# PRF
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrfSeed:
    """Seed for the feature-mask PRF; gamma is the internal-node count the
    seed was sampled for (the seed is gamma bits, rounded up to bytes)."""

    data: bytes
    gamma: int

    def __post_init__(self):
        if self.gamma < 1:
            raise ParameterError("gamma must be >= 1")
        if len(self.data) != (self.gamma + 7) // 8:
            raise ParameterError("seed length does not match declared gamma")


def sample_prf_seed(gamma: int, rng: random.Random | None = None) -> PrfSeed:
    rng = rng or _system_rng()
    return PrfSeed(data=rng.randbytes((gamma + 7) // 8), gamma=gamma)


def prf_eval(seed: PrfSeed, node_index: int, n: int, ring_bits: int) -> list[int]:
    """Keyed-hash PRF in counter mode, emitting n elements of Z_{2^ring_bits}.

    Deterministic in (seed, node_index, n, ring_bits); distinct node indexes
    give uncorrelated vectors.
    """
    if not 1 <= node_index <= seed.gamma:
        raise ParameterError(
            f"node index {node_index} outside [1, {seed.gamma}]"
        )
    if n < 1:
        raise ParameterError("n must be >= 1")
    width = (ring_bits + 7) // 8
    mask = (1 << ring_bits) - 1
    out: list[int] = []
    counter = 0
    buf = b""
    msg_prefix = struct.pack(">IB", node_index, ring_bits)
    while len(out) < n:
        if len(buf) < width:
            block = hmac.new(
                seed.data, msg_prefix + struct.pack(">I", counter), hashlib.sha256
            ).digest()
            counter += 1
            buf += block
        out.append(int.from_bytes(buf[:width], "big") & mask)
        buf = buf[width:]
    return out


# ---------------------------------------------------------------------------
# Authenticated symmetric encryption
# ---------------------------------------------------------------------------

KEY_ROLES = ("sk1", "sk2", "sk3")
_KEY_MAGIC = b"OP1K"
_KEY_VERSION = 1
_NONCE_LEN = 12
_KEY_LEN = 16


@dataclass(frozen=True)
class SymmetricKey:
    """AES-GCM key with a protocol role tag (sk1, sk2 or sk3)."""

    data: bytes
    role: str

    def __post_init__(self):
        if self.role not in KEY_ROLES:
            raise ParameterError(f"unknown key role {self.role!r}")
        if len(self.data) != _KEY_LEN:
            raise ParameterError("key length must be 16 bytes")


def generate_symmetric_key(role: str, rng: random.Random | None = None) -> SymmetricKey:
    rng = rng or _system_rng()
    return SymmetricKey(data=rng.randbytes(_KEY_LEN), role=role)


def ske_encrypt(key: SymmetricKey, plaintext: bytes, rng: random.Random | None = None) -> bytes:
    """Nonce-prefixed AES-GCM. Ciphertexts are valid plaintexts, so layered
    encryption Enc_a(Enc_b(x)) works and peels in reverse key order."""
    rng = rng or _system_rng()
    nonce = rng.randbytes(_NONCE_LEN)
    return nonce + AESGCM(key.data).encrypt(nonce, plaintext, None)


def ske_decrypt(key: SymmetricKey, ciphertext: bytes) -> bytes:
    if len(ciphertext) < _NONCE_LEN + 16:
        raise AuthenticationError(f"ciphertext too short for role {key.role}")
    nonce, body = ciphertext[:_NONCE_LEN], ciphertext[_NONCE_LEN:]
    try:
        return AESGCM(key.data).decrypt(nonce, body, None)
    except InvalidTag as exc:
        raise AuthenticationError(
            f"authentication failed decrypting with role {key.role}"
        ) from exc


def write_key_file(path, key: SymmetricKey) -> None:
    role_byte = KEY_ROLES.index(key.role) + 1
    with open(path, "wb") as fh:
        fh.write(_KEY_MAGIC + bytes([_KEY_VERSION, role_byte]) + key.data)


def read_key_file(path) -> SymmetricKey:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _KEY_MAGIC or blob[4] != _KEY_VERSION:
        raise ParameterError(f"{path}: not a key file")
    role = KEY_ROLES[blob[5] - 1]
    return SymmetricKey(data=blob[6:], role=role)


# ---------------------------------------------------------------------------
# Bounded signed discrete-log recovery
# ---------------------------------------------------------------------------


class DlogTable:
    """Baby-step/giant-step recovery of e from g^e for e in [-window, window].

    The baby table keys on hash(element) (deterministic for ints), so a
    candidate hit is always confirmed against the group element before being
    returned; an in-window exponent is never missed and an out-of-window
    element is reported, never mis-recovered.  Build is a one-time cost, the
    table is read-only afterwards.
    """

    def __init__(self, group: GroupParams, window: int, table_size: int | None = None):
        if window < 1:
            raise ParameterError("window must be >= 1")
        if 2 * window + 1 >= group.q:
            raise ParameterError(
                "window exceeds uniqueness bound: need 2*W+1 < q"
            )
        self.group = group
        self.window = window
        span = 2 * window + 1
        if table_size is None:
            table_size = min(max(64, 8 * (isqrt(span) + 1)), 1 << 19)
        self.stride = table_size
        p = gmpy2.mpz(group.p)
        g = gmpy2.mpz(group.g)
        table: dict[int, int] = {}
        overflow: dict[int, list[int]] = {}
        acc = gmpy2.mpz(1)
        for j in range(table_size):
            k = hash(acc)
            if k in table:
                overflow.setdefault(k, []).append(j)
            else:
                table[k] = j
            acc = acc * g % p
        self._table = table
        self._overflow = overflow
        self._p = p
        self._giant = gmpy2.powmod(gmpy2.invert(g, p), table_size, p)
        self._shift = gmpy2.powmod(g, window, p)
        self._max_giant_steps = span // table_size + 1

    def recover(self, element: int) -> int:
        """Return e with g^e == element and |e| <= window."""
        acc = element * self._shift % self._p  # g^(e + window), exponent in [0, 2W]
        table = self._table
        overflow = self._overflow
        giant = self._giant
        p = self._p
        group = self.group
        for i in range(self._max_giant_steps + 1):
            k = hash(acc)
            j = table.get(k)
            if j is not None:
                candidates = [j] + overflow.get(k, [])
                for cand in candidates:
                    e = i * self.stride + cand - self.window
                    if abs(e) <= self.window and group.power(group.g, e % group.q) == element:
                        return e
            acc = acc * giant % p
        raise OutOfWindowError(
            f"element has no discrete log within [-{self.window}, {self.window}]"
        )


def dlog_recover(table: DlogTable, element: int) -> int:
    return table.recover(element)
