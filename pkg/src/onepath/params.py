"""System-wide parameter bundle, the inequalities tying it together, and
key-material generation/IO.

Three constraints connect the ring width l, the feature quantization width t
and the slope range used when thresholds become linear coefficients:

  1. unambiguous signed decode:  A_max = 1 + 2*slope_max*(2^t - 1) < 2^(l-1)
  2. window uniqueness:          2*W + 1 < q, with W = (A_max + B_max)*2^l
  3. recovery feasibility:       sqrt(2*W + 1) within the BSGS op budget

`default_slope_max` picks the largest slope range <= 99 satisfying (1); at
the default l=16, t=10 this caps the slope at 16.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from math import isqrt
from pathlib import Path

from .errors import ParameterError
from .ipfe import IpfeMasterKeys, ipfe_setup
from .primitives import (
    DlogTable,
    GroupParams,
    SymmetricKey,
    generate_symmetric_key,
    group_setup,
    read_key_file,
    write_key_file,
)
from .sharing import RingParams

SLOPE_CAP = 99
BSGS_MAX_OPS = 1 << 26

_GROUP_FILE = "group.bin"
_MPK_FILE = "fe_mpk.bin"
_MSK_FILE = "fe_msk.bin"
_PARAMS_FILE = "params.json"


def default_slope_max(ring_bits: int, feature_bits: int) -> int:
    """Largest slope bound <= 99 keeping A_max inside the signed half-range."""
    limit = ((1 << (ring_bits - 1)) - 2) // (2 * ((1 << feature_bits) - 1))
    if limit < 1:
        raise ParameterError(
            f"no slope satisfies 1 + 2*b*(2^{feature_bits} - 1) < 2^{ring_bits - 1}; "
            "increase ring bits or decrease feature bits"
        )
    return min(SLOPE_CAP, limit)


@dataclass(frozen=True)
class SystemParams:
    group: GroupParams
    ring: RingParams
    feature_bits: int
    slope_max: int

    @property
    def a_max(self) -> int:
        return 1 + 2 * self.slope_max * ((1 << self.feature_bits) - 1)

    @property
    def b_max(self) -> int:
        return 2 * self.slope_max

    @property
    def window(self) -> int:
        return (self.a_max + self.b_max) * self.ring.modulus

    def validate(self) -> None:
        if not 1 <= self.feature_bits <= self.ring.bits:
            raise ParameterError(
                "feature bits must satisfy 1 <= t <= l "
                f"(got t={self.feature_bits}, l={self.ring.bits})"
            )
        if self.slope_max < 1:
            raise ParameterError("slope_max must be >= 1")
        if self.a_max >= self.ring.half:
            raise ParameterError(
                f"signed decode ambiguous: A_max = 1 + 2*{self.slope_max}*"
                f"(2^{self.feature_bits} - 1) = {self.a_max} "
                f">= 2^{self.ring.bits - 1} = {self.ring.half}"
            )
        span = 2 * self.window + 1
        if span >= self.group.q:
            raise ParameterError(
                f"window uniqueness violated: 2*W + 1 = {span} >= q "
                f"with W = (A_max + B_max)*2^l = {self.window}"
            )
        if isqrt(span) + 1 > BSGS_MAX_OPS:
            raise ParameterError(
                f"dlog recovery infeasible: sqrt(2*W + 1) ~ 2^"
                f"{(span.bit_length() + 1) // 2} exceeds the "
                f"2^{BSGS_MAX_OPS.bit_length() - 1} op budget "
                f"(W = (A_max + B_max)*2^{self.ring.bits} = {self.window})"
            )

    def build_dlog_table(self, table_size: int | None = None) -> DlogTable:
        return DlogTable(self.group, self.window, table_size)

    def to_public_dict(self) -> dict:
        return {
            "security_bits": self.group.security_bits,
            "ring_bits": self.ring.bits,
            "feature_bits": self.feature_bits,
            "slope_max": self.slope_max,
            "a_max": self.a_max,
            "b_max": self.b_max,
            "window": self.window,
        }


def derive_params(
    security_bits: int = 128,
    ring_bits: int = 16,
    feature_bits: int = 10,
    slope_max: int | None = None,
) -> SystemParams:
    ring = RingParams(ring_bits)
    if slope_max is None:
        slope_max = default_slope_max(ring_bits, feature_bits)
    params = SystemParams(
        group=group_setup(security_bits),
        ring=ring,
        feature_bits=feature_bits,
        slope_max=slope_max,
    )
    params.validate()
    return params


@dataclass(frozen=True)
class KeyMaterial:
    """Everything the key generation center hands out: FE master keys and
    the three role-tagged symmetric keys."""

    params: SystemParams
    fe: IpfeMasterKeys
    sk1: SymmetricKey
    sk2: SymmetricKey
    sk3: SymmetricKey

    @property
    def mpk(self) -> IpfeMasterKeys:
        return self.fe.public()

    def symmetric(self, role: str) -> SymmetricKey:
        return {"sk1": self.sk1, "sk2": self.sk2, "sk3": self.sk3}[role]


def keygen(params: SystemParams, rng: random.Random | None = None) -> KeyMaterial:
    params.validate()
    rng = rng or random.SystemRandom()
    fe = ipfe_setup(params.group, bound=params.a_max, rng=rng)
    return KeyMaterial(
        params=params,
        fe=fe,
        sk1=generate_symmetric_key("sk1", rng),
        sk2=generate_symmetric_key("sk2", rng),
        sk3=generate_symmetric_key("sk3", rng),
    )


def _pack_ints(*values: int) -> bytes:
    out = bytearray()
    for v in values:
        body = v.to_bytes((v.bit_length() + 7) // 8 or 1, "big")
        out += len(body).to_bytes(4, "big") + body
    return bytes(out)


def _unpack_ints(blob: bytes, count: int) -> list[int]:
    vals, off = [], 0
    for _ in range(count):
        width = int.from_bytes(blob[off : off + 4], "big")
        off += 4
        vals.append(int.from_bytes(blob[off : off + width], "big"))
        off += width
    if off != len(blob):
        raise ParameterError("trailing bytes in parameter blob")
    return vals


def save_key_material(out_dir, material: KeyMaterial) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = material.params.group
    (out / _GROUP_FILE).write_bytes(
        _pack_ints(g.security_bits, g.p, g.q, g.g)
    )
    (out / _MPK_FILE).write_bytes(
        _pack_ints(material.fe.bound, *material.fe.pk)
    )
    (out / _MSK_FILE).write_bytes(_pack_ints(*material.fe.sk))
    write_key_file(out / "sk1.key", material.sk1)
    write_key_file(out / "sk2.key", material.sk2)
    write_key_file(out / "sk3.key", material.sk3)
    (out / _PARAMS_FILE).write_text(
        json.dumps(material.params.to_public_dict(), indent=2) + "\n"
    )


def load_params(key_dir) -> SystemParams:
    pub = json.loads((Path(key_dir) / _PARAMS_FILE).read_text())
    return derive_params(
        security_bits=pub["security_bits"],
        ring_bits=pub["ring_bits"],
        feature_bits=pub["feature_bits"],
        slope_max=pub["slope_max"],
    )


def load_key_material(key_dir, include_secret: bool = True) -> KeyMaterial:
    key_dir = Path(key_dir)
    params = load_params(key_dir)
    sec, p, q, g = _unpack_ints((key_dir / _GROUP_FILE).read_bytes(), 4)
    group = GroupParams(p=p, q=q, g=g, security_bits=sec)
    if (group.p, group.q, group.g) != (
        params.group.p,
        params.group.q,
        params.group.g,
    ):
        raise ParameterError("group file disagrees with derived parameters")
    bound, pk1, pk2 = _unpack_ints((key_dir / _MPK_FILE).read_bytes(), 3)
    sk = None
    if include_secret and (key_dir / _MSK_FILE).exists():
        s1, s2 = _unpack_ints((key_dir / _MSK_FILE).read_bytes(), 2)
        sk = (s1, s2)
    fe = IpfeMasterKeys(group=group, pk=(pk1, pk2), bound=bound, sk=sk)
    return KeyMaterial(
        params=params,
        fe=fe,
        sk1=read_key_file(key_dir / "sk1.key"),
        sk2=read_key_file(key_dir / "sk2.key"),
        sk3=read_key_file(key_dir / "sk3.key"),
    )
