"""User-side offline query preparation: split the quantized feature vector
and the unit constant, and precompute the gamma PRF-offset shares that
cancel the provider's feature masks.

Offsets exist for every shuffled index because the user cannot know which d
of them the traversal will touch; this one-shot upload is what lets the user
go offline until the encrypted label arrives.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import ParameterError
from .primitives import PrfSeed, SymmetricKey, prf_eval, ske_decrypt
from .sharing import RingParams, Share, ShareVector, dot_mod, split

SESSION_ID_BYTES = 16


@dataclass
class QueryUpload:
    """One prepared query: a share bundle per server plus the unit-share
    pair destined for the key center, all bound by a session id."""

    session_id: bytes
    cs1: ShareVector
    cs2: ShareVector
    unit_shares: tuple[int, int]


def prepare_query(
    x: list[int],
    seed: PrfSeed,
    ring: RingParams,
    gamma: int,
    rng: random.Random,
    feature_bits: int | None = None,
) -> QueryUpload:
    if seed.gamma != gamma:
        raise ParameterError("seed length does not match gamma")
    n = len(x)
    limit = (1 << feature_bits) if feature_bits is not None else ring.modulus
    for v in x:
        if not 0 <= v < limit:
            raise ParameterError(f"feature value {v} outside [0, {limit})")

    pairs = [split(v, ring, rng) for v in x]
    feat1 = [s1.value for s1, _ in pairs]
    feat2 = [s2.value for _, s2 in pairs]
    unit1, unit2 = split(1, ring, rng)

    offsets1, offsets2 = [], []
    for j in range(1, gamma + 1):
        mask = prf_eval(seed, j, n, ring.bits)
        neg = [(ring.modulus - v) % ring.modulus for v in mask]
        offsets1.append(dot_mod(neg, feat1, ring))
        offsets2.append(dot_mod(neg, feat2, ring))

    return QueryUpload(
        session_id=rng.randbytes(SESSION_ID_BYTES),
        cs1=ShareVector(1, feat1, offsets1, unit1.value),
        cs2=ShareVector(2, feat2, offsets2, unit2.value),
        unit_shares=(unit1.value, unit2.value),
    )


def recover_seed(seed_ct: bytes, sk3: SymmetricKey, gamma: int) -> PrfSeed:
    return PrfSeed(data=ske_decrypt(sk3, seed_ct), gamma=gamma)


def decrypt_result(label_ct: bytes, sk3: SymmetricKey) -> bytes:
    """Peel the provider's label encryption off the delivered leaf."""
    return ske_decrypt(sk3, label_ct)


def reconstruct_unit(upload: QueryUpload, ring: RingParams) -> int:
    return (
        Share(upload.unit_shares[0], 1).value + Share(upload.unit_shares[1], 2).value
    ) % ring.modulus
