import random

import pytest

from onepath.errors import ParameterError
from onepath.sharing import (
    RingParams,
    Share,
    ShareVector,
    dot_mod,
    reconstruct,
    signed_decode,
    signed_encode,
    split,
)

RING16 = RingParams(16)


class TestSplitReconstruct:
    def test_split_zero(self, rng):
        s1, s2 = split(0, RING16, rng)
        assert reconstruct(s1, s2, RING16) == 0

    def test_known_example(self):
        ring = RingParams(8)  # smallest ring; the l=4 example scaled up
        value, r = 10, 3
        s1 = Share((value - r) % ring.modulus, 1)
        s2 = Share(r, 2)
        assert reconstruct(s1, s2, ring) == 10

    def test_wraparound(self):
        ring = RingParams(12)
        assert reconstruct(Share(ring.modulus - 1, 1), Share(1, 2), ring) == 0

    def test_exhaustive_small_ring(self):
        ring = RingParams(8)
        rng = random.Random(3)
        for value in range(ring.modulus):
            s1, s2 = split(value, ring, rng)
            assert reconstruct(s1, s2, ring) == value

    def test_randomized_large_ring(self, rng):
        ring = RingParams(32)
        for _ in range(2000):
            value = rng.randrange(ring.modulus)
            s1, s2 = split(value, ring, rng)
            assert reconstruct(s1, s2, ring) == (s1.value + s2.value) % ring.modulus == value

    def test_second_share_uniform(self):
        # chi-square over all 256 buckets of an 8-bit ring
        from scipy.stats import chi2

        ring = RingParams(8)
        rng = random.Random(11)
        counts = [0] * ring.modulus
        trials = 10_000
        for _ in range(trials):
            _, s2 = split(rng.randrange(ring.modulus), ring, rng)
            counts[s2.value] += 1
        expected = trials / ring.modulus
        stat = sum((c - expected) ** 2 / expected for c in counts)
        assert stat < chi2.isf(0.001, ring.modulus - 1)

    def test_party_tag_mismatch(self, rng):
        s1, s2 = split(5, RING16, rng)
        with pytest.raises(ParameterError):
            reconstruct(s1, Share(s1.value, 1), RING16)

    def test_linearity(self, rng):
        for _ in range(200):
            a, b = rng.randrange(RING16.modulus), rng.randrange(RING16.modulus)
            sa1, sa2 = split(a, RING16, rng)
            sb1, sb2 = split(b, RING16, rng)
            summed = reconstruct(
                Share((sa1.value + sb1.value) % RING16.modulus, 1),
                Share((sa2.value + sb2.value) % RING16.modulus, 2),
                RING16,
            )
            assert summed == (a + b) % RING16.modulus


class TestSignedCodec:
    def test_zero(self):
        assert signed_decode(0, RING16) == 0

    def test_minus_one(self):
        assert signed_decode(RING16.modulus - 1, RING16) == -1

    def test_inverse_mapping(self):
        for k in range(-RING16.half, RING16.half):
            assert signed_decode(signed_encode(k, RING16), RING16) == k

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            signed_encode(RING16.half, RING16)


class TestDotMod:
    def test_zero_vector(self):
        assert dot_mod([0, 0, 0], [9, 9, 9], RING16) == 0

    def test_one_hot_selects(self):
        assert dot_mod([0, 0, 1, 0], [5, 6, 7, 8], RING16) == 7

    def test_matches_big_integer_oracle(self, rng):
        for _ in range(300):
            n = rng.randint(1, 20)
            a = [rng.randrange(RING16.modulus) for _ in range(n)]
            b = [rng.randrange(RING16.modulus) for _ in range(n)]
            oracle = sum(x * y for x, y in zip(a, b)) % RING16.modulus
            assert dot_mod(a, b, RING16) == oracle

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            dot_mod([1, 2], [1], RING16)


class TestRingParams:
    @pytest.mark.parametrize("bits", [7, 33])
    def test_width_limits(self, bits):
        with pytest.raises(ParameterError):
            RingParams(bits)


class TestShareVectorFormat:
    def test_round_trip(self, rng):
        sv = ShareVector(
            party=2,
            features=[rng.randrange(RING16.modulus) for _ in range(5)],
            offsets=[rng.randrange(RING16.modulus) for _ in range(7)],
            unit=rng.randrange(RING16.modulus),
        )
        blob = sv.to_bytes(RING16)
        back, ring = ShareVector.from_bytes(blob)
        assert back == sv and ring.bits == 16

    def test_rejects_truncated(self, rng):
        sv = ShareVector(1, [1, 2], [3], 4)
        blob = sv.to_bytes(RING16)
        with pytest.raises(ParameterError):
            ShareVector.from_bytes(blob[:-1])
