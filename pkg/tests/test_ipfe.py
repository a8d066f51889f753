import random

import pytest

from onepath.errors import ParameterError
from onepath.ipfe import (
    IpfeCiphertext,
    ipfe_decrypt,
    ipfe_encrypt,
    ipfe_keyder,
    ipfe_setup,
)
from onepath.primitives import DlogTable, group_setup

BOUND = 1000
KEY_MAX = 256  # key-vector entries used in the random suites


@pytest.fixture(scope="module")
def group():
    return group_setup(112)


@pytest.fixture(scope="module")
def master(group):
    return ipfe_setup(group, bound=BOUND, rng=random.Random(99))


@pytest.fixture(scope="module")
def table(group):
    # window covers |<m, y>| <= 2 * BOUND * KEY_MAX
    return DlogTable(group, window=2 * BOUND * KEY_MAX)


class TestSetup:
    def test_public_keys_match_secrets(self, master, group):
        s1, s2 = master.sk
        assert master.pk == (group.power(group.g, s1), group.power(group.g, s2))

    def test_independent_setups_differ(self, group):
        a = ipfe_setup(group, BOUND, random.Random(1))
        b = ipfe_setup(group, BOUND, random.Random(2))
        assert a.sk != b.sk

    def test_bound_enforced_at_encrypt(self, master):
        with pytest.raises(ParameterError):
            ipfe_encrypt(master, (BOUND + 1, 0), random.Random(0))

    def test_public_copy_cannot_derive(self, master):
        with pytest.raises(ParameterError):
            ipfe_keyder(master.public(), (1, 1))


class TestCorrectness:
    def test_zero_vector(self, master, table, rng):
        ct = ipfe_encrypt(master, (0, 0), rng)
        fk = ipfe_keyder(master, (17, 23))
        assert ipfe_decrypt(master.public(), ct, fk, table) == 0

    def test_textbook_vector(self, master, table, rng):
        # (1, 2) . (3, 4) = 11
        ct = ipfe_encrypt(master, (1, 2), rng)
        fk = ipfe_keyder(master, (3, 4))
        assert ipfe_decrypt(master.public(), ct, fk, table) == 11

    def test_negative_slot(self, master, table, rng):
        ct = ipfe_encrypt(master, (-9, 2), rng)
        fk = ipfe_keyder(master, (1, 6))
        assert ipfe_decrypt(master.public(), ct, fk, table) == 3

    def test_zero_key(self, master, table, rng):
        ct = ipfe_encrypt(master, (123, -456), rng)
        fk = ipfe_keyder(master, (0, 0))
        assert fk.sk_y == 0
        assert ipfe_decrypt(master.public(), ct, fk, table) == 0

    def test_random_pairs_match_integer_oracle(self, master, table, rng):
        for _ in range(100):
            m = (rng.randint(-BOUND, BOUND), rng.randint(-BOUND, BOUND))
            y = (rng.randrange(KEY_MAX), rng.randrange(KEY_MAX))
            ct = ipfe_encrypt(master, m, rng)
            fk = ipfe_keyder(master, y)
            assert ipfe_decrypt(master.public(), ct, fk, table) == m[0] * y[0] + m[1] * y[1]


class TestKeyDer:
    def test_unit_vector_exposes_single_secret(self, master):
        assert ipfe_keyder(master, (1, 0)).sk_y == master.sk[0]

    def test_linearity(self, master, rng):
        q = master.group.q
        for _ in range(100):
            y = (rng.randrange(KEY_MAX), rng.randrange(KEY_MAX))
            z = (rng.randrange(KEY_MAX), rng.randrange(KEY_MAX))
            combined = ipfe_keyder(master, (y[0] + z[0], y[1] + z[1]))
            assert combined.sk_y == (
                ipfe_keyder(master, y).sk_y + ipfe_keyder(master, z).sk_y
            ) % q

    def test_rejects_negative_entries(self, master):
        with pytest.raises(ParameterError):
            ipfe_keyder(master, (-1, 0))


class TestSerialization:
    def test_ciphertext_round_trip(self, master, group, rng):
        ct = ipfe_encrypt(master, (5, -7), rng)
        blob = ct.to_bytes(group)
        back, off = IpfeCiphertext.from_bytes(blob)
        assert off == len(blob) and back == ct

    def test_ciphertext_validation(self, master, group, rng):
        ct = ipfe_encrypt(master, (1, 1), rng)
        ct.validate(group)
        bad = IpfeCiphertext(ct0=group.p - 1, ct=ct.ct)
        if not group.contains(group.p - 1):
            with pytest.raises(ParameterError):
                bad.validate(group)

    def test_functional_key_round_trip(self, master, group):
        from onepath.ipfe import FunctionalKey

        fk = ipfe_keyder(master, (12, 34))
        back, off = FunctionalKey.from_bytes(fk.to_bytes(group))
        assert back == fk
