import random

import pytest

from onepath.errors import ParameterError
from onepath.params import (
    default_slope_max,
    derive_params,
    keygen,
    load_key_material,
    load_params,
    save_key_material,
)


class TestSlopeBound:
    def test_defaults_cap_at_sixteen(self):
        # At l=16, t=10 the largest slope keeping A_max inside the signed
        # half-range is 16: 1 + 2*16*1023 = 32737 < 32768.
        assert default_slope_max(16, 10) == 16

    def test_wide_ring_allows_full_range(self):
        assert default_slope_max(20, 10) == 99
        assert default_slope_max(16, 3) == 99

    def test_infeasible_combination(self):
        with pytest.raises(ParameterError):
            default_slope_max(8, 8)


class TestValidation:
    def test_defaults_pass(self):
        params = derive_params(security_bits=112)
        params.validate()
        assert params.a_max == 1 + 2 * 16 * 1023
        assert params.b_max == 32
        assert params.window == (params.a_max + params.b_max) * 65536

    def test_decode_ambiguity_named(self):
        with pytest.raises(ParameterError, match="signed decode ambiguous"):
            derive_params(security_bits=112, ring_bits=16, feature_bits=10, slope_max=99)

    def test_l64_refused_with_actionable_message(self):
        # The ring itself caps at 32 bits; the message names the violated limit.
        with pytest.raises(ParameterError, match=r"\[8, 32\]"):
            derive_params(security_bits=112, ring_bits=64)

    def test_bsgs_budget_named(self):
        # Largest ring with full slope range blows the recovery-op budget.
        with pytest.raises(ParameterError, match="op budget"):
            derive_params(security_bits=128, ring_bits=32, feature_bits=16, slope_max=99)

    def test_feature_bits_bounded_by_ring(self):
        with pytest.raises(ParameterError):
            derive_params(security_bits=112, ring_bits=10, feature_bits=11)


class TestKeyMaterialIO:
    def test_round_trip(self, tmp_path, params112):
        material = keygen(params112, random.Random(5))
        save_key_material(tmp_path, material)
        loaded = load_key_material(tmp_path)
        assert loaded.fe.sk == material.fe.sk
        assert loaded.fe.pk == material.fe.pk
        assert loaded.sk1 == material.sk1
        assert loaded.sk3 == material.sk3
        assert loaded.params == material.params

    def test_public_only(self, tmp_path, params112):
        material = keygen(params112, random.Random(5))
        save_key_material(tmp_path, material)
        (tmp_path / "fe_msk.bin").unlink()
        loaded = load_key_material(tmp_path)
        assert loaded.fe.sk is None and loaded.fe.pk == material.fe.pk

    def test_params_file_round_trip(self, tmp_path, params112):
        save_key_material(tmp_path, keygen(params112, random.Random(5)))
        assert load_params(tmp_path) == params112
