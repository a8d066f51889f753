import random

import pytest

from onepath.params import derive_params, keygen


@pytest.fixture(scope="session")
def params112():
    return derive_params(security_bits=112)


@pytest.fixture(scope="session")
def keys112(params112):
    return keygen(params112, random.Random(0xC0FFEE))


@pytest.fixture(scope="session")
def dlog_table(params112):
    # One shared recovery table for every test that runs the full pipeline.
    return params112.build_dlog_table()


@pytest.fixture()
def rng():
    return random.Random(20240901)
