import hashlib
import random
import struct

import pytest

from iotauth.netsim import build_world
from iotauth.protocol import Variant

ALL_VARIANTS = list(Variant)
WORKING_VARIANTS = [Variant.P21_FIX, Variant.P21_ENH, Variant.P22, Variant.P22_ENH]


def oracle_h(*parts: bytes) -> bytes:
    """Independent h(a||b||...) with explicit struct length prefixes."""
    return hashlib.sha256(b"".join(struct.pack(">I", len(p)) + bytes(p) for p in parts)).digest()


def oracle_xor(*values: bytes) -> bytes:
    out = bytearray(32)
    for v in values:
        for i, byte in enumerate(v):
            out[i] ^= byte
    return bytes(out)


def step_to_m2(world, seed=1):
    rng = random.Random(seed)
    world.ud.login(world.biometric, world.ud.h_t)
    m1 = world.ud.auth_init(rng, world.clock)
    m2 = world.gw.handle_m1(m1, rng, world.clock)
    return rng, m1, m2


@pytest.fixture
def fix_world():
    return build_world(Variant.P21_FIX, 3)


@pytest.fixture
def enh_world():
    return build_world(Variant.P21_ENH, 3)
