import pytest
from hypothesis import given
from hypothesis import strategies as st

from iotauth.crypto import Value256
from iotauth.messages import (
    M1,
    M2,
    M3,
    M4,
    M5,
    DecodeError,
    LedgerReply,
    LedgerTx,
    RegChallenge,
    RegIssue,
    RegReq,
    RegResponse,
    decode,
    encode,
    field_offset,
)

v = st.binary(min_size=32, max_size=32).map(Value256)
opt_v = st.none() | v
opt_ts = st.none() | st.integers(0, 2**64 - 1)
vlist = st.lists(v, max_size=4).map(tuple)

messages = st.one_of(
    st.builds(RegReq, v),
    st.builds(RegChallenge, v, vlist),
    st.builds(RegResponse, v, vlist),
    st.builds(RegIssue, v, v),
    st.builds(M1, v, v, opt_ts, opt_v),
    st.builds(M2, v, v, v, v, v, opt_v, opt_ts),
    st.builds(M3, v, v, v, opt_ts),
    st.builds(M4, v, v, v, v, v, v, opt_v, opt_ts),
    st.builds(M5, v, v, opt_ts),
    st.builds(LedgerTx, st.binary(max_size=80), v, v, st.integers(0, 2**64 - 1), v),
    st.builds(LedgerReply, st.booleans()),
)


@given(messages)
def test_roundtrip(msg):
    assert decode(encode(msg)) == msg


def test_baseline_m1_layout():
    a, b = Value256(b"\x11" * 32), Value256(b"\x22" * 32)
    raw = encode(M1(a, b))
    assert raw == b"\x11" + a + b + b"\x00\x00"


def test_enhanced_m1_layout():
    a, b, tag = (Value256(bytes([i]) * 32) for i in (1, 2, 3))
    raw = encode(M1(a, b, ts=258, v1=tag))
    assert raw == b"\x11" + a + b + b"\x01" + (258).to_bytes(8, "big") + b"\x01" + tag


def test_list_layout():
    c = Value256(b"\x05" * 32)
    assert encode(RegChallenge(c, (c, c))) == b"\x02" + c + b"\x00\x00\x00\x02" + c + c


def test_field_offset_points_at_value():
    m2 = M2(*(Value256(bytes([i]) * 32) for i in range(1, 6)))
    raw = encode(m2)
    off = field_offset(m2, "beta_u_new")
    assert raw[off : off + 32] == m2.beta_u_new


@pytest.mark.parametrize(
    "raw",
    [b"", b"\x7f", b"\x01" + bytes(31), b"\x22\x02", b"\x22\x01\x00", b"\x11" + bytes(64) + b"\x05\x00"],
)
def test_decode_rejects_malformed(raw):
    with pytest.raises(DecodeError):
        decode(raw)
