import random

import pytest
from hypothesis import given, strategies as st

from mcastsim.mgmt_protocol import (MGMT_ADDRESS, DecodeError, EncodeError, GroupJoin,
                                    GroupLeave, NetworkUpdate, SessionEnd, SessionInit,
                                    SessionInitReply, StatsReport, Status, decode, encode)
from strategies import messages, random_message


@given(messages)
def test_roundtrip(msg):
    data = encode(msg)
    assert int.from_bytes(data[:2], "big") == len(data)
    assert data[2] == type(msg).code
    assert decode(data) == msg


@given(st.binary(max_size=80))
def test_decode_never_crashes(data):
    try:
        decode(data)
    except DecodeError as exc:
        assert 0 <= exc.offset <= len(data)


def test_group_leave_layout():
    data = encode(GroupLeave(0x0A000002, 7, 2))
    assert data == bytes.fromhex("000d03" "0a000002" "00000007" "0002")
    assert data[2] == 0x03


def test_session_init_reply_tree_list():
    msg = SessionInitReply(1, 9, ((1, 5_000_000), (2, 5_000_000)))
    data = encode(msg)
    # header, status, session id, count, then (tag, kbps) pairs
    assert data[7] == 0 and data[8:12] == (9).to_bytes(4, "big") and data[12] == 2
    assert data[13:19] == bytes.fromhex("0001") + (5000).to_bytes(4, "big")


@pytest.mark.parametrize("msg", [
    SessionInitReply(1, 1, ()),
    SessionInitReply(1, 1, ((1, 1000),), Status.REJECTED),
    NetworkUpdate(1, 1, ((0, 1000),)),
    NetworkUpdate(1, 1, ((4096, 1000),)),
    NetworkUpdate(1, 1, ((1, 1500),)),
    NetworkUpdate(1, 1, tuple((1, 1000) for _ in range(256))),
    GroupJoin(1, 1, 70000),
    SessionEnd(2**32, 1),
])
def test_encode_refuses_bad_messages(msg):
    with pytest.raises(EncodeError):
        encode(msg)


def test_decode_errors():
    good = encode(SessionEnd(1, 2))
    with pytest.raises(DecodeError, match="short"):
        decode(good[:3])
    with pytest.raises(DecodeError, match="length"):
        decode(good + b"\0")
    with pytest.raises(DecodeError, match="unknown variant"):
        decode(good[:2] + b"\x09" + good[3:])
    with pytest.raises(DecodeError, match="unknown variant"):
        decode(good[:2] + b"\x00" + good[3:])
    reply = bytearray(encode(SessionInitReply(1, 2, ((3, 1000),))))
    reply[7] = 9
    with pytest.raises(DecodeError, match="status"):
        decode(bytes(reply))
    bad_count = bytearray(encode(NetworkUpdate(1, 2, ((3, 1000),))))
    bad_count[11] = 2
    with pytest.raises(DecodeError):
        decode(bytes(bad_count))


def test_every_variant_has_a_distinct_code():
    rng = random.Random(1)
    codes = {}
    for _ in range(500):
        m = random_message(rng)
        codes.setdefault(type(m), encode(m)[2])
    assert sorted(codes.values()) == list(range(1, 9))


def test_management_address_is_not_a_host_or_group():
    from mcastsim.dataplane import address_host
    assert address_host(MGMT_ADDRESS) is None
    assert SessionInit(MGMT_ADDRESS, 1, 1, 0) == decode(encode(SessionInit(MGMT_ADDRESS, 1, 1, 0)))
    assert decode(encode(StatsReport(1, 2, 3, 4, 5))).window == 5
