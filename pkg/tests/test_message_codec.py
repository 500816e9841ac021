import struct

import pytest
from hypothesis import given, settings, strategies as st

from errors import MalformedMessage
from message_codec import (
    MAX_DATAGRAM_BYTES,
    MAX_NODE_ID,
    MAX_SEQ,
    Message,
    MessageKind,
    ScenarioId,
    SessionId,
    decode_message,
    encode_message,
    vote_notification,
    vote_request,
    vote_response,
)
from voting_protocol import Vote, compute_vote


def test_vote_request_layout():
    m = vote_request(SessionId(1, 7), 1, ScenarioId.FIRE)
    data = encode_message(m)
    assert len(data) == 10
    assert data[0] == 0x01
    assert data[9] == 0x00
    assert data[1:3] == (1).to_bytes(2, "little")
    assert data[5:9] == (7).to_bytes(4, "little")


def test_vote_response_ends_with_weight():
    m = vote_response(SessionId(1, 7), 2, ScenarioId.FIRE, Vote(0.0, 0.0, 1.0))
    data = encode_message(m)
    assert len(data) == 22
    assert data[-4:] == bytes.fromhex("0000803f")


def test_notification_layout():
    m = vote_notification(SessionId(3, 1), 3, ScenarioId.WATER_LEAK, True, 2.5)
    data = encode_message(m)
    assert len(data) == 15
    assert data[10] == 1
    assert struct.unpack("<f", data[11:])[0] == 2.5


def test_decode_inverts_request():
    m = vote_request(SessionId(1, 7), 1, ScenarioId.FIRE)
    assert decode_message(encode_message(m)) == m


@pytest.mark.parametrize("data", [
    b"",
    bytes([0x09]) + bytes(9),
    bytes([0x01, 0, 0, 0, 0, 0, 0, 0, 0, 0x07]),
    bytes([0x02]) + bytes(9),
    encode_message(vote_request(SessionId(1, 1), 1, ScenarioId.FIRE)) + b"\x00",
])
def test_decode_rejects_malformed(data):
    with pytest.raises(MalformedMessage):
        decode_message(data)


def test_notification_decision_byte_must_be_boolean():
    data = bytearray(encode_message(vote_notification(SessionId(1, 1), 1, ScenarioId.FIRE, False, 0.0)))
    data[10] = 2
    with pytest.raises(MalformedMessage):
        decode_message(bytes(data))


def test_payload_must_match_kind():
    with pytest.raises(ValueError):
        Message(MessageKind.VOTE_REQUEST, SessionId(1, 1), 1, ScenarioId.FIRE, weight=1.0)
    with pytest.raises(ValueError):
        Message(MessageKind.VOTE_RESPONSE, SessionId(1, 1), 1, ScenarioId.FIRE)


def test_measured_vote_survives_the_wire():
    vote = compute_vote([400.0, 420.0, 441.0], lambda s: sum(s) / len(s) >= 410.0, 1.0)
    m = vote_response(SessionId(3, 2), 3, ScenarioId.GAS_LEAK, vote)
    assert m.raw_mean == pytest.approx(vote.raw_mean, rel=1e-7)
    assert m.raw_mean == struct.unpack("<f", struct.pack("<f", vote.raw_mean))[0]
    assert decode_message(encode_message(m)) == m


def test_payload_beyond_binary32_range():
    with pytest.raises(ValueError):
        vote_notification(SessionId(1, 1), 1, ScenarioId.FIRE, True, 1e39)


finite = st.floats(min_value=-3.0e38, max_value=3.0e38)
node_ids = st.integers(0, MAX_NODE_ID)
sessions = st.builds(SessionId, node_ids, st.integers(0, MAX_SEQ))
scenarios = st.sampled_from(list(ScenarioId))

messages = st.one_of(
    st.builds(vote_request, sessions, node_ids, scenarios),
    st.builds(lambda s, n, sc, raw, norm, w: vote_response(s, n, sc, Vote(raw, norm, w)),
              sessions, node_ids, scenarios, finite, st.sampled_from([0.0, 1.0]),
              st.floats(0, 1e6)),
    st.builds(vote_notification, sessions, node_ids, scenarios, st.booleans(), finite),
)


@settings(max_examples=100_000, deadline=None)
@given(messages)
def test_round_trip(m):
    data = encode_message(m)
    assert len(data) <= MAX_DATAGRAM_BYTES
    assert decode_message(data) == m


@given(st.binary(max_size=9))
def test_short_datagrams_never_decode(data):
    with pytest.raises(MalformedMessage):
        decode_message(data)


@given(st.binary(max_size=40))
def test_arbitrary_bytes_decode_or_raise_malformed(data):
    try:
        m = decode_message(data)
    except MalformedMessage:
        return
    assert m.kind in MessageKind
    assert len(encode_message(m)) == len(data)
