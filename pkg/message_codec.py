# message_codec.py
"""
Wire format of the three voting messages.

Layout (little-endian):
    byte 0      kind (1 request, 2 response, 3 notification)
    bytes 1-2   sender id
    bytes 3-4   session initiator id
    bytes 5-8   session sequence number
    byte 9      scenario
    response:     raw_mean, normalized, weight   (3 x binary32)
    notification: decision (0/1), total_weighted_vote (binary32)

Datagrams never exceed MAX_DATAGRAM_BYTES, the payload cap of the modeled radio.
"""
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

from errors import MalformedMessage

NodeId = int

BROADCAST_ID = 0xFFFF
MAX_NODE_ID = 0xFFFE
MAX_SEQ = 0xFFFFFFFF
MAX_DATAGRAM_BYTES = 250

_HEADER = struct.Struct("<BHHIB")
_RESPONSE = struct.Struct("<fff")
_NOTIFICATION = struct.Struct("<Bf")
_BINARY32 = struct.Struct("<f")
_FLOAT_FIELDS = ("raw_mean", "normalized", "weight", "total_weighted_vote")


class ScenarioId(IntEnum):
    FIRE = 0
    GAS_LEAK = 1
    WATER_LEAK = 2
    EARTHQUAKE = 3
    INTRUSION = 4


class MessageKind(IntEnum):
    VOTE_REQUEST = 1
    VOTE_RESPONSE = 2
    VOTE_NOTIFICATION = 3


@dataclass(frozen=True, order=True)
class SessionId:
    initiator: NodeId
    seq: int

    def __str__(self):
        return f"{self.initiator}:{self.seq}"


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    session: SessionId
    sender: NodeId
    scenario: ScenarioId
    # VoteResponse payload
    raw_mean: Optional[float] = None
    normalized: Optional[float] = None
    weight: Optional[float] = None
    # VoteNotification payload
    decision: Optional[bool] = None
    total_weighted_vote: Optional[float] = None

    def __post_init__(self):
        has_response = None not in (self.raw_mean, self.normalized, self.weight)
        has_notification = None not in (self.decision, self.total_weighted_vote)
        any_response = any(v is not None for v in (self.raw_mean, self.normalized, self.weight))
        any_notification = any(v is not None for v in (self.decision, self.total_weighted_vote))

        if self.kind == MessageKind.VOTE_REQUEST:
            ok = not any_response and not any_notification
        elif self.kind == MessageKind.VOTE_RESPONSE:
            ok = has_response and not any_notification
        else:
            ok = has_notification and not any_response
        if not ok:
            raise ValueError(f"payload does not match message kind {self.kind.name}")

        # payload floats travel as binary32; hold them at that precision
        for name in _FLOAT_FIELDS:
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _to_binary32(value, name))

    @property
    def size(self):
        return len(encode_message(self))


def _to_binary32(value, name):
    try:
        return _BINARY32.unpack(_BINARY32.pack(value))[0]
    except (OverflowError, struct.error):
        raise ValueError(f"{name}={value!r} does not fit a binary32 float") from None


def vote_request(session, sender, scenario):
    return Message(MessageKind.VOTE_REQUEST, session, sender, scenario)


def vote_response(session, sender, scenario, vote):
    return Message(MessageKind.VOTE_RESPONSE, session, sender, scenario,
                   raw_mean=vote.raw_mean, normalized=vote.normalized, weight=vote.weight)


def vote_notification(session, sender, scenario, decision, total):
    return Message(MessageKind.VOTE_NOTIFICATION, session, sender, scenario,
                   decision=bool(decision), total_weighted_vote=float(total))


def encode_message(m: Message) -> bytes:
    data = _HEADER.pack(int(m.kind), m.sender, m.session.initiator, m.session.seq, int(m.scenario))
    if m.kind == MessageKind.VOTE_RESPONSE:
        data += _RESPONSE.pack(m.raw_mean, m.normalized, m.weight)
    elif m.kind == MessageKind.VOTE_NOTIFICATION:
        data += _NOTIFICATION.pack(1 if m.decision else 0, m.total_weighted_vote)
    assert len(data) <= MAX_DATAGRAM_BYTES
    return data


_EXPECTED_LENGTH = {
    MessageKind.VOTE_REQUEST: _HEADER.size,
    MessageKind.VOTE_RESPONSE: _HEADER.size + _RESPONSE.size,
    MessageKind.VOTE_NOTIFICATION: _HEADER.size + _NOTIFICATION.size,
}


def decode_message(b: bytes) -> Message:
    if len(b) < _HEADER.size:
        raise MalformedMessage(f"datagram of {len(b)} bytes is shorter than the header")

    kind_byte, sender, initiator, seq, scenario_byte = _HEADER.unpack_from(b, 0)
    try:
        kind = MessageKind(kind_byte)
    except ValueError:
        raise MalformedMessage(f"unknown kind byte 0x{kind_byte:02x}") from None
    try:
        scenario = ScenarioId(scenario_byte)
    except ValueError:
        raise MalformedMessage(f"unknown scenario byte 0x{scenario_byte:02x}") from None

    if len(b) != _EXPECTED_LENGTH[kind]:
        raise MalformedMessage(f"{kind.name} must be {_EXPECTED_LENGTH[kind]} bytes, got {len(b)}")

    session = SessionId(initiator, seq)
    if kind == MessageKind.VOTE_REQUEST:
        return Message(kind, session, sender, scenario)
    if kind == MessageKind.VOTE_RESPONSE:
        raw_mean, normalized, weight = _RESPONSE.unpack_from(b, _HEADER.size)
        return Message(kind, session, sender, scenario,
                       raw_mean=raw_mean, normalized=normalized, weight=weight)

    decision, total = _NOTIFICATION.unpack_from(b, _HEADER.size)
    if decision not in (0, 1):
        raise MalformedMessage(f"decision byte must be 0 or 1, got {decision}")
    return Message(kind, session, sender, scenario, decision=bool(decision), total_weighted_vote=total)
