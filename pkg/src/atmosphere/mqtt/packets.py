"""MQTT 3.1.1 subset wire codec.

Covers CONNECT/CONNACK, PUBLISH (QoS 0/1), PUBACK, SUBSCRIBE/SUBACK,
PINGREQ/PINGRESP and DISCONNECT. QoS 2, retained messages, wills,
UNSUBSCRIBE and persistent sessions are outside the subset and decode to an
:class:`UnsupportedFeatureError`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from ..errors import MqttProtocolError, UnsupportedFeatureError

MAX_REMAINING_LENGTH = 268_435_455
MAX_PACKET_ID = 0xFFFF

# Packet type codes (fixed header bits 7-4).
CONNECT, CONNACK, PUBLISH, PUBACK = 1, 2, 3, 4
SUBSCRIBE, SUBACK, PINGREQ, PINGRESP, DISCONNECT = 8, 9, 12, 13, 14

_UNSUPPORTED_TYPES = {
    5: "PUBREC (QoS 2)",
    6: "PUBREL (QoS 2)",
    7: "PUBCOMP (QoS 2)",
    10: "UNSUBSCRIBE",
    11: "UNSUBACK",
}


@dataclass(frozen=True)
class Connect:
    client_id: str
    keep_alive_s: int = 60


@dataclass(frozen=True)
class ConnAck:
    return_code: int = 0


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes
    qos: int = 0
    packet_id: int | None = None
    dup: bool = False

    def __post_init__(self):
        if self.qos not in (0, 1):
            raise MqttProtocolError(f"qos must be 0 or 1, got {self.qos}")
        if self.qos == 1:
            if self.packet_id is None or not 1 <= self.packet_id <= MAX_PACKET_ID:
                raise MqttProtocolError("qos 1 publish requires packet_id in 1..65535")
        elif self.packet_id is not None:
            raise MqttProtocolError("qos 0 publish must not carry a packet_id")
        validate_topic_name(self.topic)


@dataclass(frozen=True)
class PubAck:
    packet_id: int


@dataclass(frozen=True)
class Subscribe:
    packet_id: int
    filters: tuple = field(default_factory=tuple)  # of (topic_filter, qos)

    def __post_init__(self):
        if not self.filters:
            raise MqttProtocolError("subscribe requires at least one topic filter")
        for topic_filter, qos in self.filters:
            validate_topic_filter(topic_filter)
            if qos not in (0, 1):
                raise MqttProtocolError("requested subscription qos must be 0 or 1")


@dataclass(frozen=True)
class SubAck:
    packet_id: int
    granted: tuple = field(default_factory=tuple)


@dataclass(frozen=True)
class PingReq:
    pass


@dataclass(frozen=True)
class PingResp:
    pass


@dataclass(frozen=True)
class Disconnect:
    pass


Packet = (
    Connect
    | ConnAck
    | Publish
    | PubAck
    | Subscribe
    | SubAck
    | PingReq
    | PingResp
    | Disconnect
)


def validate_topic_name(topic: str) -> None:
    """Topic names are non-empty and carry no wildcard characters."""
    if not topic:
        raise MqttProtocolError("topic name must be non-empty")
    if "+" in topic or "#" in topic:
        raise MqttProtocolError(f"topic name may not contain wildcards: {topic!r}")
    if "\x00" in topic:
        raise MqttProtocolError("topic name may not contain NUL")


def validate_topic_filter(topic_filter: str) -> None:
    """``+`` must occupy a whole level; ``#`` must be the final level."""
    if not topic_filter:
        raise MqttProtocolError("topic filter must be non-empty")
    if "\x00" in topic_filter:
        raise MqttProtocolError("topic filter may not contain NUL")
    levels = topic_filter.split("/")
    for i, level in enumerate(levels):
        if "#" in level:
            if level != "#" or i != len(levels) - 1:
                raise MqttProtocolError(
                    f"'#' must be the final, whole level: {topic_filter!r}"
                )
        elif "+" in level and level != "+":
            raise MqttProtocolError(f"'+' must occupy a whole level: {topic_filter!r}")


def match_topic(topic_filter: str, topic: str) -> bool:
    """MQTT 3.1.1 level-wise filter match.

    ``+`` matches exactly one level, a trailing ``#`` matches the remainder
    including the parent level. Filters starting with a wildcard do not match
    topics starting with ``$``.
    """
    if topic.startswith("$") and topic_filter[:1] in ("+", "#"):
        return False
    flevels = topic_filter.split("/")
    tlevels = topic.split("/")
    for i, flevel in enumerate(flevels):
        if flevel == "#":
            return True
        if i >= len(tlevels):
            return False
        if flevel == "+":
            continue
        if flevel != tlevels[i]:
            return False
    return len(flevels) == len(tlevels)


def encode_remaining_length(n: int) -> bytes:
    """Base-128 varint with continuation bit, 1-4 bytes."""
    if n < 0 or n > MAX_REMAINING_LENGTH:
        raise MqttProtocolError(f"remaining length out of range: {n}")
    out = bytearray()
    while True:
        byte = n % 128
        n //= 128
        if n > 0:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def decode_remaining_length(data: bytes, offset: int) -> tuple[int, int] | None:
    """Return (value, bytes consumed) or None if more bytes are needed."""
    value = 0
    multiplier = 1
    for i in range(4):
        if offset + i >= len(data):
            return None
        byte = data[offset + i]
        value += (byte & 0x7F) * multiplier
        if not byte & 0x80:
            return value, i + 1
        multiplier *= 128
    raise MqttProtocolError("remaining length varint longer than 4 bytes")


def _utf8(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise MqttProtocolError("string too long for length prefix")
    return struct.pack(">H", len(raw)) + raw


def _read_utf8(body: bytes, offset: int) -> tuple[str, int]:
    if offset + 2 > len(body):
        raise MqttProtocolError("truncated string length prefix")
    (length,) = struct.unpack_from(">H", body, offset)
    end = offset + 2 + length
    if end > len(body):
        raise MqttProtocolError("truncated string body")
    try:
        return body[offset + 2 : end].decode("utf-8"), end
    except UnicodeDecodeError:
        raise MqttProtocolError("invalid UTF-8 in string") from None


def _read_u16(body: bytes, offset: int) -> tuple[int, int]:
    if offset + 2 > len(body):
        raise MqttProtocolError("truncated 16-bit field")
    return struct.unpack_from(">H", body, offset)[0], offset + 2


def _fixed(ptype: int, flags: int, body: bytes) -> bytes:
    return bytes([(ptype << 4) | flags]) + encode_remaining_length(len(body)) + body


def encode_packet(packet: Packet) -> bytes:
    if isinstance(packet, Connect):
        if not 0 <= packet.keep_alive_s <= 0xFFFF:
            raise MqttProtocolError("keep_alive out of range")
        # Protocol name MQTT, level 4, clean session always.
        body = _utf8("MQTT") + bytes([4, 0x02]) + struct.pack(">H", packet.keep_alive_s)
        body += _utf8(packet.client_id)
        return _fixed(CONNECT, 0, body)
    if isinstance(packet, ConnAck):
        return _fixed(CONNACK, 0, bytes([0, packet.return_code]))
    if isinstance(packet, Publish):
        flags = (0x08 if packet.dup else 0) | (packet.qos << 1)
        body = _utf8(packet.topic)
        if packet.qos == 1:
            body += struct.pack(">H", packet.packet_id)
        body += packet.payload
        return _fixed(PUBLISH, flags, body)
    if isinstance(packet, PubAck):
        return _fixed(PUBACK, 0, struct.pack(">H", packet.packet_id))
    if isinstance(packet, Subscribe):
        body = struct.pack(">H", packet.packet_id)
        for topic_filter, qos in packet.filters:
            body += _utf8(topic_filter) + bytes([qos])
        return _fixed(SUBSCRIBE, 0x02, body)
    if isinstance(packet, SubAck):
        body = struct.pack(">H", packet.packet_id) + bytes(packet.granted)
        return _fixed(SUBACK, 0, body)
    if isinstance(packet, PingReq):
        return _fixed(PINGREQ, 0, b"")
    if isinstance(packet, PingResp):
        return _fixed(PINGRESP, 0, b"")
    if isinstance(packet, Disconnect):
        return _fixed(DISCONNECT, 0, b"")
    raise MqttProtocolError(f"cannot encode {type(packet).__name__}")


def decode_packet(data: bytes, offset: int = 0) -> tuple[Packet, int] | None:
    """Decode one packet starting at ``offset``.

    Returns ``(packet, bytes consumed)`` or ``None`` when the buffer does not
    yet hold a complete packet.
    """
    if offset >= len(data):
        return None
    first = data[offset]
    ptype = first >> 4
    flags = first & 0x0F
    reml = decode_remaining_length(data, offset + 1)
    if reml is None:
        return None
    length, lenlen = reml
    header = 1 + lenlen
    total = header + length
    if offset + total > len(data):
        return None
    body = data[offset + header : offset + total]

    if ptype in _UNSUPPORTED_TYPES:
        raise UnsupportedFeatureError(_UNSUPPORTED_TYPES[ptype])
    if ptype == CONNECT:
        if flags != 0:
            raise MqttProtocolError("CONNECT flags must be 0")
        name, pos = _read_utf8(body, 0)
        if name != "MQTT":
            raise MqttProtocolError(f"unexpected protocol name {name!r}")
        if pos + 4 > len(body):
            raise MqttProtocolError("truncated CONNECT header")
        level = body[pos]
        if level != 4:
            raise UnsupportedFeatureError(f"protocol level {level}")
        connect_flags = body[pos + 1]
        if connect_flags & 0x04:
            raise UnsupportedFeatureError("will messages")
        if connect_flags & 0xC0:
            raise UnsupportedFeatureError("username/password authentication")
        if not connect_flags & 0x02:
            raise UnsupportedFeatureError("persistent sessions (clean session only)")
        (keep_alive,) = struct.unpack_from(">H", body, pos + 2)
        client_id, pos2 = _read_utf8(body, pos + 4)
        if pos2 != len(body):
            raise MqttProtocolError("trailing bytes in CONNECT")
        return Connect(client_id=client_id, keep_alive_s=keep_alive), total
    if ptype == CONNACK:
        if flags != 0 or len(body) != 2:
            raise MqttProtocolError("malformed CONNACK")
        return ConnAck(return_code=body[1]), total
    if ptype == PUBLISH:
        qos = (flags >> 1) & 0x03
        if qos == 2:
            raise UnsupportedFeatureError("QoS 2 publish")
        if qos == 3:
            raise MqttProtocolError("invalid qos bits in PUBLISH flags")
        dup = bool(flags & 0x08)
        if flags & 0x01:
            raise UnsupportedFeatureError("retained messages")
        topic, pos = _read_utf8(body, 0)
        packet_id = None
        if qos == 1:
            packet_id, pos = _read_u16(body, pos)
            if packet_id == 0:
                raise MqttProtocolError("qos 1 publish requires nonzero packet_id")
        payload = bytes(body[pos:])
        return Publish(topic=topic, payload=payload, qos=qos, packet_id=packet_id, dup=dup), total
    if ptype == PUBACK:
        if flags != 0 or len(body) != 2:
            raise MqttProtocolError("malformed PUBACK")
        return PubAck(packet_id=struct.unpack(">H", body)[0]), total
    if ptype == SUBSCRIBE:
        if flags != 0x02:
            raise MqttProtocolError("SUBSCRIBE flags must be 0b0010")
        packet_id, pos = _read_u16(body, 0)
        filters = []
        while pos < len(body):
            topic_filter, pos = _read_utf8(body, pos)
            if pos >= len(body):
                raise MqttProtocolError("missing qos byte in SUBSCRIBE")
            qos = body[pos]
            pos += 1
            if qos > 1:
                raise UnsupportedFeatureError("QoS 2 subscription")
            filters.append((topic_filter, qos))
        return Subscribe(packet_id=packet_id, filters=tuple(filters)), total
    if ptype == SUBACK:
        if flags != 0:
            raise MqttProtocolError("SUBACK flags must be 0")
        packet_id, pos = _read_u16(body, 0)
        granted = tuple(body[pos:])
        for code in granted:
            if code > 1 and code != 0x80:
                raise MqttProtocolError(f"invalid granted qos {code}")
        return SubAck(packet_id=packet_id, granted=granted), total
    if ptype in (PINGREQ, PINGRESP, DISCONNECT):
        if flags != 0 or body:
            raise MqttProtocolError("malformed control packet")
        cls = {PINGREQ: PingReq, PINGRESP: PingResp, DISCONNECT: Disconnect}[ptype]
        return cls(), total
    raise MqttProtocolError(f"reserved packet type {ptype}")
