from .broker import Broker, Session, retransmit_tick
from .client import MqttClient, drain_inflight
from .packets import (
    ConnAck,
    Connect,
    Disconnect,
    Packet,
    PingReq,
    PingResp,
    PubAck,
    Publish,
    SubAck,
    Subscribe,
    decode_packet,
    encode_packet,
    encode_remaining_length,
    match_topic,
)

__all__ = [
    "Broker",
    "Session",
    "retransmit_tick",
    "MqttClient",
    "drain_inflight",
    "Packet",
    "Connect",
    "ConnAck",
    "Publish",
    "PubAck",
    "Subscribe",
    "SubAck",
    "PingReq",
    "PingResp",
    "Disconnect",
    "encode_packet",
    "decode_packet",
    "encode_remaining_length",
    "match_topic",
]
