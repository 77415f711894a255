"""Broker core: sessions, subscription matching, and QoS 0/1 delivery.

The core is one logical state machine; transports feed it through
:meth:`Broker.attach`, and every mutation runs under a single reentrant lock
(the serialized command path). Node-local consumers (the fog's CEP feed)
attach through :meth:`Broker.subscribe_internal` / :meth:`publish_internal`,
which bypass the wire entirely and therefore never appear in packet counters.

Delivery ordering: per-connection FIFO holds for QoS 0; QoS 1 re-deliveries
(dup re-sends after a timeout) may arrive out of order relative to newer
publishes.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from ..errors import AtmosphereError, MqttProtocolError
from ..transport import Endpoint
from .packets import (
    ConnAck,
    Connect,
    Disconnect,
    MAX_PACKET_ID,
    Packet,
    PingReq,
    PingResp,
    PubAck,
    Publish,
    SubAck,
    Subscribe,
    decode_packet,
    encode_packet,
    match_topic,
)

logger = logging.getLogger(__name__)

DEFAULT_RETRY_TIMEOUT_MS = 1000
DEFAULT_MAX_RETRIES = 5


def wall_clock_ms() -> int:
    return int(time.monotonic() * 1000)


@dataclass
class InflightEntry:
    publish: Publish
    last_sent_at: int
    retry_count: int = 0


@dataclass
class Session:
    """Per-connection state; clean-session always, nothing survives a drop."""

    client_id: str = ""
    endpoint: Endpoint | None = None
    connected: bool = False
    subscriptions: list = field(default_factory=list)  # of (topic_filter, qos)
    inflight: dict = field(default_factory=dict)  # packet_id -> InflightEntry
    seen_pub_ids: set = field(default_factory=set)  # incoming qos1 dedupe
    next_packet_id: int = 1
    buffer: bytearray = field(default_factory=bytearray)

    def allocate_packet_id(self) -> int:
        for _ in range(MAX_PACKET_ID):
            pid = self.next_packet_id
            self.next_packet_id = pid % MAX_PACKET_ID + 1
            if pid not in self.inflight:
                return pid
        raise MqttProtocolError("no free packet ids (65535 in flight)")


def retransmit_tick(
    session: Session,
    now_ms: int,
    retry_timeout_ms: int = DEFAULT_RETRY_TIMEOUT_MS,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> tuple[list[Publish], bool]:
    """Collect due re-sends for one session.

    Returns ``(publishes to re-send with dup set, drop_session)``; the session
    is dropped once an entry due for re-send has exhausted ``max_retries``.
    """
    resends: list[Publish] = []
    for entry in session.inflight.values():
        if now_ms - entry.last_sent_at < retry_timeout_ms:
            continue
        if entry.retry_count >= max_retries:
            return [], True
        entry.retry_count += 1
        entry.last_sent_at = now_ms
        entry.publish = Publish(
            topic=entry.publish.topic,
            payload=entry.publish.payload,
            qos=1,
            packet_id=entry.publish.packet_id,
            dup=True,
        )
        resends.append(entry.publish)
    return resends, False


class Broker:
    """MQTT-subset broker over pluggable transports."""

    def __init__(
        self,
        clock: Callable[[], int] = wall_clock_ms,
        retry_timeout_ms: int = DEFAULT_RETRY_TIMEOUT_MS,
        max_retries: int = DEFAULT_MAX_RETRIES,
        connect_hook: Callable[[str], bool] | None = None,
    ):
        self._clock = clock
        self.retry_timeout_ms = retry_timeout_ms
        self.max_retries = max_retries
        # Security hook stub: return False to refuse a client id. Transport
        # hardening (TLS, credentials) is out of scope; this is the seam.
        self.connect_hook = connect_hook
        self._lock = threading.RLock()
        self._sessions: list[Session] = []
        self._internal_subs: list[tuple[str, Callable[[str, bytes], None]]] = []
        # Internal deliveries run outside the core lock (a callback may want
        # to publish back into the broker from another thread).
        self._internal_pending: deque = deque()
        self._drain_flag_lock = threading.Lock()
        self._draining = False
        # Wire-level accounting, all sessions, both directions.
        self.counters = {"publish_in": 0, "publish_out": 0, "puback_in": 0, "puback_out": 0}

    # -- attachment ------------------------------------------------------

    def attach(self, endpoint: Endpoint) -> Session:
        """Bind a transport endpoint as a (not yet connected) session."""
        session = Session(endpoint=endpoint)
        endpoint.on_receive = lambda data: self.feed(session, data)
        endpoint.on_close = lambda: self._on_endpoint_closed(session)
        with self._lock:
            self._sessions.append(session)
        return session

    def subscribe_internal(self, topic_filter: str, callback: Callable[[str, bytes], None]) -> None:
        """Node-local subscription; deliveries are direct calls, not packets."""
        with self._lock:
            self._internal_subs.append((topic_filter, callback))

    def publish_internal(self, topic: str, payload: bytes, qos: int = 0) -> None:
        """Node-local publish injected into the routing core."""
        publish = Publish(
            topic=topic,
            payload=payload,
            qos=qos,
            packet_id=1 if qos == 1 else None,
        )
        with self._lock:
            self._route(publish, ack_session=None)
        self._drain_internal()

    # -- protocol handling ----------------------------------------------

    def feed(self, session: Session, data: bytes) -> None:
        with self._lock:
            session.buffer.extend(data)
            while True:
                try:
                    decoded = decode_packet(bytes(session.buffer))
                except AtmosphereError as exc:
                    logger.warning("dropping %s: %s", session.client_id or "<pending>", exc)
                    self._drop(session)
                    break
                if decoded is None:
                    break
                packet, consumed = decoded
                del session.buffer[:consumed]
                self._handle(session, packet)
        self._drain_internal()

    def _handle(self, session: Session, packet: Packet) -> None:
        if isinstance(packet, Connect):
            if self.connect_hook is not None and not self.connect_hook(packet.client_id):
                self._send(session, ConnAck(return_code=5))  # not authorized
                self._drop(session)
                return
            for other in list(self._sessions):
                if other is not session and other.client_id == packet.client_id and other.connected:
                    logger.info("client id %s taken over", packet.client_id)
                    self._drop(other)
            session.client_id = packet.client_id
            session.connected = True
            self._send(session, ConnAck(return_code=0))
            return
        if not session.connected:
            logger.warning("packet before CONNECT; dropping connection")
            self._drop(session)
            return
        if isinstance(packet, Publish):
            self.counters["publish_in"] += 1
            self.handle_publish(session, packet)
        elif isinstance(packet, PubAck):
            self.counters["puback_in"] += 1
            session.inflight.pop(packet.packet_id, None)
        elif isinstance(packet, Subscribe):
            granted = []
            for topic_filter, qos in packet.filters:
                session.subscriptions = [
                    (f, q) for f, q in session.subscriptions if f != topic_filter
                ]
                session.subscriptions.append((topic_filter, qos))
                granted.append(qos)
            self._send(session, SubAck(packet_id=packet.packet_id, granted=tuple(granted)))
        elif isinstance(packet, PingReq):
            self._send(session, PingResp())
        elif isinstance(packet, Disconnect):
            self._drop(session)
        else:
            logger.warning("unexpected %s from %s", type(packet).__name__, session.client_id)
            self._drop(session)

    def handle_publish(self, session: Session, publish: Publish) -> None:
        """Ack (QoS 1) and forward to every matching subscriber.

        A QoS 1 re-delivery (dup set, id already seen) is re-acked but
        forwarded only once.
        """
        if publish.qos == 1:
            duplicate = publish.dup and publish.packet_id in session.seen_pub_ids
            session.seen_pub_ids.add(publish.packet_id)
            self._send(session, PubAck(packet_id=publish.packet_id))
            if duplicate:
                return
        self._route(publish, ack_session=session)

    def _route(self, publish: Publish, ack_session: Session | None) -> None:
        for topic_filter, callback in self._internal_subs:
            if match_topic(topic_filter, publish.topic):
                self._internal_pending.append((callback, publish.topic, publish.payload))
        for subscriber in self._sessions:
            if not subscriber.connected:
                continue
            granted = [
                qos for f, qos in subscriber.subscriptions if match_topic(f, publish.topic)
            ]
            if not granted:
                continue
            # One copy per client even when several filters match.
            qos = min(publish.qos, max(granted))
            if qos == 0:
                self._send(
                    subscriber,
                    Publish(topic=publish.topic, payload=publish.payload, qos=0),
                )
            else:
                pid = subscriber.allocate_packet_id()
                forward = Publish(
                    topic=publish.topic, payload=publish.payload, qos=1, packet_id=pid
                )
                subscriber.inflight[pid] = InflightEntry(
                    publish=forward, last_sent_at=self._clock()
                )
                self._send(subscriber, forward)

    def tick(self, now_ms: int | None = None) -> None:
        """Drive QoS 1 retransmission; call periodically (or manually in tests)."""
        now = self._clock() if now_ms is None else now_ms
        with self._lock:
            for session in list(self._sessions):
                resends, drop = retransmit_tick(
                    session, now, self.retry_timeout_ms, self.max_retries
                )
                if drop:
                    logger.warning(
                        "dropping %s: retries exhausted", session.client_id
                    )
                    self._drop(session)
                    continue
                for publish in resends:
                    self._send(session, publish)

    # -- internals -------------------------------------------------------

    def _drain_internal(self) -> None:
        """Deliver queued internal subscriptions outside the core lock.

        One thread drains at a time; re-entrant publishes from a callback
        append to the queue and are handled by the outermost drainer, so the
        cascade still completes before the original call returns.
        """
        with self._drain_flag_lock:
            if self._draining:
                return
            self._draining = True
        while True:
            try:
                callback, topic, payload = self._internal_pending.popleft()
            except IndexError:
                with self._drain_flag_lock:
                    if not self._internal_pending:
                        self._draining = False
                        return
                continue
            try:
                callback(topic, payload)
            except Exception:
                logger.exception("internal subscriber for %s raised", topic)

    def _send(self, session: Session, packet: Packet) -> None:
        if session.endpoint is None or session.endpoint.closed:
            return
        if isinstance(packet, Publish):
            self.counters["publish_out"] += 1
        elif isinstance(packet, PubAck):
            self.counters["puback_out"] += 1
        session.endpoint.send(encode_packet(packet))

    def _on_endpoint_closed(self, session: Session) -> None:
        with self._lock:
            if session in self._sessions:
                self._sessions.remove(session)

    def _drop(self, session: Session) -> None:
        if session in self._sessions:
            self._sessions.remove(session)
        if session.endpoint is not None:
            session.endpoint.close()

    def session_count(self) -> int:
        with self._lock:
            return len(self._sessions)
