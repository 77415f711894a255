from __future__ import annotations

import random

import pytest

from atmosphere.mqtt import MqttClient, Publish, retransmit_tick
from atmosphere.mqtt.broker import Broker, InflightEntry, Session
from atmosphere.transport import make_sync_pair


class VirtualClock:
    def __init__(self):
        self.now = 0

    def __call__(self):
        return self.now

    def advance(self, ms):
        self.now += ms


def attach_client(broker, client_id, clock, **kwargs):
    client_end, broker_end = make_sync_pair(f"{client_id}-c", f"{client_id}-b")
    broker.attach(broker_end)
    client = MqttClient(client_id, clock=clock, **kwargs)
    client.connect(client_end)
    return client


@pytest.fixture()
def clock():
    return VirtualClock()


@pytest.fixture()
def broker(clock):
    return Broker(clock=clock)


def collect(client):
    inbox = []
    client.on_message = lambda topic, payload: inbox.append((topic, payload))
    return inbox


class TestHandlePublish:
    def test_qos0_two_subscribers_two_forwards_no_acks(self, broker, clock):
        publisher = attach_client(broker, "pub", clock)
        sub1 = attach_client(broker, "s1", clock)
        sub2 = attach_client(broker, "s2", clock)
        sub1.subscribe([("f1/in", 0)])
        sub2.subscribe([("f1/#", 0)])
        publisher.publish("f1/in", b"x", qos=0)
        assert collect_count(sub1) == 0  # callbacks not registered; use counters
        assert sub1.counters["publish_received"] == 1
        assert sub2.counters["publish_received"] == 1
        assert broker.counters["publish_out"] == 2
        assert broker.counters["puback_out"] == 0
        assert publisher.counters["puback_received"] == 0

    def test_qos1_publish_acked_and_forward_tracked(self, broker, clock):
        publisher = attach_client(broker, "pub", clock)
        sub = attach_client(broker, "sub", clock)
        sub.subscribe([("f1/in", 1)])
        inbox = collect(sub)
        publisher.publish("f1/in", b"x", qos=1)
        assert publisher.counters["puback_received"] == 1
        assert publisher.inflight_count() == 0
        assert inbox == [("f1/in", b"x")]
        # the forward was qos1: subscriber acked it
        assert sub.counters["puback_sent"] == 1

    def test_qos1_no_subscribers_ack_only(self, broker, clock):
        publisher = attach_client(broker, "pub", clock)
        publisher.publish("dead/topic", b"x", qos=1)
        assert publisher.counters["puback_received"] == 1
        assert broker.counters["publish_out"] == 0

    def test_duplicate_qos1_redelivery_forwarded_once_reacked(self, broker, clock):
        publisher = attach_client(broker, "pub", clock)
        sub = attach_client(broker, "sub", clock)
        sub.subscribe([("t", 0)])
        inbox = collect(sub)
        session = next(s for s in broker._sessions if s.client_id == "pub")
        broker.handle_publish(session, Publish(topic="t", payload=b"x", qos=1, packet_id=9))
        broker.handle_publish(
            session, Publish(topic="t", payload=b"x", qos=1, packet_id=9, dup=True)
        )
        assert inbox == [("t", b"x")]
        assert publisher.counters["puback_received"] == 2

    def test_forward_qos_is_min_of_publish_and_subscription(self, broker, clock):
        publisher = attach_client(broker, "pub", clock)
        sub = attach_client(broker, "sub", clock)
        sub.subscribe([("t", 0)])
        publisher.publish("t", b"x", qos=1)
        assert sub.counters["publish_received"] == 1
        assert sub.counters["puback_sent"] == 0  # downgraded to qos 0

    def test_one_copy_per_client_with_overlapping_filters(self, broker, clock):
        publisher = attach_client(broker, "pub", clock)
        sub = attach_client(broker, "sub", clock)
        sub.subscribe([("f1/in", 0), ("f1/#", 0), ("#", 0)])
        publisher.publish("f1/in", b"x", qos=0)
        assert sub.counters["publish_received"] == 1


def collect_count(client):
    return client.counters["publish_received"] if client.on_message else 0


class TestRetransmitTick:
    def _session_with_entry(self, age_origin, retry_count=0):
        session = Session(client_id="s")
        publish = Publish(topic="t", payload=b"x", qos=1, packet_id=1)
        session.inflight[1] = InflightEntry(
            publish=publish, last_sent_at=age_origin, retry_count=retry_count
        )
        return session

    def test_aged_entry_resent_with_dup(self):
        session = self._session_with_entry(age_origin=0)
        resends, drop = retransmit_tick(session, now_ms=2000, retry_timeout_ms=1000)
        assert not drop
        assert len(resends) == 1
        assert resends[0].dup is True
        assert session.inflight[1].retry_count == 1

    def test_fresh_entry_not_resent(self):
        session = self._session_with_entry(age_origin=1500)
        resends, drop = retransmit_tick(session, now_ms=2000, retry_timeout_ms=1000)
        assert resends == [] and not drop

    def test_empty_inflight_noop(self):
        session = Session(client_id="s")
        assert retransmit_tick(session, now_ms=10_000) == ([], False)

    def test_exhausted_retries_drop_session(self):
        session = self._session_with_entry(age_origin=0, retry_count=5)
        resends, drop = retransmit_tick(
            session, now_ms=10_000, retry_timeout_ms=1000, max_retries=5
        )
        assert drop and resends == []


class TestQos0Accounting:
    def test_qos0_never_retransmitted_nor_acked(self, broker, clock):
        publisher = attach_client(broker, "pub", clock)
        sub = attach_client(broker, "sub", clock)
        sub.subscribe([("t", 0)])
        publisher.publish("t", b"x", qos=0)
        sent_before = publisher.counters["publish_sent"]
        for _ in range(20):
            clock.advance(5000)
            publisher.tick()
            broker.tick()
        assert publisher.counters["publish_sent"] == sent_before
        assert broker.counters["puback_out"] == 0
        assert broker.counters["puback_in"] == 0
        assert sub.counters["publish_received"] == 1


class TestConnectHook:
    def test_refused_client_gets_not_authorized(self, clock):
        from atmosphere.errors import TransportError

        broker = Broker(clock=clock, connect_hook=lambda client_id: client_id != "intruder")
        ok = attach_client(broker, "friend", clock)
        assert ok.connected
        client_end, broker_end = make_sync_pair()
        broker.attach(broker_end)
        refused = MqttClient("intruder", clock=clock)
        with pytest.raises(TransportError):
            refused.connect(client_end, timeout_s=0)
        assert broker.session_count() == 1


class TestTcpTransport:
    def test_qos1_exchange_over_real_sockets(self):
        import threading

        from atmosphere.transport import TcpServer, connect_tcp

        broker = Broker()
        server = TcpServer("127.0.0.1", 0, broker.attach)
        try:
            subscriber = MqttClient("sub")
            subscriber.connect(connect_tcp("127.0.0.1", server.port))
            got = threading.Event()
            inbox = []

            def on_message(topic, payload):
                inbox.append((topic, payload))
                got.set()

            subscriber.on_message = on_message
            subscriber.subscribe([("f1/in", 1)])
            publisher = MqttClient("pub")
            publisher.connect(connect_tcp("127.0.0.1", server.port))
            publisher.publish("f1/in", b"over-tcp", qos=1)
            assert got.wait(5.0)
            assert inbox == [("f1/in", b"over-tcp")]
            deadline = 50
            while publisher.inflight_count() and deadline:
                import time as _time

                _time.sleep(0.02)
                deadline -= 1
            assert publisher.inflight_count() == 0
            publisher.disconnect()
            subscriber.disconnect()
        finally:
            server.close()


class TestLossyLink:
    def test_at_least_once_under_30pct_loss(self, clock):
        """1000 QoS 1 publishes all arrive despite 30% uniform packet loss."""
        rng = random.Random(20210612)
        broker = Broker(clock=clock, retry_timeout_ms=100, max_retries=40)

        def lossy():
            return rng.random() < 0.30

        pub_end, pub_broker_end = make_sync_pair(
            drop_a_to_b=lambda _: lossy(), drop_b_to_a=lambda _: lossy()
        )
        sub_end, sub_broker_end = make_sync_pair(
            drop_a_to_b=lambda _: lossy(), drop_b_to_a=lambda _: lossy()
        )
        broker.attach(pub_broker_end)
        broker.attach(sub_broker_end)

        publisher = MqttClient("pub", clock=clock, retry_timeout_ms=100, max_retries=40)
        subscriber = MqttClient("sub", clock=clock, retry_timeout_ms=100, max_retries=40)
        # Loss may also eat CONNECT/SUBSCRIBE; drive the handshakes until done.
        self._handshake(publisher, pub_end, clock)
        self._handshake(subscriber, sub_end, clock)
        self._subscribe(subscriber, clock, broker)

        received: set[bytes] = set()
        subscriber.on_message = lambda topic, payload: received.add(payload)

        total = 1000
        for i in range(total):
            publisher.publish("t", str(i).encode(), qos=1)
        bound_ms = (40 + 1) * 100
        start = clock.now
        while clock.now - start <= bound_ms:
            if not publisher.inflight and len(received) == total:
                break
            clock.advance(100)
            publisher.tick()
            broker.tick()
        assert len(received) == total, f"only {len(received)}/{total} delivered"
        assert clock.now - start <= bound_ms

    def _handshake(self, client, endpoint, clock):
        for _ in range(50):
            try:
                client.connect(endpoint, timeout_s=0)
                return
            except Exception:
                clock.advance(100)
        raise AssertionError("handshake never completed")

    def _subscribe(self, client, clock, broker):
        for _ in range(50):
            try:
                client.subscribe([("t", 1)], timeout_s=0)
                return
            except Exception:
                clock.advance(100)
        raise AssertionError("subscribe never completed")
