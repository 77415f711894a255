"""Cloud node: source ingestion with normalizing transformers, a CEP engine,
and per-audience sinks (a fog-bound topic, or a notification record stub).

External sources publish raw JSON of arbitrary shape; a transformer maps
source paths onto one canonical stream. Fog-origin feeds use passthrough
transformers since they already carry canonical event payloads.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field

from ..cep import Engine
from ..errors import AtmosphereError, ConfigError
from ..events import Event, SchemaRegistry, decode_event, encode_event
from ..mqtt import MqttClient
from ..patterns import PatternDef

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransformerSpec:
    id: str
    output_stream: str
    kind: str = "map"  # map | passthrough
    fields: tuple = ()  # of (source_path, canonical_field)
    defaults: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SinkSpec:
    id: str
    kind: str  # topic | notification
    targets: tuple  # routing audiences served by this sink
    topic: str | None = None


@dataclass(frozen=True)
class SourceSpec:
    topic: str
    transformer: str


def _walk_path(doc, path: str):
    node = doc
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise KeyError(path)
        node = node[part]
    return node


class CloudNode:
    def __init__(
        self,
        node_id: str,
        registry: SchemaRegistry,
        patterns: list[PatternDef],
        sources: list[SourceSpec],
        transformers: list[TransformerSpec],
        sinks: list[SinkSpec],
        mode: str,
        start_ms: int = 0,
        qos: int = 0,
        clock=None,
        wall_clock=None,
    ):
        self.node_id = node_id
        self.registry = registry
        self.qos = qos
        self._clock = clock or (lambda: 0)
        self._lock = threading.RLock()
        self.engine = Engine(node_id, registry, mode=mode, start_ms=start_ms, wall_clock=wall_clock)
        self.transformers = {t.id: t for t in transformers}
        self.sources = {s.topic: s for s in sources}
        self._sink_by_target: dict[str, SinkSpec] = {}
        for sink in sinks:
            for target in sink.targets:
                if target in self._sink_by_target:
                    raise ConfigError(f"cloud {node_id}: two sinks serve target {target!r}")
                self._sink_by_target[target] = sink
        for source in sources:
            if source.transformer not in self.transformers:
                raise ConfigError(
                    f"cloud {node_id}: source {source.topic!r} names unknown "
                    f"transformer {source.transformer!r}"
                )
        for pattern in patterns:
            if pattern.target is None or pattern.target not in self._sink_by_target:
                raise ConfigError(
                    f"cloud pattern {pattern.name!r} target does not map to a sink"
                )
            self.engine.deploy(pattern)
        self.client: MqttClient | None = None
        self.dead_letters: list[tuple[str, str]] = []
        self.notifications: list[dict] = []
        self.emission_log: list = []
        self.routed_count = 0

    def attach(self, client: MqttClient) -> None:
        """Wire an already-connected broker client and subscribe the sources."""
        self.client = client
        client.on_message = self.on_message
        if self.sources:
            client.subscribe([(topic, self.qos) for topic in self.sources])

    @property
    def ingest_count(self) -> int:
        return self.engine.ingest_count

    def on_message(self, topic: str, payload: bytes) -> None:
        with self._lock:
            source = self.sources.get(topic)
            if source is None:
                logger.debug("%s: ignoring message on %s", self.node_id, topic)
                return
            transformer = self.transformers[source.transformer]
            try:
                event = self._transform(transformer, payload)
                emissions = self.engine.ingest(event)
            except AtmosphereError as exc:
                self._dead_letter(f"{transformer.id}: {exc}", payload)
                return
            except KeyError as exc:
                self._dead_letter(f"{transformer.id}: missing source path {exc}", payload)
                return
            self._route(emissions)

    def advance(self, to_ms: int) -> None:
        with self._lock:
            # a wall-clock reading captured before an ingest stamped a newer
            # time must not read as a regression
            to_ms = max(to_ms, self.engine.clock.current)
            self._route(self.engine.advance_clock(to_ms))

    def _transform(self, transformer: TransformerSpec, payload: bytes) -> Event:
        if transformer.kind == "passthrough":
            return decode_event(payload, self.registry)
        try:
            doc = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise AtmosphereError(f"malformed source JSON: {exc}") from None
        fields = dict(transformer.defaults)
        for source_path, canonical in transformer.fields:
            try:
                fields[canonical] = _walk_path(doc, source_path)
            except KeyError:
                # A declared default makes the source path optional.
                if canonical not in transformer.defaults:
                    raise
        schema = self.registry.get(transformer.output_stream)
        return Event(
            stream=transformer.output_stream,
            fields=schema.validate(fields),
            timestamp=self._clock(),
            source=self.node_id,
        )

    def _route(self, emissions) -> None:
        for emission in emissions:
            sink = self._sink_by_target[emission.target_tag]
            self.emission_log.append(emission)
            self.routed_count += 1
            if sink.kind == "topic":
                payload = encode_event(emission.event, self.registry)
                assert self.client is not None
                self.client.publish(sink.topic, payload, qos=self.qos)
            else:
                self.notifications.append(
                    {
                        "sink": sink.id,
                        "pattern": emission.produced_by,
                        "stream": emission.event.stream,
                        "at": emission.event.timestamp,
                        "fields": emission.event.fields,
                    }
                )

    def _dead_letter(self, reason: str, payload: bytes) -> None:
        logger.warning("%s dead-letter: %s", self.node_id, reason)
        self.dead_letters.append((reason, payload[:200].decode("utf-8", "replace")))
