"""Reference replay for pattern semantics, independent of the live engine.

Where the engine keeps incremental state (running group accumulators, live
partial matches, a streaming clock), this replay materializes every derived
stream level by level from the full log: each batch is rebuilt from the raw
slice of its window, and each conjunction batch is re-matched from scratch.
Emissions carry the same ``order_key`` tuples the engine assigns, so the two
outputs are comparable as exact sequences. Asymptotically slower, but the
authority in any disagreement.
"""

from __future__ import annotations

from ..errors import DeploymentError
from ..events import Event, SchemaRegistry, compare_values
from ..patterns import (
    CountAgg,
    CurrentTimestamp,
    FieldPath,
    FieldRef,
    PatternDef,
    StarOf,
)
from .engine import Emission
from .infer import check_predicate_types, register_output_schema

# A record is (order_key, Event); order keys sort records into the exact
# arrival order the engine would observe.
Record = tuple[tuple, Event]


def _raw_records(log: list[Event]) -> dict[str, list[Record]]:
    by_stream: dict[str, list[Record]] = {}
    last_ts = None
    phase = 0
    for idx, event in enumerate(log):
        if last_ts is not None and event.timestamp < last_ts:
            raise DeploymentError("oracle log must be ordered by timestamp")
        phase = phase + 1 if event.timestamp == last_ts else 1
        last_ts = event.timestamp
        key = (event.timestamp, phase, 0, -1, idx)
        by_stream.setdefault(event.stream, []).append((key, event))
    return by_stream


def _literal_and_cross(binding):
    literal, cross = [], []
    for pred in binding.predicates:
        if isinstance(pred.rhs, FieldPath):
            cross.append(pred)
        else:
            literal.append(pred)
    return literal, cross


def _passes_literal(preds, fields) -> bool:
    return all(compare_values(p.op, fields[p.lhs.field], p.rhs.value) for p in preds)


class _Replay:
    def __init__(self, pattern: PatternDef, topo: int, node_id: str, start_ms: int):
        self.pattern = pattern
        self.topo = topo
        self.node_id = node_id
        self.start_ms = start_ms
        self.seq = 0
        self.window_ms = pattern.window.to_ms() if pattern.window else None
        self.splits = [_literal_and_cross(b) for b in pattern.bindings]
        self.out: list[Record] = []

    # -- emission helpers ---------------------------------------------------

    def _emit(self, fields: dict, key: tuple) -> None:
        event = Event(
            stream=self.pattern.insert_into,
            fields=fields,
            timestamp=key[0],
            source=self.node_id,
        )
        self.out.append((key, event))

    def _select_fields(self, now: int, single: dict | None = None,
                       count: int | None = None, match: dict | None = None) -> dict:
        fields: dict = {}
        for item in self.pattern.select:
            if isinstance(item, CurrentTimestamp):
                fields[item.as_name] = now
            elif isinstance(item, CountAgg):
                fields[item.as_name] = count
            elif isinstance(item, FieldRef):
                source = single if single is not None else match[item.path.alias].fields
                fields[item.as_name] = source[item.path.field]
            elif isinstance(item, StarOf):
                source = single if single is not None else match[item.alias].fields
                fields.update(source)
        return fields

    # -- pattern kinds --------------------------------------------------------

    def run(self, records: list[Record], horizon_ms: int) -> list[Record]:
        if len(self.pattern.bindings) > 1:
            self._run_conjunction(records, horizon_ms)
        elif self.window_ms:
            self._run_batch(records, horizon_ms)
        else:
            self._run_filter(records)
        return self.out

    def _run_filter(self, records: list[Record]) -> None:
        literal, _ = self.splits[0]
        for key, event in records:
            if _passes_literal(literal, event.fields):
                fields = self._select_fields(now=key[0], single=event.fields)
                self._emit(fields, (key[0], key[1], 1, self.topo, self._next_seq()))

    def _run_batch(self, records: list[Record], horizon_ms: int) -> None:
        literal, _ = self.splits[0]
        count_field = next(
            (i.path.field for i in self.pattern.select if isinstance(i, CountAgg)), None
        )
        group_fields = [p.field for p in self.pattern.group_by]
        pos = 0
        boundary = self.start_ms + self.window_ms
        while boundary <= horizon_ms:
            groups: dict[tuple, list] = {}
            while pos < len(records) and records[pos][1].timestamp < boundary:
                event = records[pos][1]
                pos += 1
                if not _passes_literal(literal, event.fields):
                    continue
                gkey = tuple(event.fields[f] for f in group_fields)
                counted = 0 if count_field and event.fields[count_field] is None else 1
                entry = groups.get(gkey)
                if entry is None:
                    groups[gkey] = [counted, event.fields]
                else:
                    entry[0] += counted
                    entry[1] = event.fields
            for count, last_fields in groups.values():
                fields = self._select_fields(now=boundary, single=last_fields, count=count)
                self._emit(fields, (boundary, 0, 0, self.topo, self._next_seq()))
            boundary += self.window_ms

    def _run_conjunction(self, records: list[Record], horizon_ms: int) -> None:
        if self.window_ms is None:
            self._replay_matches(records)
            return
        pos = 0
        boundary = self.start_ms + self.window_ms
        while boundary <= horizon_ms or pos < len(records):
            batch: list[Record] = []
            while pos < len(records) and records[pos][1].timestamp < boundary:
                batch.append(records[pos])
                pos += 1
            self._replay_matches(batch)
            boundary += self.window_ms

    def _replay_matches(self, records: list[Record]) -> None:
        bindings = self.pattern.bindings
        partials: list[dict] = []
        emitted: set[tuple] = set()

        def eligible(slot: int, event: Event, match: dict) -> bool:
            binding = bindings[slot]
            if binding.stream != event.stream or binding.alias in match:
                return False
            literal, cross = self.splits[slot]
            if not _passes_literal(literal, event.fields):
                return False
            for pred in cross:
                ref = match.get(pred.rhs.alias)
                if ref is None:
                    return False
                if not compare_values(
                    pred.op, event.fields[pred.lhs.field], ref.fields[pred.rhs.field]
                ):
                    return False
            return True

        def complete(match: dict, key: tuple) -> None:
            corr = []
            for binding, (_, cross) in zip(bindings, self.splits):
                for pred in cross:
                    if pred.op == "=":
                        corr.append(match[binding.alias].fields[pred.lhs.field])
            if self.window_ms is not None:
                if tuple(corr) in emitted:
                    return
                emitted.add(tuple(corr))
            fields = self._select_fields(now=key[0], match=match)
            self._emit(fields, (key[0], key[1], 1, self.topo, self._next_seq()))

        for key, event in records:
            placed = False
            for match in partials:
                for slot in range(len(bindings)):
                    if eligible(slot, event, match):
                        match[bindings[slot].alias] = event
                        if len(match) == len(bindings):
                            partials.remove(match)
                            complete(match, key)
                        placed = True
                        break
                if placed:
                    break
            if placed:
                continue
            for slot in range(len(bindings)):
                if eligible(slot, event, {}):
                    match = {bindings[slot].alias: event}
                    if len(match) == len(bindings):
                        complete(match, key)
                    else:
                        partials.append(match)
                    break

    def _next_seq(self) -> int:
        seq = self.seq
        self.seq += 1
        return seq


def oracle_replay(
    patterns: list[PatternDef],
    registry: SchemaRegistry,
    log: list[Event],
    horizon_ms: int,
    node_id: str = "oracle",
    start_ms: int = 0,
) -> list[Emission]:
    """Replay ``log`` through ``patterns`` and return emissions in canonical
    ``order_key`` order (the engine's output, sorted the same way, must match
    exactly)."""
    streams = _raw_records(log)
    if log:
        horizon_ms = max(horizon_ms, log[-1].timestamp)
    replays: list[_Replay] = []
    for topo, pattern in enumerate(patterns):
        for stream in pattern.input_streams():
            if stream not in registry:
                raise DeploymentError(
                    f"pattern {pattern.name!r} reads unknown stream {stream!r}"
                )
        register_output_schema(pattern, registry)
        check_predicate_types(pattern, registry)
        replays.append(_Replay(pattern, topo, node_id, start_ms))
    for replay in replays:
        inputs: list[Record] = []
        for stream in replay.pattern.input_streams():
            inputs.extend(streams.get(stream, ()))
        inputs.sort(key=lambda record: record[0])
        produced = replay.run(inputs, horizon_ms)
        streams.setdefault(replay.pattern.insert_into, []).extend(produced)
        streams[replay.pattern.insert_into].sort(key=lambda record: record[0])
    emissions: list[tuple[tuple, Emission]] = []
    for replay in replays:
        for key, event in replay.out:
            emissions.append(
                (
                    key,
                    Emission(
                        event=event,
                        produced_by=replay.pattern.name,
                        target_tag=replay.pattern.target,
                        order_key=key,
                    ),
                )
            )
    emissions.sort(key=lambda pair: pair[0])
    return [emission for _, emission in emissions]
