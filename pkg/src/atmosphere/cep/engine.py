"""Deterministic complex event processing over ordered event streams.

One engine hosts a DAG of deployed patterns. Ingesting an event advances the
engine clock, first firing every tumbling-window boundary crossed, then
routing the event; emissions cascade into downstream patterns within the same
call. In ``event_time`` mode the clock moves only with event timestamps and
explicit :meth:`Engine.advance_clock` calls, which makes a replay of the same
log byte-identical. ``processing_time`` mode stamps arrivals with a wall
clock for live runs.

Instant ordering model
----------------------
Work at one timestamp ``t`` happens in phases, and every emission carries an
``order_key`` tuple ``(t, phase, minor, topo, seq)``:

* phase 0 is the boundary phase: batch windows ending at ``t`` close in
  topological order (minor 0), then their emissions cascade through
  downstream patterns (minor 1);
* phase k (k >= 1): the k-th raw event ingested at ``t`` and its cascade
  (minor 1).

``topo`` is the producing pattern's deployment index and ``seq`` its running
emission counter. Sorting any run's emissions by ``order_key`` is therefore a
stable, replayable total order; the reference replay in ``oracle.py``
produces the same keys independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import (
    DeploymentError,
    TimeRegressionError,
    UnknownStreamError,
)
from ..events import Event, SchemaRegistry, compare_values
from ..patterns import (
    CountAgg,
    CurrentTimestamp,
    FieldPath,
    FieldRef,
    PatternDef,
    StarOf,
)
from .infer import check_predicate_types, register_output_schema

EVENT_TIME = "event_time"
PROCESSING_TIME = "processing_time"


@dataclass
class EngineClock:
    mode: str = EVENT_TIME
    current: int = 0


@dataclass(frozen=True)
class Emission:
    event: Event
    produced_by: str
    target_tag: str | None
    order_key: tuple = field(compare=False, default=())


def _compile_binding(binding):
    """Split predicates into (field, op, literal) and cross-binding refs."""
    literal = []
    cross = []
    for pred in binding.predicates:
        if isinstance(pred.rhs, FieldPath):
            cross.append((pred.lhs.field, pred.op, pred.rhs.alias, pred.rhs.field))
        else:
            literal.append((pred.lhs.field, pred.op, pred.rhs.value))
    return literal, cross


def _literal_preds_pass(literal_preds, fields) -> bool:
    for fname, op, value in literal_preds:
        if not compare_values(op, fields[fname], value):
            return False
    return True


class _Deployed:
    """One deployed pattern plus its runtime state."""

    FILTER = "filter"
    BATCH = "batch"
    CONJUNCTION = "conjunction"

    def __init__(self, pattern: PatternDef, topo: int, start_ms: int, now_ms: int):
        self.pattern = pattern
        self.topo = topo
        self.name = pattern.name
        self.emit_seq = 0
        self.window_ms = pattern.window.to_ms() if pattern.window else None
        self.next_boundary: int | None = None
        if self.window_ms:
            elapsed = max(0, now_ms - start_ms)
            self.next_boundary = start_ms + (elapsed // self.window_ms + 1) * self.window_ms
        self.bindings = list(pattern.bindings)
        self.compiled = [_compile_binding(b) for b in self.bindings]
        if pattern.is_conjunction:
            self.kind = self.CONJUNCTION
        elif self.window_ms:
            self.kind = self.BATCH
        else:
            self.kind = self.FILTER
        self.count_field = next(
            (i.path.field for i in pattern.select if isinstance(i, CountAgg)), None
        )
        self.group_fields = [path.field for path in pattern.group_by]
        # batch state: group key -> [non-null count, last event fields]
        self.groups: dict = {}
        # conjunction state
        self.partials: list[dict] = []
        self.emitted_keys: set = set()
        # alias -> slot index, and per-slot extend order
        self.alias_index = {b.alias: i for i, b in enumerate(self.bindings)}

    # -- select realization ------------------------------------------------

    def _realize_single(self, fields: dict, now: int) -> dict:
        out = {}
        for item in self.pattern.select:
            if isinstance(item, CurrentTimestamp):
                out[item.as_name] = now
            elif isinstance(item, FieldRef):
                out[item.as_name] = fields[item.path.field]
            elif isinstance(item, StarOf):
                out.update(fields)
        return out

    def _realize_group(self, count: int, last_fields: dict, now: int) -> dict:
        out = {}
        for item in self.pattern.select:
            if isinstance(item, CurrentTimestamp):
                out[item.as_name] = now
            elif isinstance(item, CountAgg):
                out[item.as_name] = count
            elif isinstance(item, FieldRef):
                out[item.as_name] = last_fields[item.path.field]
            elif isinstance(item, StarOf):
                out.update(last_fields)
        return out

    def _realize_match(self, match: dict, now: int) -> dict:
        out = {}
        for item in self.pattern.select:
            if isinstance(item, CurrentTimestamp):
                out[item.as_name] = now
            elif isinstance(item, FieldRef):
                out[item.as_name] = match[item.path.alias].fields[item.path.field]
            elif isinstance(item, StarOf):
                out.update(match[item.alias].fields)
        return out

    # -- conjunction helpers -------------------------------------------------

    def _slot_eligible(self, slot: int, event: Event, match: dict) -> bool:
        binding = self.bindings[slot]
        if binding.stream != event.stream or binding.alias in match:
            return False
        literal, cross = self.compiled[slot]
        if not _literal_preds_pass(literal, event.fields):
            return False
        for fname, op, ref_alias, ref_field in cross:
            ref = match.get(ref_alias)
            if ref is None:
                return False  # dependency not yet assigned
            if not compare_values(op, event.fields[fname], ref.fields[ref_field]):
                return False
        return True

    def correlation_key(self, match: dict) -> tuple:
        key = []
        for binding, (_, cross) in zip(self.bindings, self.compiled):
            for fname, op, _ref_alias, _ref_field in cross:
                if op == "=":
                    key.append(match[binding.alias].fields[fname])
        return tuple(key)


class Engine:
    """Pattern host for one fog or cloud node."""

    def __init__(
        self,
        node_id: str,
        registry: SchemaRegistry,
        mode: str = EVENT_TIME,
        start_ms: int = 0,
        wall_clock=None,
    ):
        if mode not in (EVENT_TIME, PROCESSING_TIME):
            raise ValueError(f"unknown clock mode {mode!r}")
        self.node_id = node_id
        self.registry = registry
        self.clock = EngineClock(mode=mode, current=start_ms)
        self.start_ms = start_ms
        self._wall_clock = wall_clock
        self._deployed: list[_Deployed] = []
        self._by_name: dict[str, _Deployed] = {}
        self._consumers: dict[str, list[_Deployed]] = {}
        self._ingest_count = 0
        self._instant_ts = -1
        self._raw_phase = 0

    @property
    def ingest_count(self) -> int:
        return self._ingest_count

    def deployed_patterns(self) -> list[PatternDef]:
        return [d.pattern for d in self._deployed]

    def next_boundary(self) -> int | None:
        """Earliest pending batch boundary, for lockstep multi-engine drivers."""
        values = [d.next_boundary for d in self._deployed if d.next_boundary is not None]
        return min(values, default=None)

    # -- deployment ---------------------------------------------------------

    def deploy(self, pattern: PatternDef) -> None:
        if pattern.name in self._by_name:
            raise DeploymentError(f"pattern {pattern.name!r} already deployed")
        for stream in pattern.input_streams():
            if stream not in self.registry:
                raise UnknownStreamError(stream)
        self._check_acyclic(pattern)
        register_output_schema(pattern, self.registry)
        check_predicate_types(pattern, self.registry)
        deployed = _Deployed(
            pattern, topo=len(self._deployed), start_ms=self.start_ms, now_ms=self.clock.current
        )
        self._deployed.append(deployed)
        self._by_name[pattern.name] = deployed
        for stream in pattern.input_streams():
            self._consumers.setdefault(stream, []).append(deployed)

    def _check_acyclic(self, new: PatternDef) -> None:
        edges: dict[str, set[str]] = {}
        for d in self._deployed:
            for stream in d.pattern.input_streams():
                edges.setdefault(stream, set()).add(d.pattern.insert_into)
        for stream in new.input_streams():
            edges.setdefault(stream, set()).add(new.insert_into)
        # A cycle exists iff the new output reaches one of the new inputs.
        targets = set(new.input_streams())
        stack, seen = [new.insert_into], set()
        while stack:
            node = stack.pop()
            if node in targets:
                raise DeploymentError(
                    f"pattern {new.name!r} would create a stream cycle through {node!r}"
                )
            if node in seen:
                continue
            seen.add(node)
            stack.extend(edges.get(node, ()))

    # -- time ----------------------------------------------------------------

    def advance_clock(self, to_ms: int) -> list[Emission]:
        """Fire every batch boundary up to ``to_ms`` and move the clock there."""
        if to_ms < self.clock.current:
            raise TimeRegressionError(
                f"cannot advance from {self.clock.current} back to {to_ms}"
            )
        out: list[Emission] = []
        self._advance_to(to_ms, out)
        self.clock.current = max(self.clock.current, to_ms)
        return out

    def ingest(self, event: Event) -> list[Emission]:
        """Apply one event; returns the cascade of emissions it produced."""
        if event.stream not in self.registry:
            raise UnknownStreamError(event.stream)
        if self.clock.mode == EVENT_TIME:
            ts = event.timestamp
            if ts < self.clock.current:
                raise TimeRegressionError(
                    f"event at {ts} behind engine clock {self.clock.current}"
                )
        else:
            wall = self._wall_clock() if self._wall_clock else event.timestamp
            ts = max(self.clock.current, wall)
        self._ingest_count += 1
        out: list[Emission] = []
        self._advance_to(ts, out)
        self.clock.current = ts
        if ts == self._instant_ts:
            self._raw_phase += 1
        else:
            self._instant_ts = ts
            self._raw_phase = 1
        inboxes: dict[int, list[Event]] = {}
        for consumer in self._consumers.get(event.stream, ()):
            inboxes.setdefault(consumer.topo, []).append(event)
        self._sweep(inboxes, ts, self._raw_phase, out)
        return out

    def _advance_to(self, to_ms: int, out: list[Emission]) -> None:
        # Fire phases boundary time by boundary time; an empty batch fires
        # cheaply (no emissions), and a later boundary of another pattern may
        # be fed by an earlier one's cascade, so none may be skipped.
        while True:
            due_time: int | None = None
            for d in self._deployed:
                if d.next_boundary is None or d.next_boundary > to_ms:
                    continue
                if due_time is None or d.next_boundary < due_time:
                    due_time = d.next_boundary
            if due_time is None:
                return
            self._fire_boundary_phase(due_time, out)
            self.clock.current = max(self.clock.current, due_time)

    def _fire_boundary_phase(self, t: int, out: list[Emission]) -> None:
        inboxes: dict[int, list[Event]] = {}
        for d in self._deployed:
            if d.next_boundary != t:
                continue
            d.next_boundary += d.window_ms
            if d.kind == _Deployed.BATCH:
                for key, (count, last_fields) in d.groups.items():
                    fields = d._realize_group(count, last_fields, t)
                    self._emit(d, fields, t, phase=0, minor=0, out=out, inboxes=inboxes)
                d.groups = {}
            elif d.kind == _Deployed.CONJUNCTION:
                # Window rollover: open partial matches and the duplicate
                # suppression set die with the batch.
                d.partials = []
                d.emitted_keys = set()
        self._sweep(inboxes, t, 0, out)

    # -- cascade ---------------------------------------------------------------

    def _sweep(self, inboxes: dict[int, list[Event]], t: int, phase: int, out: list[Emission]) -> None:
        for d in self._deployed:
            events = inboxes.pop(d.topo, None)
            if not events:
                continue
            for event in events:
                self._consume(d, event, t, phase, out, inboxes)

    def _consume(self, d: _Deployed, event: Event, t: int, phase: int, out, inboxes) -> None:
        if d.kind == _Deployed.FILTER:
            literal, _ = d.compiled[0]
            if _literal_preds_pass(literal, event.fields):
                fields = d._realize_single(event.fields, t)
                self._emit(d, fields, t, phase=phase, minor=1, out=out, inboxes=inboxes)
            return
        if d.kind == _Deployed.BATCH:
            literal, _ = d.compiled[0]
            if not _literal_preds_pass(literal, event.fields):
                return
            key = tuple(event.fields[f] for f in d.group_fields)
            entry = d.groups.get(key)
            counted = 1
            if d.count_field is not None and event.fields[d.count_field] is None:
                counted = 0
            if entry is None:
                d.groups[key] = [counted, event.fields]
            else:
                entry[0] += counted
                entry[1] = event.fields
            return
        # conjunction: extend the oldest compatible partial, else open a new one
        for match in d.partials:
            for slot in range(len(d.bindings)):
                if d._slot_eligible(slot, event, match):
                    match[d.bindings[slot].alias] = event
                    if len(match) == len(d.bindings):
                        d.partials.remove(match)
                        self._complete_match(d, match, t, phase, out, inboxes)
                    return
        for slot in range(len(d.bindings)):
            if d._slot_eligible(slot, event, {}):
                match = {d.bindings[slot].alias: event}
                if len(match) == len(d.bindings):
                    self._complete_match(d, match, t, phase, out, inboxes)
                else:
                    d.partials.append(match)
                return

    def _complete_match(self, d: _Deployed, match: dict, t: int, phase: int, out, inboxes) -> None:
        if d.window_ms:
            key = d.correlation_key(match)
            if key in d.emitted_keys:
                return
            d.emitted_keys.add(key)
        fields = d._realize_match(match, t)
        self._emit(d, fields, t, phase=phase, minor=1, out=out, inboxes=inboxes)

    def _emit(self, d: _Deployed, fields: dict, t: int, phase: int, minor: int, out, inboxes) -> None:
        event = Event(
            stream=d.pattern.insert_into, fields=fields, timestamp=t, source=self.node_id
        )
        key = (t, phase, minor, d.topo, d.emit_seq)
        d.emit_seq += 1
        out.append(
            Emission(
                event=event,
                produced_by=d.name,
                target_tag=d.pattern.target,
                order_key=key,
            )
        )
        for consumer in self._consumers.get(event.stream, ()):
            inboxes.setdefault(consumer.topo, []).append(event)
