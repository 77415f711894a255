"""Seeded random log generator for engine-vs-reference equivalence tests.

Logs mix three stream types over a 48 h span: hospital light events, medicine
movements across 8 ids, and an unconsumed noise stream. Demand bursts are
injected so the high-demand chain (and with it the triple correlation) fires
with realistic frequency instead of never.
"""

from __future__ import annotations

import random

from atmosphere.events import Event, EventSchema, SchemaRegistry

HOUR = 3_600_000
SPAN_MS = 48 * HOUR

IDS = [f"m{i}" for i in range(1, 9)]
PLACES = ["laboratory", "pharmacy", "hospital"]
TYPES = ["respiratory", "generic"]


def random_registry() -> SchemaRegistry:
    return SchemaRegistry(
        [
            EventSchema("ExternalLight", {"isOn": "boolean", "floor": "integer"}),
            EventSchema("Medicine", {"id": "string", "type": "string", "place": "string"}),
            EventSchema("O2Level", {"value": "number"}),
        ]
    )


def generate_log(seed: int, max_events: int = 10_000) -> list[Event]:
    rng = random.Random(seed)
    entries: list[tuple[int, int, dict | None, str]] = []

    # Laboratory demand bursts: >1000 events for one id inside one hour, plus
    # a matching pharmacy trickle and a hospital use, so the full correlation
    # chain (including its per-batch duplicate suppression) gets exercised.
    budget = max_events - 200
    for _ in range(rng.randint(1, 3)):
        count = rng.randint(1001, 1100)
        if count + 10 > budget:
            break
        budget -= count + 10
        mid = rng.choice(IDS)
        mtype = rng.choice(TYPES)
        hour_start = rng.randrange(0, SPAN_MS - HOUR)
        for _ in range(count):
            ts = hour_start + rng.randrange(0, HOUR)
            entries.append((ts, 0, {"id": mid, "type": mtype, "place": "laboratory"}, "Medicine"))
        for _ in range(rng.randint(1, 5)):
            ts = hour_start + rng.randrange(0, HOUR)
            entries.append((ts, 0, {"id": mid, "type": mtype, "place": "pharmacy"}, "Medicine"))
        for _ in range(rng.randint(1, 4)):
            ts = hour_start + rng.randrange(0, HOUR)
            entries.append(
                (ts, 0, {"id": mid, "type": "respiratory", "place": "hospital"}, "Medicine")
            )

    # Floor clusters: enough lights on one floor within one ten-minute batch
    # to trip the surveillance threshold.
    for _ in range(rng.randint(1, 3)):
        floor = rng.randint(1, 5)
        window_start = rng.randrange(0, SPAN_MS - 600_000)
        for _ in range(rng.randint(4, 8)):
            ts = window_start + rng.randrange(0, 600_000)
            entries.append((ts, 0, {"isOn": True, "floor": floor}, "ExternalLight"))

    n = max(len(entries) + 200, rng.randint(max(200, max_events // 10), max_events))
    while len(entries) < n:
        ts = rng.randrange(0, SPAN_MS)
        kind = rng.random()
        if kind < 0.45:
            fields = {"isOn": rng.random() < 0.7, "floor": rng.randint(1, 5)}
            entries.append((ts, 0, fields, "ExternalLight"))
        elif kind < 0.9:
            fields = {
                "id": rng.choice(IDS),
                "type": rng.choice(TYPES),
                "place": rng.choice(PLACES),
            }
            entries.append((ts, 0, fields, "Medicine"))
        else:
            entries.append((ts, 0, {"value": round(rng.uniform(60, 100), 1)}, "O2Level"))

    # Occasional timestamp collisions exercise same-instant ordering.
    entries.sort(key=lambda item: item[0])
    for i in range(1, len(entries)):
        if rng.random() < 0.01:
            prev = entries[i - 1]
            entries[i] = (prev[0],) + entries[i][1:]

    log = []
    for idx, (ts, _, fields, stream) in enumerate(entries):
        log.append(Event(stream, fields, ts, f"src{idx % 7}"))
    return log
