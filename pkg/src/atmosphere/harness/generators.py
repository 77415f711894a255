"""Seeded field-value generators for load simulators."""

from __future__ import annotations

import random


class ValueGenerator:
    def __init__(self, spec: dict, rng: random.Random):
        self.kind = spec["kind"]
        self.spec = spec
        self.rng = rng
        self._sequence = 0

    def next(self):
        if self.kind == "constant":
            return self.spec["value"]
        if self.kind == "uniform_int":
            return self.rng.randint(self.spec["low"], self.spec["high"])
        if self.kind == "choice":
            return self.rng.choice(self.spec["values"])
        if self.kind == "bernoulli":
            return self.rng.random() < self.spec["p"]
        self._sequence += 1
        return self._sequence


class EventFactory:
    """Deterministic field-map source for one simulator."""

    def __init__(self, generators: dict, seed: int):
        rng = random.Random(seed)
        self.generators = {name: ValueGenerator(spec, rng) for name, spec in generators.items()}

    def next_fields(self) -> dict:
        return {name: gen.next() for name, gen in self.generators.items()}


def emission_times_ms(rate: float, duration_s: float) -> list[int]:
    """The exact schedule: one event every 1/rate seconds for the duration."""
    total = int(rate * duration_s)
    return [int(i * 1000.0 / rate) for i in range(total)]
