"""Three-tier edge/fog/cloud IoT testbed.

The package composes an MQTT 3.1.1-subset broker, a deterministic complex
event processing engine with a small pattern definition language, rule-driven
edge agents behind a message gateway, and a scenario harness that wires the
tiers together and benchmarks round-trip latency.
"""

__version__ = "0.1.0"
