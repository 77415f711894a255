from .config import (
    CloudConfig,
    EdgeConfig,
    FogConfig,
    RunDefaults,
    ScenarioConfig,
    SimulatorSpec,
    TimelineEntry,
    UserConfig,
    load_scenario,
)
from .metrics import BUCKET_LABELS, MetricsRecord, MetricsSink, RunReport, bucketize
from .runner import RunOverrides, run_scenario

__all__ = [
    "load_scenario",
    "ScenarioConfig",
    "FogConfig",
    "CloudConfig",
    "EdgeConfig",
    "UserConfig",
    "SimulatorSpec",
    "TimelineEntry",
    "RunDefaults",
    "RunOverrides",
    "run_scenario",
    "RunReport",
    "MetricsRecord",
    "MetricsSink",
    "bucketize",
    "BUCKET_LABELS",
]
