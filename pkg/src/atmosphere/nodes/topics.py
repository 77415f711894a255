"""Topic naming convention shared by every tier.

``<fog>/in`` feeds the fog CEP engine; ``<fog>/out/{edge,cloud,fog}`` carry
detected situations to each audience; ``<fog>/user`` is the user bridge that
bypasses the engine entirely. Cloud nodes ingest ``<cloud>/in/<source>`` and
publish fog-bound detections on ``<cloud>/out/fog``.
"""

from __future__ import annotations

AUDIENCES = ("edge", "cloud", "fog")


def fog_input(fog_id: str) -> str:
    return f"{fog_id}/in"


def fog_output(fog_id: str, audience: str) -> str:
    if audience not in AUDIENCES:
        raise ValueError(f"unknown routing audience {audience!r}")
    return f"{fog_id}/out/{audience}"


def user_topic(fog_id: str) -> str:
    return f"{fog_id}/user"


def cloud_source(cloud_id: str, source: str) -> str:
    return f"{cloud_id}/in/{source}"


def cloud_fog_output(cloud_id: str) -> str:
    return f"{cloud_id}/out/fog"
