from . import topics
from .cloud import CloudNode, SinkSpec, SourceSpec, TransformerSpec
from .edge import EdgeNode
from .fog import FogNode
from .user import UserNode

__all__ = [
    "topics",
    "FogNode",
    "CloudNode",
    "EdgeNode",
    "UserNode",
    "TransformerSpec",
    "SinkSpec",
    "SourceSpec",
]
