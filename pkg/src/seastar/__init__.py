"""Temporal anatomy-graph model, telemetry store and context-aware API
service for HPC clusters, with a deterministic cluster simulator."""

__version__ = "0.1.0"

from .events import StructuralEvent
from .kinds import DEFAULT_REGISTRY, EntityKind, KindRegistry
from .model import ModelStore, StaticGraph
from .context import ContextView

__all__ = [
    "StructuralEvent",
    "DEFAULT_REGISTRY",
    "EntityKind",
    "KindRegistry",
    "ModelStore",
    "StaticGraph",
    "ContextView",
    "__version__",
]
