"""Resource objects: the JSON rendering of one graph entity.

The shape is fixed: ``timestamp``, ``parent_node``, ``child_nodes``,
``sibling_nodes``, ``attributes``, extended additively with ``kind`` and
``id``. Attributes carry a recent sample window per raw metric (newest last)
plus every registered derived metric of the entity's scope, evaluated at
render time; derived values that are unavailable are omitted.
"""

from __future__ import annotations

from typing import Any

from .context import ContextView
from .metrics import MetricEngine
from .model import ModelStore
from .timeseries import SeriesKey, TimeSeriesStore

RESOURCE_FIELDS = (
    "timestamp", "parent_node", "child_nodes", "sibling_nodes", "attributes",
)
DEFAULT_WINDOW = 10


class Renderer:
    def __init__(
        self,
        model: ModelStore,
        tseries: TimeSeriesStore,
        engine: MetricEngine | None = None,
        context: ContextView | None = None,
    ):
        self.model = model
        self.tseries = tseries
        self.engine = engine
        self.context = context or ContextView(model)
        self.registry = model.registry

    def render(self, entity_id: str, t: int, window: int = DEFAULT_WINDOW) -> dict[str, Any]:
        node = self.model.node(entity_id)  # raises UnknownEntityError
        kind = self.registry.get(node.kind)

        parent_node: dict[str, str] = {}
        for parent_id in self.model.navigate(entity_id, "parent", t):
            parent_node[self.model.node(parent_id).kind] = parent_id

        child_nodes: dict[str, list[str]] = {}
        child_kind = self.registry.child_of(node.kind)
        if child_kind is not None:
            child_nodes[child_kind.plural] = self.model.navigate(entity_id, "children", t)

        sibling_nodes = {
            kind.plural: self.model.navigate(entity_id, "siblings", t)
        }

        return {
            "timestamp": t,
            "parent_node": parent_node,
            "child_nodes": child_nodes,
            "sibling_nodes": sibling_nodes,
            "attributes": self._attributes(entity_id, node.kind, t, window),
            "kind": node.kind,
            "id": entity_id,
        }

    def _attributes(self, entity_id: str, kind: str, t: int, window: int
                    ) -> dict[str, list[list[float]]]:
        attributes: dict[str, list[list[float]]] = {}
        for metric in self.tseries.list_metrics(entity_id):
            samples = self.tseries.last_samples(SeriesKey(entity_id, metric), t, window)
            attributes[metric] = [[s.ts, s.value] for s in samples]
        if self.engine is not None:
            for derived in self.engine.metrics_for_scope(kind):
                value = self.engine.try_evaluate(derived.metric_name, entity_id, t)
                if value is not None:
                    attributes[derived.metric_name] = [[t, value]]
        return attributes

    def latest_metric_value(self, entity_id: str, metric: str, t: int) -> float | None:
        """Latest raw sample or derived evaluation; None when unavailable."""
        key = SeriesKey(entity_id, metric)
        if self.tseries.has_series(key):
            sample = self.tseries.latest_at(key, t)
            if sample is not None:
                return sample.value
        if self.engine is not None:
            try:
                self.engine.get_metric(metric)
            except KeyError:
                return None
            return self.engine.try_evaluate(metric, entity_id, t)
        return None

    def context_entities(self, entity_id: str, t: int) -> list[str]:
        return self.context.context_of(entity_id, t)
