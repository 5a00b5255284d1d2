"""Telemetry sensors: the structure exporter and the metric exporter.

The context exporter observes a source's structure, diffs it against the
last exported state and publishes the minimal structural-event delta; the
node exporter publishes one sample per (alive entity, allowed metric) per
period. Sample timestamps come from the source's clock at collection time.

Structural events are never dropped under backpressure (publishes retry);
metric samples may be dropped and are counted.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Protocol

from .bus import Bus, BufferFullError, TOPIC_METRIC_SAMPLES, TOPIC_STRUCTURAL_EVENTS
from .events import StructuralEvent
from .kinds import APPLICATION, DEFAULT_REGISTRY, PLATFORM, mint_id
from .sim import EdgeView, EntityView, StructureView

logger = logging.getLogger(__name__)

NANOS_PER_SECOND = 1_000_000_000


class SourceUnavailableError(RuntimeError):
    pass


class SensorSource(Protocol):
    def clock(self) -> int: ...

    def enumerate_platform(self) -> tuple[EntityView, ...]: ...

    def poll_structure(self) -> StructureView: ...

    def poll_metrics(self, entity: EntityView) -> list[tuple[str, float]]: ...


@dataclass(frozen=True)
class SensorConfig:
    metric_period_ns: int = NANOS_PER_SECOND
    structure_period_ns: int = NANOS_PER_SECOND // 2
    metric_allowlist: frozenset[str] | None = None  # None allows everything

    def __post_init__(self) -> None:
        if self.metric_period_ns <= 0 or self.structure_period_ns <= 0:
            raise ValueError("sensor periods must be > 0")

    def allows(self, metric: str) -> bool:
        return self.metric_allowlist is None or metric in self.metric_allowlist


class ContextExporter:
    """Diff-based structure exporter minting entity ids and event seqs."""

    def __init__(self, source: SensorSource, bus: Bus, config: SensorConfig | None = None):
        self.source = source
        self.bus = bus
        self.config = config or SensorConfig()
        self.registry = DEFAULT_REGISTRY
        self._seq = 0
        self._next_due: int | None = None
        self._platform_exported = False
        self._entities: dict[str, EntityView] = {}      # stable key -> view
        self._placements: dict[str, str] = {}           # thread key -> core key
        self._edges: dict[str, EdgeView] = {}
        self.events_published = 0
        self.source_errors = 0

    def resume_from(self, model_store, view: StructureView) -> None:
        """Prime last-seen state after a restart so unchanged entities are
        not re-created; continues the seq stream of the given store."""
        self._seq = model_store.last_seq
        self._platform_exported = True
        self._entities = {e.stable_key: e for e in view.entities}
        self._placements = dict(view.placements)
        self._edges = {e.stable_key: e for e in view.edges}

    def maybe_step(self, now_ns: int) -> int:
        """Run the export if the structure period elapsed; returns events sent."""
        if self._next_due is None:
            self._next_due = now_ns
        if now_ns < self._next_due:
            return 0
        published = self.step()
        while self._next_due <= now_ns:
            self._next_due += self.config.structure_period_ns
        return published

    def step(self) -> int:
        try:
            ts = self.source.clock()
            published = 0
            if not self._platform_exported:
                published += self._export_platform(ts)
                self._platform_exported = True
            view = self.source.poll_structure()
        except Exception as exc:
            # unreachable source: skip this cycle, retry on the next period
            self.source_errors += 1
            logger.warning("structure poll failed, retrying next period: %s", exc)
            return 0
        published += self._export_delta(view, ts)
        self.events_published += published
        return published

    def _export_platform(self, ts: int) -> int:
        count = 0
        for view in self.source.enumerate_platform():
            parent = (
                mint_id(PLATFORM, self._parent_kind(view), view.parent_key)
                if view.parent_key else None
            )
            self._publish("create_node", ts, {
                "id": view.entity_id, "kind": view.kind, "parent": parent,
                "owner": PLATFORM if view.parent_key is None else None,
                "labels": dict(view.labels),
            })
            count += 1
        return count

    def _parent_kind(self, view: EntityView) -> str:
        # fixed hierarchies: the parent kind is the one whose child is ours
        for name in self.registry.names():
            if self.registry.get(name).child == view.kind:
                return name
        raise SourceUnavailableError(f"no parent kind for {view.kind}")

    def _export_delta(self, view: StructureView, ts: int) -> int:
        current = {e.stable_key: e for e in view.entities}
        placements = dict(view.placements)
        edges = {e.stable_key: e for e in view.edges}
        count = 0

        created = [key for key in current if key not in self._entities]
        created.sort(key=lambda k: (self.registry.get(current[k].kind).depth, k))
        for key in created:
            entity = current[key]
            parent = None
            if entity.parent_key is not None:
                parent_view = current.get(entity.parent_key) or \
                    self._entities.get(entity.parent_key)
                if parent_view is None:
                    logger.warning("skipping %s: parent %s unknown", key, entity.parent_key)
                    continue
                parent = parent_view.entity_id
            self._publish("create_node", ts, {
                "id": entity.entity_id, "kind": entity.kind, "parent": parent,
                "owner": entity.entity_id if parent is None else None,
                "labels": dict(entity.labels),
            })
            count += 1

        for key, edge in edges.items():
            if key not in self._edges:
                self._publish("create_edge", ts, {
                    "id": mint_id(APPLICATION, "edge", key),
                    "source": mint_id(APPLICATION, "process", edge.source_key),
                    "target": mint_id(APPLICATION, "process", edge.target_key),
                    "labels": dict(edge.labels),
                })
                count += 1

        # unmap before map so migrations never double-book a thread
        for thread_key, core_key in self._placements.items():
            if thread_key not in current:
                continue  # thread closing below; mapping cascades shut
            if placements.get(thread_key) != core_key:
                self._publish("unmap", ts, {
                    "app_entity": mint_id(APPLICATION, "thread", thread_key),
                })
                count += 1
        for thread_key, core_key in sorted(placements.items()):
            if self._placements.get(thread_key) != core_key:
                self._publish("map", ts, {
                    "app_entity": mint_id(APPLICATION, "thread", thread_key),
                    "platform_entity": mint_id(PLATFORM, "core", core_key),
                })
                count += 1

        for key, edge in self._edges.items():
            if key in edges:
                continue
            if edge.source_key in current and edge.target_key in current:
                self._publish("close_edge", ts, {
                    "id": mint_id(APPLICATION, "edge", key),
                })
                count += 1
            # otherwise an endpoint close below cascades the edge shut

        vanished = {key for key in self._entities if key not in current}
        for key in sorted(vanished):
            entity = self._entities[key]
            if entity.parent_key in vanished:
                continue  # parent close cascades
            self._publish("close_node", ts, {"id": entity.entity_id})
            count += 1

        self._entities = current
        self._placements = placements
        self._edges = edges
        return count

    def _publish(self, action: str, ts: int, payload: dict) -> None:
        self._seq += 1
        event = StructuralEvent(seq=self._seq, ts=ts, action=action, payload=payload)
        data = event.to_json().encode()
        # structural events are never dropped: retry through backpressure
        for attempt in range(1000):
            try:
                self.bus.publish(TOPIC_STRUCTURAL_EVENTS, data)
                return
            except BufferFullError:
                time.sleep(0.01)
        raise BufferFullError(TOPIC_STRUCTURAL_EVENTS)


class NodeExporter:
    """Periodic metric sampler for every alive entity."""

    def __init__(self, source: SensorSource, bus: Bus, config: SensorConfig | None = None):
        self.source = source
        self.bus = bus
        self.config = config or SensorConfig()
        self._next_due: int | None = None
        self.samples_published = 0
        self.samples_dropped = 0
        self.source_errors = 0

    def maybe_step(self, now_ns: int) -> int:
        if self._next_due is None:
            self._next_due = now_ns
        if now_ns < self._next_due:
            return 0
        published = self.step()
        while self._next_due <= now_ns:
            self._next_due += self.config.metric_period_ns
        return published

    def step(self) -> int:
        try:
            ts = self.source.clock()
            views = list(self.source.enumerate_platform())
            views.extend(self.source.poll_structure().entities)
        except Exception as exc:
            # a gap in the series; the next period retries
            self.source_errors += 1
            logger.warning("metric poll failed, retrying next period: %s", exc)
            return 0
        count = 0
        for view in views:
            try:
                samples = self.source.poll_metrics(view)
            except Exception:
                self.source_errors += 1
                continue
            for metric, value in samples:
                if not self.config.allows(metric):
                    continue
                payload = json.dumps({
                    "entity_id": view.entity_id, "metric": metric,
                    "ts": ts, "value": value,
                }).encode()
                try:
                    self.bus.publish(TOPIC_METRIC_SAMPLES, payload)
                    count += 1
                except BufferFullError:
                    self.samples_dropped += 1  # samples may drop, never events
        self.samples_published += count
        return count
