"""Event-sourced store for the nested, time-variant anatomy graphs.

The store holds the platform anatomy graph and one anatomy graph per
application. State changes only through :meth:`ModelStore.apply_event`; every
node, edge and context mapping carries a half-open validity interval
``[t_start, t_end)`` so any past instant can be reconstructed with
:meth:`ModelStore.snapshot`.

Concurrency contract: a single writer applies events in seq order while many
readers take snapshots; the internal lock keeps critical sections short and
snapshots are immutable values safe to share across threads.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .events import (
    CLOSE_EDGE,
    CLOSE_NODE,
    CREATE_EDGE,
    CREATE_NODE,
    MAP,
    UNMAP,
    StructuralEvent,
)
from .kinds import APPLICATION, DEFAULT_REGISTRY, PLATFORM, KindRegistry

PLATFORM_GRAPH_ID = "platform"

# Rejection reasons for apply_event. The first four are the primary error
# vocabulary; the rest guard edge cases the event stream can still contain.
CROSS_SUBGRAPH_EDGE = "CrossSubgraphEdge"
UNKNOWN_ENTITY = "UnknownEntity"
KIND_MISMATCH = "KindMismatch"
NON_MONOTONE_SEQ = "NonMonotoneSeq"
KIND_INCOMPATIBLE = "KindIncompatible"
ALREADY_MAPPED = "AlreadyMapped"
NOT_MAPPED = "NotMapped"
DUPLICATE_ENTITY = "DuplicateEntity"
ENTITY_CLOSED = "EntityClosed"
LIFETIME_VIOLATION = "LifetimeViolation"


class UnknownGraphError(KeyError):
    pass


class UnknownEntityError(KeyError):
    pass


class NotAliveAtError(ValueError):
    def __init__(self, entity_id: str, t: int):
        super().__init__(f"{entity_id} is not alive at t={t}")
        self.entity_id = entity_id
        self.t = t


@dataclass
class NodeRecord:
    id: str
    kind: str
    graph_id: str
    t_start: int
    t_end: int | None = None
    labels: dict[str, str] = field(default_factory=dict)
    nested_graph_id: str | None = None

    def alive_at(self, t: int) -> bool:
        return self.t_start <= t and (self.t_end is None or t < self.t_end)


@dataclass
class EdgeRecord:
    id: str
    source: str
    target: str
    graph_id: str
    t_start: int
    t_end: int | None = None
    labels: dict[str, str] = field(default_factory=dict)

    def alive_at(self, t: int) -> bool:
        return self.t_start <= t and (self.t_end is None or t < self.t_end)


@dataclass
class MappingRecord:
    id: str
    app_entity: str
    platform_entity: str
    t_start: int
    t_end: int | None = None

    def active_at(self, t: int) -> bool:
        return self.t_start <= t and (self.t_end is None or t < self.t_end)


@dataclass
class GraphRecord:
    id: str
    side: str
    owner: str
    root: bool
    parent_node: str | None = None
    node_ids: set[str] = field(default_factory=set)
    edge_ids: set[str] = field(default_factory=set)


@dataclass(frozen=True)
class StaticNode:
    id: str
    kind: str
    t_start: int
    t_end: int | None
    labels: tuple[tuple[str, str], ...]
    nested: "StaticGraph | None"


@dataclass(frozen=True)
class StaticEdge:
    id: str
    source: str
    target: str
    t_start: int
    t_end: int | None
    labels: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class StaticGraph:
    """Immutable sub-state of one anatomy graph at a point in time."""

    id: str
    side: str
    owner: str
    at: int
    nodes: tuple[StaticNode, ...]
    edges: tuple[StaticEdge, ...]

    def node_ids(self) -> set[str]:
        out: set[str] = set()
        for node in self.nodes:
            out.add(node.id)
            if node.nested is not None:
                out |= node.nested.node_ids()
        return out

    def edge_ids(self) -> set[str]:
        out = {edge.id for edge in self.edges}
        for node in self.nodes:
            if node.nested is not None:
                out |= node.nested.edge_ids()
        return out


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


@dataclass(frozen=True)
class ApplyResult:
    applied: bool
    reason: str | None = None
    duplicate: bool = False

    def __bool__(self) -> bool:
        return self.applied


_APPLIED = ApplyResult(True)


def _nested_graph_id(node_id: str) -> str:
    return f"{node_id}::sub"


class ModelStore:
    """The live anatomy + context model, mutated only via structural events."""

    def __init__(self, registry: KindRegistry | None = None):
        self.registry = registry or DEFAULT_REGISTRY
        self._lock = threading.RLock()
        self._graphs: dict[str, GraphRecord] = {}
        self._nodes: dict[str, NodeRecord] = {}
        self._edges: dict[str, EdgeRecord] = {}
        self._mappings: list[MappingRecord] = []
        self._active_mapping: dict[str, MappingRecord] = {}
        self._mappings_by_platform: dict[str, list[MappingRecord]] = {}
        self._mappings_by_app: dict[str, list[MappingRecord]] = {}
        self._app_graphs: dict[str, str] = {}  # owner -> root graph id
        self._last_seq = 0
        self._log: list[StructuralEvent] = []

    # ------------------------------------------------------------------ #
    # event application
    # ------------------------------------------------------------------ #

    @property
    def last_seq(self) -> int:
        return self._last_seq

    @property
    def event_log(self) -> tuple[StructuralEvent, ...]:
        """Applied events only; rejected events never reach the log."""
        with self._lock:
            return tuple(self._log)

    def apply_event(self, event: StructuralEvent) -> ApplyResult:
        """Apply one event; idempotent for already-seen seq numbers.

        A validation failure still consumes the seq so one bad event cannot
        wedge the stream, but leaves the state untouched and unlogged.
        """
        with self._lock:
            if event.seq <= self._last_seq:
                return ApplyResult(True, duplicate=True)
            if event.seq != self._last_seq + 1:
                return ApplyResult(False, NON_MONOTONE_SEQ)
            self._last_seq = event.seq
            reason = self._validate_and_apply(event)
            if reason is not None:
                return ApplyResult(False, reason)
            self._log.append(event)
            return _APPLIED

    def replay(self, events: Iterable[StructuralEvent]) -> int:
        """Rebuild state from a durable log (seq gaps allowed), returns count."""
        count = 0
        with self._lock:
            for event in events:
                if event.seq <= self._last_seq:
                    continue
                self._last_seq = event.seq - 1
                result = self.apply_event(event)
                if not result.applied:
                    raise ValueError(
                        f"corrupt event log: seq {event.seq} rejected ({result.reason})"
                    )
                count += 1
        return count

    def _validate_and_apply(self, event: StructuralEvent) -> str | None:
        action, p, ts = event.action, event.payload, event.ts
        if action == CREATE_NODE:
            return self._create_node(p, ts)
        if action == CLOSE_NODE:
            return self._close_node(p, ts)
        if action == CREATE_EDGE:
            return self._create_edge(p, ts)
        if action == CLOSE_EDGE:
            return self._close_edge(p, ts)
        if action == MAP:
            return self._map(p, ts, event.seq)
        if action == UNMAP:
            return self._unmap(p, ts)
        return f"UnknownAction:{action}"

    def _create_node(self, p: dict, ts: int) -> str | None:
        node_id, kind_name = p.get("id"), p.get("kind")
        if not node_id or not kind_name or not self.registry.has(kind_name):
            return KIND_MISMATCH
        if node_id in self._nodes:
            return DUPLICATE_ENTITY
        kind = self.registry.get(kind_name)
        parent_id = p.get("parent")

        if parent_id is None:
            if kind.depth != 0:
                return KIND_MISMATCH  # non-root kinds need a parent
            owner = p.get("owner") or (PLATFORM if kind.side == PLATFORM else None)
            if owner is None:
                return KIND_MISMATCH
            graph = self._root_graph_for(kind.side, owner)
        else:
            parent = self._nodes.get(parent_id)
            if parent is None:
                return UNKNOWN_ENTITY
            if not parent.alive_at(ts):
                return ENTITY_CLOSED
            expected_child = self.registry.get(parent.kind).child
            if expected_child != kind_name:
                return KIND_MISMATCH
            if parent.t_start > ts:
                return LIFETIME_VIOLATION
            graph = self._ensure_nested_graph(parent)

        record = NodeRecord(
            id=node_id, kind=kind_name, graph_id=graph.id, t_start=ts,
            labels=dict(p.get("labels") or {}),
        )
        self._nodes[node_id] = record
        graph.node_ids.add(node_id)
        return None

    def _root_graph_for(self, side: str, owner: str) -> GraphRecord:
        graph_id = PLATFORM_GRAPH_ID if side == PLATFORM else owner
        graph = self._graphs.get(graph_id)
        if graph is None:
            graph = GraphRecord(id=graph_id, side=side, owner=owner, root=True)
            self._graphs[graph_id] = graph
            if side == APPLICATION:
                self._app_graphs[owner] = graph_id
        return graph

    def _ensure_nested_graph(self, parent: NodeRecord) -> GraphRecord:
        if parent.nested_graph_id is None:
            parent_graph = self._graphs[parent.graph_id]
            graph = GraphRecord(
                id=_nested_graph_id(parent.id), side=parent_graph.side,
                owner=parent_graph.owner, root=False, parent_node=parent.id,
            )
            self._graphs[graph.id] = graph
            parent.nested_graph_id = graph.id
        return self._graphs[parent.nested_graph_id]

    def _close_node(self, p: dict, ts: int) -> str | None:
        node = self._nodes.get(p.get("id", ""))
        if node is None:
            return UNKNOWN_ENTITY
        if node.t_end is not None:
            return ENTITY_CLOSED
        if ts <= node.t_start:  # lifetimes are half-open and non-empty
            return LIFETIME_VIOLATION
        self._close_subtree(node, ts)
        return None

    def _close_subtree(self, node: NodeRecord, ts: int) -> None:
        """Close a node, its live descendants, incident edges and mappings.

        Children may not outlive parents, and edges/mappings may not outlive
        their endpoints; cascading keeps snapshots consistent by construction.
        """
        node.t_end = ts
        for edge in self._edges.values():
            if edge.t_end is None and node.id in (edge.source, edge.target):
                edge.t_end = ts
        mapping = self._active_mapping.get(node.id)
        if mapping is not None:
            mapping.t_end = ts
            del self._active_mapping[node.id]
        for rec in self._mappings_by_platform.get(node.id, []):
            if rec.t_end is None:
                rec.t_end = ts
                self._active_mapping.pop(rec.app_entity, None)
        if node.nested_graph_id is not None:
            nested = self._graphs[node.nested_graph_id]
            for child_id in nested.node_ids:
                child = self._nodes[child_id]
                if child.t_end is None:
                    self._close_subtree(child, ts)

    def _create_edge(self, p: dict, ts: int) -> str | None:
        edge_id = p.get("id")
        if not edge_id or edge_id in self._edges:
            return DUPLICATE_ENTITY
        source = self._nodes.get(p.get("source", ""))
        target = self._nodes.get(p.get("target", ""))
        if source is None or target is None:
            return UNKNOWN_ENTITY
        if source.graph_id != target.graph_id:
            return CROSS_SUBGRAPH_EDGE
        if not source.alive_at(ts) or not target.alive_at(ts):
            return ENTITY_CLOSED
        record = EdgeRecord(
            id=edge_id, source=source.id, target=target.id,
            graph_id=source.graph_id, t_start=ts, labels=dict(p.get("labels") or {}),
        )
        self._edges[edge_id] = record
        self._graphs[source.graph_id].edge_ids.add(edge_id)
        return None

    def _close_edge(self, p: dict, ts: int) -> str | None:
        edge = self._edges.get(p.get("id", ""))
        if edge is None:
            return UNKNOWN_ENTITY
        if edge.t_end is not None:
            return ENTITY_CLOSED
        if ts <= edge.t_start:
            return LIFETIME_VIOLATION
        edge.t_end = ts
        return None

    def _map(self, p: dict, ts: int, seq: int) -> str | None:
        app = self._nodes.get(p.get("app_entity", ""))
        plat = self._nodes.get(p.get("platform_entity", ""))
        if app is None or plat is None:
            return UNKNOWN_ENTITY
        app_side = self.registry.get(app.kind).side
        plat_side = self.registry.get(plat.kind).side
        if app_side != APPLICATION or plat_side != PLATFORM:
            return KIND_INCOMPATIBLE
        if not self.registry.compatible(app.kind, plat.kind):
            return KIND_INCOMPATIBLE
        if not app.alive_at(ts) or not plat.alive_at(ts):
            return ENTITY_CLOSED
        if app.id in self._active_mapping:
            return ALREADY_MAPPED
        record = MappingRecord(
            id=f"map:{seq}", app_entity=app.id, platform_entity=plat.id, t_start=ts,
        )
        self._mappings.append(record)
        self._active_mapping[app.id] = record
        self._mappings_by_platform.setdefault(plat.id, []).append(record)
        self._mappings_by_app.setdefault(app.id, []).append(record)
        return None

    def _unmap(self, p: dict, ts: int) -> str | None:
        app_id = p.get("app_entity", "")
        if app_id not in self._nodes:
            return UNKNOWN_ENTITY
        record = self._active_mapping.get(app_id)
        if record is None:
            return NOT_MAPPED
        if ts < record.t_start:
            return LIFETIME_VIOLATION
        record.t_end = ts
        del self._active_mapping[app_id]
        return None

    # ------------------------------------------------------------------ #
    # read side
    # ------------------------------------------------------------------ #

    def node(self, entity_id: str) -> NodeRecord:
        with self._lock:
            rec = self._nodes.get(entity_id)
            if rec is None:
                raise UnknownEntityError(entity_id)
            return rec

    def edge(self, edge_id: str) -> EdgeRecord:
        with self._lock:
            rec = self._edges.get(edge_id)
            if rec is None:
                raise UnknownEntityError(edge_id)
            return rec

    def has_entity(self, entity_id: str) -> bool:
        with self._lock:
            return entity_id in self._nodes or entity_id in self._edges

    def entity_lifetime(self, entity_id: str) -> tuple[int, int | None]:
        with self._lock:
            rec = self._nodes.get(entity_id) or self._edges.get(entity_id)
            if rec is None:
                raise UnknownEntityError(entity_id)
            return rec.t_start, rec.t_end

    def alive(self, entity_id: str, t: int) -> bool:
        return self.node(entity_id).alive_at(t)

    def applications(self) -> list[str]:
        with self._lock:
            return sorted(self._app_graphs)

    def application_graph_id(self, owner: str) -> str:
        with self._lock:
            graph_id = self._app_graphs.get(owner)
            if graph_id is None:
                raise UnknownGraphError(owner)
            return graph_id

    def graph_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._graphs)

    def entities_of_kind(self, kind: str, t: int | None = None) -> list[str]:
        """Ids of all nodes of a kind, optionally only those alive at ``t``."""
        with self._lock:
            out = [
                rec.id for rec in self._nodes.values()
                if rec.kind == kind and (t is None or rec.alive_at(t))
            ]
        return sorted(out)

    def latest_ts(self) -> int:
        """Timestamp of the newest applied event (0 when empty)."""
        with self._lock:
            return self._log[-1].ts if self._log else 0

    def mappings(self) -> tuple[MappingRecord, ...]:
        with self._lock:
            return tuple(self._mappings)

    def active_mapping_of(self, app_entity: str, t: int) -> MappingRecord | None:
        with self._lock:
            for rec in self._mappings_by_app.get(app_entity, []):
                if rec.active_at(t):
                    return rec
            return None

    def mappings_onto(self, platform_entity: str, t: int) -> list[MappingRecord]:
        with self._lock:
            return [
                rec for rec in self._mappings_by_platform.get(platform_entity, [])
                if rec.active_at(t)
            ]

    def snapshot(self, graph_id: str, t: int) -> StaticGraph:
        """Immutable state of a graph at time t, nested graphs included."""
        with self._lock:
            graph = self._graphs.get(graph_id)
            if graph is None:
                raise UnknownGraphError(graph_id)
            return self._snapshot_graph(graph, t)

    def _snapshot_graph(self, graph: GraphRecord, t: int) -> StaticGraph:
        nodes = []
        for node_id in sorted(graph.node_ids):
            rec = self._nodes[node_id]
            if not rec.alive_at(t):
                continue
            nested = None
            if rec.nested_graph_id is not None:
                nested = self._snapshot_graph(self._graphs[rec.nested_graph_id], t)
            nodes.append(
                StaticNode(
                    id=rec.id, kind=rec.kind, t_start=rec.t_start, t_end=rec.t_end,
                    labels=tuple(sorted(rec.labels.items())), nested=nested,
                )
            )
        edges = []
        for edge_id in sorted(graph.edge_ids):
            rec = self._edges[edge_id]
            if rec.alive_at(t):
                edges.append(
                    StaticEdge(
                        id=rec.id, source=rec.source, target=rec.target,
                        t_start=rec.t_start, t_end=rec.t_end,
                        labels=tuple(sorted(rec.labels.items())),
                    )
                )
        return StaticGraph(
            id=graph.id, side=graph.side, owner=graph.owner, at=t,
            nodes=tuple(nodes), edges=tuple(edges),
        )

    def navigate(self, entity_id: str, relation: str, t: int) -> list[str]:
        """parent/children/siblings of an entity alive at t, as sorted ids."""
        with self._lock:
            rec = self._nodes.get(entity_id)
            if rec is None:
                raise UnknownEntityError(entity_id)
            if not rec.alive_at(t):
                raise NotAliveAtError(entity_id, t)
            if relation == "parent":
                parent_id = self._graphs[rec.graph_id].parent_node
                return [parent_id] if parent_id is not None else []
            if relation == "children":
                if rec.nested_graph_id is None:
                    return []
                nested = self._graphs[rec.nested_graph_id]
                return sorted(
                    nid for nid in nested.node_ids if self._nodes[nid].alive_at(t)
                )
            if relation == "siblings":
                graph = self._graphs[rec.graph_id]
                return sorted(
                    nid for nid in graph.node_ids
                    if nid != entity_id and self._nodes[nid].alive_at(t)
                )
            raise ValueError(f"unknown relation {relation!r}")

    # ------------------------------------------------------------------ #
    # validation
    # ------------------------------------------------------------------ #

    def validate(self, graph_id: str | None = None) -> list[Violation]:
        """Check every structural invariant; violations returned as data."""
        with self._lock:
            graphs = (
                [self._require_graph(graph_id)] if graph_id is not None
                else list(self._graphs.values())
            )
            violations: list[Violation] = []
            for graph in graphs:
                violations.extend(self._validate_graph(graph))
            if graph_id is None:
                violations.extend(self._validate_nesting_forest())
                violations.extend(self._validate_mappings())
            return violations

    def _require_graph(self, graph_id: str) -> GraphRecord:
        graph = self._graphs.get(graph_id)
        if graph is None:
            raise UnknownGraphError(graph_id)
        return graph

    def _validate_graph(self, graph: GraphRecord) -> Iterator[Violation]:
        for node_id in graph.node_ids:
            node = self._nodes[node_id]
            if node.t_end is not None and node.t_start >= node.t_end:
                yield Violation("EmptyLifetime", f"node {node_id}")
            if self.registry.get(node.kind).side != graph.side:
                yield Violation("SideMismatch", f"node {node_id} in graph {graph.id}")
            if graph.parent_node is not None:
                parent = self._nodes[graph.parent_node]
                expected = self.registry.get(parent.kind).child
                if node.kind != expected:
                    yield Violation(KIND_MISMATCH, f"node {node_id} under {parent.id}")
                if not self._interval_contains(
                    (parent.t_start, parent.t_end), (node.t_start, node.t_end)
                ):
                    yield Violation(
                        LIFETIME_VIOLATION, f"node {node_id} outlives parent {parent.id}"
                    )
        for edge_id in graph.edge_ids:
            edge = self._edges[edge_id]
            source = self._nodes.get(edge.source)
            target = self._nodes.get(edge.target)
            if source is None or target is None:
                yield Violation(UNKNOWN_ENTITY, f"edge {edge_id} endpoint missing")
                continue
            if source.graph_id != target.graph_id or source.graph_id != graph.id:
                yield Violation(CROSS_SUBGRAPH_EDGE, f"edge {edge_id}")
            for endpoint in (source, target):
                if not self._interval_contains(
                    (endpoint.t_start, endpoint.t_end), (edge.t_start, edge.t_end)
                ):
                    yield Violation(
                        LIFETIME_VIOLATION, f"edge {edge_id} outlives {endpoint.id}"
                    )

    @staticmethod
    def _interval_contains(
        outer: tuple[int, int | None], inner: tuple[int, int | None]
    ) -> bool:
        if inner[0] < outer[0]:
            return False
        if outer[1] is None:
            return True
        return inner[1] is not None and inner[1] <= outer[1]

    def _validate_nesting_forest(self) -> Iterator[Violation]:
        for start in self._graphs:
            seen = set()
            current: str | None = start
            while current is not None:
                if current in seen:
                    yield Violation("NestingCycle", f"graph {start}")
                    break
                seen.add(current)
                parent_node = self._graphs[current].parent_node
                current = self._nodes[parent_node].graph_id if parent_node else None

    def _validate_mappings(self) -> Iterator[Violation]:
        for rec in self._mappings:
            app = self._nodes.get(rec.app_entity)
            plat = self._nodes.get(rec.platform_entity)
            if app is None or plat is None:
                yield Violation(UNKNOWN_ENTITY, f"mapping {rec.id}")
                continue
            if not self.registry.compatible(app.kind, plat.kind):
                yield Violation(KIND_INCOMPATIBLE, f"mapping {rec.id}")
        by_app: dict[str, list[MappingRecord]] = {}
        for rec in self._mappings:
            by_app.setdefault(rec.app_entity, []).append(rec)
        for app_id, recs in by_app.items():
            spans = sorted((r.t_start, r.t_end) for r in recs)
            for (s1, e1), (s2, _) in zip(spans, spans[1:]):
                if e1 is None or s2 < e1:
                    yield Violation("OverlappingMappings", f"app entity {app_id}")
