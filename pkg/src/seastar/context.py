"""Context queries over the application->platform mapping.

Only the finest-grained placements (thread onto core by default) are stored;
the context of coarser entities is a derived view: a process sits on the
processors hosting its threads, a job on the nodes hosting its processes.
Platform-side context inverts the mapping and returns every application
entity of the compatible kind hosted there.
"""

from __future__ import annotations

from dataclasses import dataclass

from .kinds import APPLICATION, PLATFORM
from .model import ModelStore, NotAliveAtError, StaticGraph, UnknownGraphError


class UnknownApplicationError(KeyError):
    pass


@dataclass(frozen=True)
class StaticMapping:
    app_entity: str
    platform_entity: str
    t_start: int
    t_end: int | None


@dataclass(frozen=True)
class StaticContextGraph:
    """Platform snapshot, one or all application snapshots, and the active
    mappings between them at a point in time."""

    at: int
    platform: StaticGraph | None
    applications: tuple[StaticGraph, ...]
    mappings: tuple[StaticMapping, ...]

    def mapping_pairs(self) -> set[tuple[str, str]]:
        return {(m.app_entity, m.platform_entity) for m in self.mappings}


class ContextView:
    """Bidirectional context resolution against a :class:`ModelStore`."""

    def __init__(self, store: ModelStore):
        self.store = store
        self.registry = store.registry

    def context_of(self, entity_id: str, t: int) -> list[str]:
        """Entities on the opposite side hosting / hosted by ``entity_id``.

        Application side resolves to at most one platform entity per thread
        and to the lifted union for coarser kinds; platform side returns all
        compatible application entities placed there, sorted.
        """
        node = self.store.node(entity_id)
        if not node.alive_at(t):
            raise NotAliveAtError(entity_id, t)
        kind = self.registry.get(node.kind)
        if kind.side == APPLICATION:
            return self._app_to_platform(entity_id, kind.depth, t)
        return self._platform_to_app(entity_id, kind.depth, t)

    def _app_to_platform(self, entity_id: str, depth: int, t: int) -> list[str]:
        mapping = self.store.active_mapping_of(entity_id, t)
        if mapping is not None:
            return [mapping.platform_entity]
        leaves = self._descendant_leaves(entity_id, t)
        platform_ids = set()
        for leaf in leaves:
            rec = self.store.active_mapping_of(leaf, t)
            if rec is None:
                continue
            lifted = self._lift(rec.platform_entity, depth, t)
            if lifted is not None:
                platform_ids.add(lifted)
        return sorted(platform_ids)

    def _descendant_leaves(self, entity_id: str, t: int) -> list[str]:
        """Deepest-kind descendants (threads) alive at t, entity included if leaf."""
        node = self.store.node(entity_id)
        if self.registry.get(node.kind).child is None:
            return [entity_id]
        out: list[str] = []
        for child in self.store.navigate(entity_id, "children", t):
            out.extend(self._descendant_leaves(child, t))
        return out

    def _lift(self, platform_entity: str, to_depth: int, t: int) -> str | None:
        """Walk a platform entity up the hierarchy to the requested depth."""
        current = platform_entity
        while self.registry.get(self.store.node(current).kind).depth > to_depth:
            parents = self.store.navigate(current, "parent", t)
            if not parents:
                return None
            current = parents[0]
        return current

    def _platform_to_app(self, entity_id: str, depth: int, t: int) -> list[str]:
        cores = self._platform_leaves(entity_id, t)
        app_ids = set()
        for core in cores:
            for rec in self.store.mappings_onto(core, t):
                lifted = self._lift_app(rec.app_entity, depth, t)
                if lifted is not None:
                    app_ids.add(lifted)
        return sorted(app_ids)

    def _platform_leaves(self, entity_id: str, t: int) -> list[str]:
        node = self.store.node(entity_id)
        if self.registry.get(node.kind).child is None:
            return [entity_id]
        out: list[str] = []
        for child in self.store.navigate(entity_id, "children", t):
            out.extend(self._platform_leaves(child, t))
        return out

    def _lift_app(self, app_entity: str, to_depth: int, t: int) -> str | None:
        current = app_entity
        while self.registry.get(self.store.node(current).kind).depth > to_depth:
            parents = self.store.navigate(current, "parent", t)
            if not parents:
                return None
            current = parents[0]
        return current

    # ------------------------------------------------------------------ #
    # context graphs
    # ------------------------------------------------------------------ #

    def global_context(self, t: int) -> StaticContextGraph:
        """Platform + every application + all mappings active at t."""
        return self._context_graph(t, owners=self.store.applications())

    def app_context_subgraph(self, app_id: str, t: int) -> StaticContextGraph:
        """One application's sub-graph of the global context graph."""
        try:
            self.store.application_graph_id(app_id)
        except UnknownGraphError:
            raise UnknownApplicationError(app_id) from None
        return self._context_graph(t, owners=[app_id])

    def _context_graph(self, t: int, owners: list[str]) -> StaticContextGraph:
        try:
            platform = self.store.snapshot("platform", t)
        except UnknownGraphError:
            platform = None
        apps = tuple(
            self.store.snapshot(self.store.application_graph_id(owner), t)
            for owner in owners
        )
        app_entities: set[str] = set()
        for app in apps:
            app_entities |= app.node_ids()
        mappings = tuple(
            StaticMapping(m.app_entity, m.platform_entity, m.t_start, m.t_end)
            for m in self.store.mappings()
            if m.active_at(t) and m.app_entity in app_entities
        )
        return StaticContextGraph(at=t, platform=platform, applications=apps, mappings=mappings)
