"""Selection-set query language: nested traversals in one call.

    { <type>(id: <id>|self) { <selection>* } }

A selection is a resource field name, a metric name (leaf: latest value), or
a traversal — ``parent``, ``context``, or ``siblings``/``children`` wrapped
around a plural-kind block:

    { process(id: 1) { siblings { processes { memory_uses } } } }

The result tree mirrors the query shape. Traversals over entity sets render
as maps keyed by entity id; a thread's context is a single object (or null
when unmapped). A bare traversal with no block renders the full resource
object(s). No mutations, variables, or fragments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .model import NotAliveAtError, UnknownEntityError
from .resources import RESOURCE_FIELDS, Renderer


class QueryParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class QueryEntityError(KeyError):
    """Root entity missing or dead: maps to 404."""


TRAVERSALS = ("parent", "children", "siblings", "context")

_ID_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_./-")


@dataclass(frozen=True)
class Selection:
    name: str
    block: "tuple[Selection, ...] | None" = None


@dataclass(frozen=True)
class Query:
    resource_type: str
    entity_ref: str  # raw id or the word 'self'
    selections: tuple[Selection, ...]


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, char: str) -> None:
        self._skip_ws()
        if self.peek() != char:
            raise QueryParseError(f"expected {char!r}", self.pos + 1)
        self.pos += 1

    def word(self, what: str) -> str:
        self._skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in _ID_CHARS:
            self.pos += 1
        if self.pos == start:
            raise QueryParseError(f"expected {what}", start + 1)
        return self.text[start:self.pos]

    def at_end(self) -> bool:
        self._skip_ws()
        return self.pos >= len(self.text)


def parse_query(text: str) -> Query:
    scanner = _Scanner(text)
    scanner.expect("{")
    resource_type = scanner.word("a resource type")
    scanner.expect("(")
    key = scanner.word("'id'")
    if key != "id":
        raise QueryParseError("expected 'id'", scanner.pos)
    scanner.expect(":")
    entity_ref = scanner.word("an entity id or self")
    scanner.expect(")")
    selections = _parse_block(scanner)
    scanner.expect("}")
    if not scanner.at_end():
        raise QueryParseError("trailing input", scanner.pos + 1)
    return Query(resource_type, entity_ref, selections)


def _parse_block(scanner: _Scanner) -> tuple[Selection, ...]:
    scanner.expect("{")
    selections: list[Selection] = []
    while scanner.peek() != "}":
        name = scanner.word("a selection")
        block = _parse_block(scanner) if scanner.peek() == "{" else None
        selections.append(Selection(name, block))
    scanner.expect("}")
    return tuple(selections)


class QueryExecutor:
    """Runs parsed queries against the renderer/model (master side only)."""

    def __init__(self, renderer: Renderer):
        self.renderer = renderer
        self.model = renderer.model
        self.registry = renderer.registry

    def execute(self, query: Query, entity_id: str, t: int) -> dict[str, Any]:
        try:
            node = self.model.node(entity_id)
        except UnknownEntityError:
            raise QueryEntityError(entity_id) from None
        if node.kind != query.resource_type or not node.alive_at(t):
            raise QueryEntityError(entity_id)
        return {query.resource_type: self._apply(entity_id, query.selections, t)}

    def _apply(self, entity_id: str, selections: tuple[Selection, ...], t: int
               ) -> dict[str, Any]:
        out: dict[str, Any] = {}
        resource: dict[str, Any] | None = None
        for selection in selections:
            name = selection.name
            if name in TRAVERSALS:
                out[name] = self._traverse(entity_id, selection, t)
                continue
            if name in RESOURCE_FIELDS or name in ("kind", "id"):
                if resource is None:
                    resource = self.renderer.render(entity_id, t)
                out[name] = resource[name]
                continue
            out[name] = self.renderer.latest_metric_value(entity_id, name, t)
        return out

    def _traverse(self, entity_id: str, selection: Selection, t: int) -> Any:
        name = selection.name
        if name == "parent":
            parents = self.model.navigate(entity_id, "parent", t)
            if not parents:
                return None
            if selection.block is None:
                return self.renderer.render(parents[0], t)
            return self._apply(parents[0], selection.block, t)
        if name == "context":
            targets = self.renderer.context_entities(entity_id, t)
            single = self.model.node(entity_id).kind == "thread"
            if single:
                if not targets:
                    return None
                if selection.block is None:
                    return self.renderer.render(targets[0], t)
                return self._apply(targets[0], selection.block, t)
            if selection.block is None:
                return {tid: self.renderer.render(tid, t) for tid in targets}
            return {tid: self._apply(tid, selection.block, t) for tid in targets}
        # children / siblings: one plural-kind block per the listing shape
        ids = self.model.navigate(entity_id, name, t)
        if selection.block is None:
            return {eid: self.renderer.render(eid, t) for eid in ids}
        result: dict[str, Any] = {}
        for inner in selection.block:
            plural = inner.name
            matching = [
                eid for eid in ids
                if self.registry.get(self.model.node(eid).kind).plural == plural
            ]
            if inner.block is None:
                result[plural] = {eid: self.renderer.render(eid, t) for eid in matching}
            else:
                result[plural] = {
                    eid: self._apply(eid, inner.block, t) for eid in matching
                }
        return result
