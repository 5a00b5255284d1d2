"""Independent oracles the test suite checks the implementation against.

Everything here replays raw event/sample material with naive linear scans
and plain dicts — deliberately sharing no code with the package under test.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class OracleState:
    """Plain-dict replay of a structural event list."""

    # id -> {kind, parent, start, end}
    nodes: dict[str, dict] = field(default_factory=dict)
    # id -> {source, target, start, end}
    edges: dict[str, dict] = field(default_factory=dict)
    # list of {app, plat, start, end}
    mappings: list[dict] = field(default_factory=list)

    def alive_nodes(self, t: int) -> set[str]:
        return {i for i, n in self.nodes.items() if _alive(n, t)}

    def alive_edges(self, t: int) -> set[str]:
        return {i for i, e in self.edges.items() if _alive(e, t)}

    def active_mappings(self, t: int) -> set[tuple[str, str]]:
        return {(m["app"], m["plat"]) for m in self.mappings if _alive(m, t)}

    def children(self, node_id: str, t: int) -> set[str]:
        return {
            i for i, n in self.nodes.items()
            if n["parent"] == node_id and _alive(n, t)
        }

    def siblings(self, node_id: str, t: int) -> set[str]:
        # same (sub-)graph: same parent node, or same root graph (owner)
        me = self.nodes[node_id]
        return {
            i for i, n in self.nodes.items()
            if i != node_id and n["graph"] == me["graph"] and _alive(n, t)
        }

    def platform_of(self, app_id: str, t: int) -> set[str]:
        return {m["plat"] for m in self.mappings if m["app"] == app_id and _alive(m, t)}

    def apps_on(self, plat_id: str, t: int) -> set[str]:
        return {m["app"] for m in self.mappings if m["plat"] == plat_id and _alive(m, t)}


def _alive(rec: dict, t: int) -> bool:
    return rec["start"] <= t and (rec["end"] is None or t < rec["end"])


def replay_events(events) -> OracleState:
    """Sequentially replay (seq-ordered, assumed-valid) events.

    close_node cascades to descendants, incident edges and mappings, mirroring
    the documented lifetime-containment rule.
    """
    state = OracleState()
    for ev in events:
        action, p, ts = ev.action, ev.payload, ev.ts
        if action == "create_node":
            state.nodes[p["id"]] = {
                "kind": p["kind"], "parent": p.get("parent"),
                "graph": ("sub", p["parent"]) if p.get("parent") else ("root", p.get("owner")),
                "start": ts, "end": None,
            }
        elif action == "close_node":
            _close_cascade(state, p["id"], ts)
        elif action == "create_edge":
            state.edges[p["id"]] = {
                "source": p["source"], "target": p["target"], "start": ts, "end": None,
            }
        elif action == "close_edge":
            state.edges[p["id"]]["end"] = ts
        elif action == "map":
            state.mappings.append(
                {"app": p["app_entity"], "plat": p["platform_entity"], "start": ts, "end": None}
            )
        elif action == "unmap":
            for m in state.mappings:
                if m["app"] == p["app_entity"] and m["end"] is None:
                    m["end"] = ts
    return state


def _close_cascade(state: OracleState, node_id: str, ts: int) -> None:
    to_close = [node_id]
    while to_close:
        current = to_close.pop()
        rec = state.nodes[current]
        if rec["end"] is not None:
            continue
        rec["end"] = ts
        for other_id, other in state.nodes.items():
            if other["parent"] == current and other["end"] is None:
                to_close.append(other_id)
        for edge in state.edges.values():
            if edge["end"] is None and current in (edge["source"], edge["target"]):
                edge["end"] = ts
        for m in state.mappings:
            if m["end"] is None and current in (m["app"], m["plat"]):
                m["end"] = ts


def sorted_samples(samples: list[tuple[int, float]]) -> list[tuple[int, float]]:
    """Sort-and-filter oracle: ascending ts, last write wins on duplicates."""
    last: dict[int, float] = {}
    for ts, value in samples:
        last[ts] = value
    return sorted(last.items())


def range_filter(
    samples: list[tuple[int, float]], t_from: int, t_to: int
) -> list[tuple[int, float]]:
    return [(ts, v) for ts, v in sorted_samples(samples) if t_from <= ts < t_to]


def latest_at(samples: list[tuple[int, float]], t: int) -> tuple[int, float] | None:
    best = None
    for ts, v in sorted_samples(samples):
        if ts <= t:
            best = (ts, v)
    return best
