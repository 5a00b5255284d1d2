"""Entity kind registry: the fixed application and platform hierarchies.

Two three-level hierarchies ship by default: job > process > thread on the
application side and node > processor > core on the platform side. The
registry is extensible (finer-grained kinds can be registered) but the six
default kinds are always present.
"""

from __future__ import annotations

from dataclasses import dataclass

APPLICATION = "application"
PLATFORM = "platform"

SIDES = (APPLICATION, PLATFORM)


@dataclass(frozen=True)
class EntityKind:
    """One level of an anatomy hierarchy.

    ``depth`` is 0 at the hierarchy root (job, node); kinds at equal depth on
    opposite sides are context-compatible (thread<->core and so on).
    """

    name: str
    side: str
    plural: str
    child: str | None
    depth: int


class KindRegistry:
    """Holds the known entity kinds and answers hierarchy questions."""

    def __init__(self) -> None:
        self._kinds: dict[str, EntityKind] = {}
        self._register_defaults()

    def _register_defaults(self) -> None:
        self.register(EntityKind("job", APPLICATION, "jobs", "process", 0))
        self.register(EntityKind("process", APPLICATION, "processes", "thread", 1))
        self.register(EntityKind("thread", APPLICATION, "threads", None, 2))
        self.register(EntityKind("node", PLATFORM, "nodes", "processor", 0))
        self.register(EntityKind("processor", PLATFORM, "processors", "core", 1))
        self.register(EntityKind("core", PLATFORM, "cores", None, 2))

    def register(self, kind: EntityKind) -> None:
        if kind.side not in SIDES:
            raise ValueError(f"unknown side {kind.side!r}")
        self._kinds[kind.name] = kind

    def get(self, name: str) -> EntityKind:
        try:
            return self._kinds[name]
        except KeyError:
            raise KeyError(f"unknown entity kind {name!r}") from None

    def has(self, name: str) -> bool:
        return name in self._kinds

    def names(self) -> list[str]:
        return sorted(self._kinds)

    def roots(self, side: str) -> list[EntityKind]:
        return [k for k in self._kinds.values() if k.side == side and k.depth == 0]

    def child_of(self, name: str) -> EntityKind | None:
        child = self.get(name).child
        return self._kinds[child] if child else None

    def compatible(self, app_kind: str, platform_kind: str) -> bool:
        """Context compatibility: equal depth on opposite sides."""
        a, p = self.get(app_kind), self.get(platform_kind)
        return a.side == APPLICATION and p.side == PLATFORM and a.depth == p.depth

    def counterpart(self, name: str) -> EntityKind:
        """The context-compatible kind on the opposite side."""
        kind = self.get(name)
        other = PLATFORM if kind.side == APPLICATION else APPLICATION
        for cand in self._kinds.values():
            if cand.side == other and cand.depth == kind.depth:
                return cand
        raise KeyError(f"no counterpart kind for {name!r}")

    def is_descendant_kind(self, ancestor: str, descendant: str) -> bool:
        """True when ``descendant`` sits strictly below ``ancestor`` in its chain."""
        kind = self.get(ancestor)
        cur = kind.child
        while cur is not None:
            if cur == descendant:
                return True
            cur = self.get(cur).child
        return False


DEFAULT_REGISTRY = KindRegistry()

RESOURCE_TYPES = ("job", "process", "thread", "node", "processor", "core")


def mint_id(side: str, kind: str, stable_key: str) -> str:
    """Entity id convention: ``<side>/<kind>/<stable-key>``.

    Stable keys survive sensor restarts, so minted ids are stable too.
    """
    return f"{side}/{kind}/{stable_key}"
