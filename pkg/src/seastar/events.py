"""Structural events and the newline-delimited JSON event-log format.

Every mutation of the anatomy/context model flows through a StructuralEvent;
the durable log of applied events is the single source of truth and replaying
it reconstructs the store byte-for-byte. Log records carry exactly the fields
``seq``, ``ts``, ``action``, ``payload``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

CREATE_NODE = "create_node"
CLOSE_NODE = "close_node"
CREATE_EDGE = "create_edge"
CLOSE_EDGE = "close_edge"
MAP = "map"
UNMAP = "unmap"

ACTIONS = (CREATE_NODE, CLOSE_NODE, CREATE_EDGE, CLOSE_EDGE, MAP, UNMAP)


@dataclass(frozen=True)
class StructuralEvent:
    """One totally-ordered change to the model.

    ``ts`` is nanoseconds since the epoch and doubles as the lifetime
    boundary the action establishes (creation start, close end).
    """

    seq: int
    ts: int
    action: str
    payload: dict[str, Any] = field(default_factory=dict)

    def to_record(self) -> dict[str, Any]:
        return {"seq": self.seq, "ts": self.ts, "action": self.action, "payload": self.payload}

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "StructuralEvent":
        if record.get("action") not in ACTIONS:
            raise ValueError(f"unknown action {record.get('action')!r}")
        return cls(
            seq=int(record["seq"]),
            ts=int(record["ts"]),
            action=record["action"],
            payload=dict(record.get("payload") or {}),
        )

    @classmethod
    def from_json(cls, line: str) -> "StructuralEvent":
        return cls.from_record(json.loads(line))


def write_event_log(path: str | Path, events: Iterable[StructuralEvent]) -> int:
    """Write events as ndjson; returns the number of records written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_json())
            fh.write("\n")
            count += 1
    return count


def read_event_log(path: str | Path) -> Iterator[StructuralEvent]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield StructuralEvent.from_json(line)
