"""Embedded publish-subscribe transport with durable, offset-ordered topics.

Records are buffered whether or not a subscriber is attached, spill to disk
when the bus is given a directory, and survive process restarts up to the
configured buffer bound. Delivery is at-least-once: a subscription hands out
records, tracks them in-flight, and redelivers anything not acknowledged
within the ack timeout. Downstream consumers are expected to be idempotent
(event seq numbers, last-write-wins samples).
"""

from __future__ import annotations

import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path

TOPIC_STRUCTURAL_EVENTS = "structural_events"
TOPIC_METRIC_SAMPLES = "metric_samples"
TOPIC_CACHE_INVALIDATION = "cache_invalidation"

_RECORD_HEADER = struct.Struct(">IQq")  # payload length, offset, enqueue_ts


class BufferFullError(RuntimeError):
    """Backpressure signal: the topic's bounded log is full."""


class OffsetOutOfRangeError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    offset: int
    payload: bytes
    enqueue_ts: int


@dataclass
class BusLimits:
    max_records_per_topic: int = 1_000_000
    max_bytes_per_topic: int = 256 * 1024 * 1024


class _Topic:
    def __init__(self, name: str, spill_path: Path | None, limits: BusLimits):
        self.name = name
        self.limits = limits
        self.records: list[Record] = []
        self.bytes = 0
        self._spill_path = spill_path
        self._spill_fh = None
        if spill_path is not None:
            self._load_spill()
            self._spill_fh = open(spill_path, "ab")

    def _load_spill(self) -> None:
        path = self._spill_path
        if path is None or not path.exists():
            return
        data = path.read_bytes()
        pos = 0
        while pos + _RECORD_HEADER.size <= len(data):
            length, offset, enqueue_ts = _RECORD_HEADER.unpack_from(data, pos)
            pos += _RECORD_HEADER.size
            if pos + length > len(data):
                break  # torn tail write; drop it
            payload = data[pos:pos + length]
            pos += length
            self.records.append(Record(offset, payload, enqueue_ts))
            self.bytes += length

    def append(self, payload: bytes, enqueue_ts: int) -> int:
        if len(self.records) >= self.limits.max_records_per_topic:
            raise BufferFullError(self.name)
        if self.bytes + len(payload) > self.limits.max_bytes_per_topic:
            raise BufferFullError(self.name)
        offset = self.records[-1].offset + 1 if self.records else 0
        record = Record(offset, payload, enqueue_ts)
        self.records.append(record)
        self.bytes += len(payload)
        if self._spill_fh is not None:
            self._spill_fh.write(_RECORD_HEADER.pack(len(payload), offset, enqueue_ts))
            self._spill_fh.write(payload)
            self._spill_fh.flush()
        return offset

    def next_offset(self) -> int:
        return self.records[-1].offset + 1 if self.records else 0

    def close(self) -> None:
        if self._spill_fh is not None:
            self._spill_fh.close()
            self._spill_fh = None


class Subscription:
    """One consumer's cursor over a topic with ack/redelivery bookkeeping."""

    def __init__(self, bus: "Bus", topic: str, from_offset: int, ack_timeout: float):
        self._bus = bus
        self.topic = topic
        self.committed = from_offset - 1
        self.ack_timeout = ack_timeout
        self._inflight: dict[int, float] = {}  # offset -> delivery deadline
        self._cursor = from_offset

    def poll(self, max_records: int = 100) -> list[Record]:
        """Redeliveries past their deadline first, then new records in order."""
        now = self._bus.clock()
        out: list[Record] = []
        with self._bus._lock:
            topic = self._bus._topics.get(self.topic)
            if topic is None:
                return []
            expired = sorted(
                off for off, deadline in self._inflight.items() if deadline <= now
            )
            for offset in expired:
                if len(out) >= max_records:
                    break
                record = self._bus._record_at(topic, offset)
                if record is not None:
                    out.append(record)
                    self._inflight[offset] = now + self.ack_timeout
            while len(out) < max_records and self._cursor < topic.next_offset():
                record = self._bus._record_at(topic, self._cursor)
                if record is None:
                    self._cursor += 1
                    continue
                out.append(record)
                self._inflight[record.offset] = now + self.ack_timeout
                self._cursor += 1
        return out

    def ack(self, offset: int) -> None:
        """Cumulative acknowledgement through ``offset``."""
        with self._bus._lock:
            if offset > self.committed:
                self.committed = offset
            for inflight_offset in list(self._inflight):
                if inflight_offset <= offset:
                    del self._inflight[inflight_offset]

    def lag(self) -> int:
        with self._bus._lock:
            topic = self._bus._topics.get(self.topic)
            if topic is None:
                return 0
            return topic.next_offset() - 1 - self.committed


class Bus:
    """Topic registry; give it a directory to make records survive restarts."""

    def __init__(
        self,
        spill_dir: str | Path | None = None,
        limits: BusLimits | None = None,
        ack_timeout: float = 5.0,
        clock=None,
    ):
        self._spill_dir = Path(spill_dir) if spill_dir is not None else None
        if self._spill_dir is not None:
            self._spill_dir.mkdir(parents=True, exist_ok=True)
        self.limits = limits or BusLimits()
        self.ack_timeout = ack_timeout
        self.clock = clock or time.monotonic
        self._lock = threading.RLock()
        self._topics: dict[str, _Topic] = {}
        if self._spill_dir is not None:
            for path in sorted(self._spill_dir.glob("*.topic")):
                name = path.stem
                self._topics[name] = _Topic(name, path, self.limits)

    def _spill_path(self, topic: str) -> Path | None:
        if self._spill_dir is None:
            return None
        safe = topic.replace("/", "_")
        return self._spill_dir / f"{safe}.topic"

    def _ensure_topic(self, name: str) -> _Topic:
        topic = self._topics.get(name)
        if topic is None:
            topic = _Topic(name, self._spill_path(name), self.limits)
            self._topics[name] = topic
        return topic

    @staticmethod
    def _record_at(topic: _Topic, offset: int) -> Record | None:
        base = topic.records[0].offset if topic.records else 0
        idx = offset - base
        if 0 <= idx < len(topic.records):
            return topic.records[idx]
        return None

    def publish(self, topic: str, payload: bytes) -> int:
        """Append one record; raises BufferFullError on backpressure."""
        if not isinstance(payload, bytes):
            raise TypeError("payload must be bytes")
        enqueue_ts = time.time_ns()
        with self._lock:
            return self._ensure_topic(topic).append(payload, enqueue_ts)

    def subscribe(
        self, topic: str, from_offset: int = 0, ack_timeout: float | None = None
    ) -> Subscription:
        with self._lock:
            existing = self._ensure_topic(topic)
            if from_offset > existing.next_offset() or from_offset < 0:
                raise OffsetOutOfRangeError(
                    f"{topic}: offset {from_offset} > next {existing.next_offset()}"
                )
        return Subscription(
            self, topic, from_offset,
            self.ack_timeout if ack_timeout is None else ack_timeout,
        )

    def next_offset(self, topic: str) -> int:
        with self._lock:
            existing = self._topics.get(topic)
            return existing.next_offset() if existing else 0

    def topics(self) -> list[str]:
        with self._lock:
            return sorted(self._topics)

    def close(self) -> None:
        with self._lock:
            for topic in self._topics.values():
                topic.close()
