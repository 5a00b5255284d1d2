"""Single-writer ingest pipeline: bus topics into the model and sample stores.

Structural events apply in offset order (the bus gives a total order and the
seq numbers make redelivery idempotent); each applied event fans out a cache
invalidation record for the API tiers. Metric samples append with rejects
counted, never raised.
"""

from __future__ import annotations

import json
import logging

from .bus import (
    Bus,
    BufferFullError,
    TOPIC_CACHE_INVALIDATION,
    TOPIC_METRIC_SAMPLES,
    TOPIC_STRUCTURAL_EVENTS,
)
from .events import StructuralEvent
from .model import ModelStore
from .timeseries import Sample, SeriesKey, TimeSeriesStore

logger = logging.getLogger(__name__)


class IngestPipeline:
    def __init__(self, bus: Bus, model: ModelStore, tseries: TimeSeriesStore,
                 publish_invalidations: bool = True):
        self.bus = bus
        self.model = model
        self.tseries = tseries
        self.publish_invalidations = publish_invalidations
        self._event_sub = bus.subscribe(TOPIC_STRUCTURAL_EVENTS, 0)
        self._sample_sub = bus.subscribe(TOPIC_METRIC_SAMPLES, 0)
        self.events_applied = 0
        self.events_rejected = 0
        self.samples_accepted = 0
        self.samples_rejected = 0

    def drain(self, max_batches: int = 1000) -> None:
        """Apply everything currently buffered on both topics."""
        for _ in range(max_batches):
            batch = self._event_sub.poll(max_records=512)
            if not batch:
                break
            touched: list[str] = []
            for record in batch:
                try:
                    event = StructuralEvent.from_json(record.payload.decode())
                except (ValueError, UnicodeDecodeError) as exc:
                    logger.warning("dropping malformed event at offset %d: %s",
                                   record.offset, exc)
                    continue
                result = self.model.apply_event(event)
                if result.applied and not result.duplicate:
                    self.events_applied += 1
                    touched.extend(self._touched_ids(event))
                elif not result.applied:
                    self.events_rejected += 1
                    logger.warning("event seq %d rejected: %s", event.seq, result.reason)
            self._event_sub.ack(batch[-1].offset)
            if touched and self.publish_invalidations:
                self._invalidate(touched)
        for _ in range(max_batches):
            batch = self._sample_sub.poll(max_records=2048)
            if not batch:
                break
            for record in batch:
                self._apply_sample(record.payload)
            self._sample_sub.ack(batch[-1].offset)

    @staticmethod
    def _touched_ids(event: StructuralEvent) -> list[str]:
        p = event.payload
        return [v for v in (p.get("id"), p.get("parent"), p.get("source"),
                            p.get("target"), p.get("app_entity"),
                            p.get("platform_entity")) if v]

    def _invalidate(self, entity_ids: list[str]) -> None:
        payload = json.dumps({"entities": sorted(set(entity_ids))}).encode()
        try:
            self.bus.publish(TOPIC_CACHE_INVALIDATION, payload)
        except BufferFullError:
            logger.warning("cache invalidation dropped (buffer full)")

    def _apply_sample(self, payload: bytes) -> None:
        try:
            data = json.loads(payload)
            key = SeriesKey(str(data["entity_id"]), str(data["metric"]))
            sample = Sample(int(data["ts"]), float(data["value"]))
        except (ValueError, KeyError, TypeError) as exc:
            logger.warning("dropping malformed sample: %s", exc)
            self.samples_rejected += 1
            return
        reason = self.tseries.append(key, sample)
        if reason is None:
            self.samples_accepted += 1
        else:
            self.samples_rejected += 1
