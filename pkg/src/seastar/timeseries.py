"""Telemetry sample store: per-(entity, metric) series with range queries.

Samples attach to graph entities through a (entity_id, metric) key. Ingest is
tolerant (bad samples are rejected with a reason, never raised) while query
errors raise typed exceptions. Appends to different series may run
concurrently; appends to one series are serialized by a store-wide lock that
is only held for the insert itself.
"""

from __future__ import annotations

import bisect
import csv
import io
import re
import threading
from dataclasses import dataclass
from typing import Callable, Iterable

_METRIC_RE = re.compile(r"^[a-z][a-z0-9_]*$")

NANOS_PER_SECOND = 1_000_000_000
DEFAULT_TOLERANCE_NS = 5 * NANOS_PER_SECOND
DEFAULT_HORIZON_NS = 24 * 3600 * NANOS_PER_SECOND

# append rejection reasons
UNKNOWN_ENTITY = "UnknownEntity"
NON_FINITE_VALUE = "NonFiniteValue"
OUTSIDE_LIFETIME = "OutsideLifetime"
INVALID_METRIC_NAME = "InvalidMetricName"


class UnknownSeriesError(KeyError):
    pass


class UnknownEntityError(KeyError):
    pass


@dataclass(frozen=True)
class SeriesKey:
    entity_id: str
    metric: str


@dataclass(frozen=True)
class Sample:
    ts: int
    value: float


# entity_id -> (t_start, t_end|None), or None when the entity is unknown
LifetimeProvider = Callable[[str], "tuple[int, int | None] | None"]


def _is_finite(value: float) -> bool:
    return value == value and value not in (float("inf"), float("-inf"))


class _Series:
    __slots__ = ("timestamps", "values")

    def __init__(self) -> None:
        self.timestamps: list[int] = []
        self.values: list[float] = []

    def insert(self, ts: int, value: float) -> None:
        if self.timestamps and ts > self.timestamps[-1]:
            self.timestamps.append(ts)
            self.values.append(value)
            return
        idx = bisect.bisect_left(self.timestamps, ts)
        if idx < len(self.timestamps) and self.timestamps[idx] == ts:
            self.values[idx] = value  # duplicate ts: last write wins
        else:
            self.timestamps.insert(idx, ts)
            self.values.insert(idx, value)

    def evict_before(self, horizon_ts: int) -> None:
        idx = bisect.bisect_left(self.timestamps, horizon_ts)
        if idx:
            del self.timestamps[:idx]
            del self.values[:idx]


class TimeSeriesStore:
    """Bounded per-series storage with read-your-writes visibility."""

    def __init__(
        self,
        lifetime_provider: LifetimeProvider | None = None,
        tolerance_ns: int = DEFAULT_TOLERANCE_NS,
        horizon_ns: int = DEFAULT_HORIZON_NS,
    ):
        self._lifetimes = lifetime_provider or (lambda _entity: None)
        self.tolerance_ns = tolerance_ns
        self.horizon_ns = horizon_ns
        self._lock = threading.RLock()
        self._series: dict[SeriesKey, _Series] = {}
        self._metrics_by_entity: dict[str, set[str]] = {}
        self.rejected: dict[str, int] = {}

    def append(self, key: SeriesKey, sample: Sample) -> str | None:
        """Store one sample; returns None when accepted, else the reason."""
        reason = self._check(key, sample)
        if reason is not None:
            with self._lock:
                self.rejected[reason] = self.rejected.get(reason, 0) + 1
            return reason
        with self._lock:
            series = self._series.get(key)
            if series is None:
                series = self._series[key] = _Series()
                self._metrics_by_entity.setdefault(key.entity_id, set()).add(key.metric)
            series.insert(sample.ts, sample.value)
            if series.timestamps:
                series.evict_before(series.timestamps[-1] - self.horizon_ns)
        return None

    def _check(self, key: SeriesKey, sample: Sample) -> str | None:
        if not _METRIC_RE.match(key.metric):
            return INVALID_METRIC_NAME
        if not _is_finite(sample.value):
            return NON_FINITE_VALUE
        lifetime = self._lifetimes(key.entity_id)
        if lifetime is None:
            return UNKNOWN_ENTITY
        t_start, t_end = lifetime
        if sample.ts < t_start - self.tolerance_ns:
            return OUTSIDE_LIFETIME
        if t_end is not None and sample.ts >= t_end + self.tolerance_ns:
            return OUTSIDE_LIFETIME
        return None

    def _require_series(self, key: SeriesKey) -> _Series:
        series = self._series.get(key)
        if series is None:
            raise UnknownSeriesError(f"{key.entity_id}:{key.metric}")
        return series

    def query_range(self, key: SeriesKey, t_from: int, t_to: int) -> list[Sample]:
        """Samples with t_from <= ts < t_to, ascending."""
        if t_from > t_to:
            raise ValueError("t_from must be <= t_to")
        with self._lock:
            series = self._require_series(key)
            lo = bisect.bisect_left(series.timestamps, t_from)
            hi = bisect.bisect_left(series.timestamps, t_to)
            return [
                Sample(series.timestamps[i], series.values[i]) for i in range(lo, hi)
            ]

    def latest_at(self, key: SeriesKey, t: int) -> Sample | None:
        """The sample with the greatest ts <= t, or None."""
        with self._lock:
            series = self._require_series(key)
            idx = bisect.bisect_right(series.timestamps, t) - 1
            if idx < 0:
                return None
            return Sample(series.timestamps[idx], series.values[idx])

    def last_samples(self, key: SeriesKey, t: int, count: int) -> list[Sample]:
        """Up to ``count`` newest samples at or before t, ascending (oldest first)."""
        with self._lock:
            series = self._series.get(key)
            if series is None:
                return []
            hi = bisect.bisect_right(series.timestamps, t)
            lo = max(0, hi - count)
            return [
                Sample(series.timestamps[i], series.values[i]) for i in range(lo, hi)
            ]

    def list_metrics(self, entity_id: str) -> list[str]:
        """Sorted metric names ever written for the entity."""
        if self._lifetimes(entity_id) is None:
            raise UnknownEntityError(entity_id)
        with self._lock:
            return sorted(self._metrics_by_entity.get(entity_id, set()))

    def has_series(self, key: SeriesKey) -> bool:
        with self._lock:
            return key in self._series

    def known_metrics(self) -> set[str]:
        """Every metric name written for any entity."""
        with self._lock:
            out: set[str] = set()
            for metrics in self._metrics_by_entity.values():
                out |= metrics
            return out

    def series_keys(self) -> list[SeriesKey]:
        with self._lock:
            return sorted(self._series, key=lambda k: (k.entity_id, k.metric))

    def export_csv(self, key: SeriesKey, fh: io.TextIOBase | None = None) -> str:
        """Dump one series as ``ts,value`` CSV text (also writes to fh if given)."""
        with self._lock:
            series = self._require_series(key)
            rows = list(zip(series.timestamps, series.values))
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["ts", "value"])
        for ts, value in rows:
            writer.writerow([ts, repr(value)])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def dict_lifetimes(entities: dict[str, tuple[int, int | None]]) -> LifetimeProvider:
    """Static provider for tests and standalone use."""

    def provider(entity_id: str):
        return entities.get(entity_id)

    return provider


def store_lifetimes(model_store) -> LifetimeProvider:
    """Provider backed by the live anatomy model."""

    def provider(entity_id: str):
        try:
            return model_store.entity_lifetime(entity_id)
        except KeyError:
            return None

    return provider


def batch_append(
    store: TimeSeriesStore, batch: Iterable[tuple[str, str, int, float]]
) -> int:
    """Append (entity_id, metric, ts, value) tuples; returns accepted count."""
    accepted = 0
    for entity_id, metric, ts, value in batch:
        if store.append(SeriesKey(entity_id, metric), Sample(ts, value)) is None:
            accepted += 1
    return accepted
