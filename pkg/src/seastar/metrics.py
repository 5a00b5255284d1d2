"""Derived metrics and edge-triggered webhook notifications.

A derived metric is a named expression over stored telemetry, scoped to one
resource kind and evaluated service-side per entity of that scope. A
subscription attaches an HTTP callback to a metric; on every scheduler tick
the engine samples the metric per entity and POSTs exactly one notification
per false->true transition of ``value != 0``. Failed deliveries are retried
with exponential backoff (3 attempts total) and then dead-lettered.

Deliveries run on a bounded worker pool and never block evaluation.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field

from . import expr as expr_mod
from .expr import EvalError, InsufficientDataError, ParseError
from .kinds import RESOURCE_TYPES
from .model import ModelStore, NotAliveAtError
from .timeseries import SeriesKey, TimeSeriesStore

logger = logging.getLogger(__name__)

NANOS_PER_SECOND = 1_000_000_000
DELIVERY_ATTEMPTS = 3


class DuplicateNameError(ValueError):
    pass


class UnknownBaseMetricError(ValueError):
    pass


class UnknownMetricError(KeyError):
    pass


class MalformedUriError(ValueError):
    pass


class ScopeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class DerivedMetric:
    metric_name: str
    scope: str
    function: str
    eval_period_ns: int = NANOS_PER_SECOND


@dataclass(frozen=True)
class Subscription:
    callback_uri: str
    scope: str
    metric: str


@dataclass
class DeliveryRecord:
    subscription_id: str
    metric: str
    scope: str
    entity_id: str
    value: float
    timestamp: int
    callback_uri: str
    attempts: int = 0
    delivered: bool = False
    dead_lettered: bool = False

    def body(self) -> bytes:
        return json.dumps(
            {
                "metric": self.metric,
                "scope": self.scope,
                "entity_id": self.entity_id,
                "value": self.value,
                "timestamp": self.timestamp,
            }
        ).encode()


class StoreContext:
    """Expression evaluation context over the live model + sample stores."""

    def __init__(self, model: ModelStore, tseries: TimeSeriesStore):
        self.model = model
        self.tseries = tseries

    def latest(self, entity_id: str, metric: str, t: int) -> float | None:
        key = SeriesKey(entity_id, metric)
        if not self.tseries.has_series(key):
            return None
        sample = self.tseries.latest_at(key, t)
        return sample.value if sample else None

    def samples(self, entity_id: str, metric: str, t_from: int, t_to: int):
        key = SeriesKey(entity_id, metric)
        if not self.tseries.has_series(key):
            return []
        # expression windows are closed on the right
        return [(s.ts, s.value) for s in self.tseries.query_range(key, t_from, t_to + 1)]

    def descendants(self, entity_id: str, kind: str, t: int) -> list[str]:
        out: list[str] = []

        def walk(current: str) -> None:
            for child in self.model.navigate(current, "children", t):
                if self.model.node(child).kind == kind:
                    out.append(child)
                else:
                    walk(child)

        walk(entity_id)
        return sorted(out)


@dataclass
class _SubscriptionState:
    sub_id: str
    spec: Subscription
    last_fired: dict[str, bool] = field(default_factory=dict)  # entity -> predicate


class MetricEngine:
    def __init__(
        self,
        model: ModelStore,
        tseries: TimeSeriesStore,
        known_raw_metrics: set[str] | None = None,
        delivery_workers: int = 8,
        backoff_base_s: float = 0.5,
        http_timeout_s: float = 2.0,
    ):
        self.model = model
        self.tseries = tseries
        self.ctx = StoreContext(model, tseries)
        self.known_raw_metrics = set(known_raw_metrics or ())
        self.backoff_base_s = backoff_base_s
        self.http_timeout_s = http_timeout_s
        self._lock = threading.RLock()
        self._metrics: dict[str, DerivedMetric] = {}
        self._asts: dict[str, expr_mod.Expr] = {}
        self._next_due: dict[str, int] = {}
        self._subscriptions: dict[str, _SubscriptionState] = {}
        self._sub_counter = 0
        self._pool = ThreadPoolExecutor(
            max_workers=delivery_workers, thread_name_prefix="webhook"
        )
        self._pending: list[Future] = []
        self.dead_letter_count = 0
        self.delivered_count = 0
        self.delivery_log: list[DeliveryRecord] = []

    # ------------------------------------------------------------------ #
    # registration
    # ------------------------------------------------------------------ #

    def register_metric(self, metric: DerivedMetric) -> DerivedMetric:
        if metric.scope not in RESOURCE_TYPES:
            raise ScopeMismatchError(f"unknown scope {metric.scope!r}")
        ast = expr_mod.parse(metric.function)  # ParseError carries the column
        expr_mod.check_types(ast, metric.scope, self.model.registry)
        with self._lock:
            if metric.metric_name in self._metrics:
                raise DuplicateNameError(metric.metric_name)
            known = self.tseries.known_metrics() | self.known_raw_metrics
            missing = expr_mod.metric_names(ast) - known
            if missing:
                raise UnknownBaseMetricError(", ".join(sorted(missing)))
            self._metrics[metric.metric_name] = metric
            self._asts[metric.metric_name] = ast
            self._next_due[metric.metric_name] = 0
        return metric

    def metrics(self) -> list[DerivedMetric]:
        with self._lock:
            return sorted(self._metrics.values(), key=lambda m: m.metric_name)

    def metrics_for_scope(self, scope: str) -> list[DerivedMetric]:
        return [m for m in self.metrics() if m.scope == scope]

    def get_metric(self, name: str) -> DerivedMetric:
        with self._lock:
            metric = self._metrics.get(name)
        if metric is None:
            raise UnknownMetricError(name)
        return metric

    def subscribe(self, sub: Subscription) -> str:
        if sub.scope not in RESOURCE_TYPES:
            raise ScopeMismatchError(f"unknown scope {sub.scope!r}")
        parsed = urllib.parse.urlparse(sub.callback_uri)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise MalformedUriError(sub.callback_uri)
        metric_scope = self._scope_of_metric(sub.metric)
        if metric_scope is not None and sub.scope != metric_scope:
            raise ScopeMismatchError(
                f"subscription scope {sub.scope!r} != metric scope {metric_scope!r}"
            )
        with self._lock:
            self._sub_counter += 1
            sub_id = f"sub-{self._sub_counter}"
            self._subscriptions[sub_id] = _SubscriptionState(sub_id, sub)
        return sub_id

    def unsubscribe(self, sub_id: str) -> bool:
        with self._lock:
            return self._subscriptions.pop(sub_id, None) is not None

    def _scope_of_metric(self, name: str) -> str | None:
        """Declared scope for a derived metric; None for known raw metrics."""
        with self._lock:
            if name in self._metrics:
                return self._metrics[name].scope
        if name in self.known_raw_metrics or name in self.tseries.known_metrics():
            return None
        raise UnknownMetricError(name)

    # ------------------------------------------------------------------ #
    # evaluation
    # ------------------------------------------------------------------ #

    def evaluate(self, metric_name: str, entity_id: str, t: int) -> float:
        """Pure function of the stored samples in [t - max window, t]."""
        metric = self.get_metric(metric_name)
        node = self.model.node(entity_id)
        if node.kind != metric.scope:
            raise ScopeMismatchError(
                f"{entity_id} is a {node.kind}, metric scope is {metric.scope}"
            )
        if not node.alive_at(t):
            raise NotAliveAtError(entity_id, t)
        with self._lock:
            ast = self._asts[metric_name]
        return expr_mod.evaluate(ast, self.ctx, entity_id, t)

    def try_evaluate(self, metric_name: str, entity_id: str, t: int) -> float | None:
        """Evaluate, mapping InsufficientData (and dead entities) to absence."""
        try:
            return self.evaluate(metric_name, entity_id, t)
        except (InsufficientDataError, NotAliveAtError):
            return None

    # ------------------------------------------------------------------ #
    # notification scheduler
    # ------------------------------------------------------------------ #

    def detect_and_deliver(self, t_tick: int) -> list[DeliveryRecord]:
        """Fire webhooks for every false->true predicate transition.

        Values that are unavailable (InsufficientData) leave the per-entity
        edge state untouched: absence is not falseness.
        """
        records: list[DeliveryRecord] = []
        with self._lock:
            subscriptions = list(self._subscriptions.values())
        for state in subscriptions:
            metric_name = state.spec.metric
            try:
                metric = self.get_metric(metric_name)
                scope = metric.scope
                derived = True
            except UnknownMetricError:
                scope = state.spec.scope  # raw-metric subscription
                derived = False
            if derived and self._next_due.get(metric_name, 0) > t_tick:
                continue
            for entity_id in self.model.entities_of_kind(scope, t_tick):
                if derived:
                    value = self.try_evaluate(metric_name, entity_id, t_tick)
                else:
                    value = self.ctx.latest(entity_id, metric_name, t_tick)
                if value is None:
                    continue
                fired_now = value != 0.0
                fired_before = state.last_fired.get(entity_id, False)
                state.last_fired[entity_id] = fired_now
                if fired_now and not fired_before:
                    record = DeliveryRecord(
                        subscription_id=state.sub_id,
                        metric=metric_name,
                        scope=scope,
                        entity_id=entity_id,
                        value=value,
                        timestamp=t_tick,
                        callback_uri=state.spec.callback_uri,
                    )
                    records.append(record)
                    self.delivery_log.append(record)
                    self._submit(record)
        with self._lock:
            for name, metric in self._metrics.items():
                while self._next_due.get(name, 0) <= t_tick:
                    self._next_due[name] = self._next_due.get(name, 0) + metric.eval_period_ns
        return records

    def _submit(self, record: DeliveryRecord) -> None:
        future = self._pool.submit(self._deliver, record)
        with self._lock:
            self._pending = [f for f in self._pending if not f.done()]
            self._pending.append(future)

    def _deliver(self, record: DeliveryRecord) -> DeliveryRecord:
        delay = self.backoff_base_s
        for attempt in range(1, DELIVERY_ATTEMPTS + 1):
            record.attempts = attempt
            try:
                request = urllib.request.Request(
                    record.callback_uri,
                    data=record.body(),
                    headers={"Content-Type": "application/json"},
                    method="POST",
                )
                with urllib.request.urlopen(request, timeout=self.http_timeout_s) as resp:
                    if 200 <= resp.status < 300:
                        record.delivered = True
                        with self._lock:
                            self.delivered_count += 1
                        return record
            except (urllib.error.URLError, OSError) as exc:
                logger.debug("delivery attempt %d to %s failed: %s",
                             attempt, record.callback_uri, exc)
            if attempt < DELIVERY_ATTEMPTS:
                time.sleep(delay)
                delay *= 2
        record.dead_lettered = True
        with self._lock:
            self.dead_letter_count += 1
        return record

    def drain(self, timeout_s: float = 30.0) -> None:
        """Block until all scheduled deliveries finished (tests, shutdown)."""
        deadline = time.monotonic() + timeout_s
        while True:
            with self._lock:
                pending = [f for f in self._pending if not f.done()]
                self._pending = pending
            if not pending:
                return
            if time.monotonic() > deadline:
                raise TimeoutError("webhook deliveries still pending")
            time.sleep(0.01)

    def close(self) -> None:
        self._pool.shutdown(wait=True)
