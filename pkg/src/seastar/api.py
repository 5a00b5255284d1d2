"""HTTP API service: resource objects, traversal, queries, registrations.

One service class serves three modes. ``master`` answers from the live
stores; ``forwarder`` and ``frontend`` hold no model state — they serve
GET aspects from a TTL'd read-through cache keyed by path and fall through
to their upstream on misses, so an n-tier chain (frontend -> forwarder ->
master) answers exactly what the master would, within one TTL of staleness.
Structural-event invalidations arrive on the cache_invalidation topic and
flush the cache; self-addressed requests, queries, registrations, and
windowed reads always pass through.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from collections import OrderedDict
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

from .bus import Bus, TOPIC_CACHE_INVALIDATION
from .context import ContextView
from .expr import ParseError
from .kinds import APPLICATION, RESOURCE_TYPES
from .metrics import (
    DerivedMetric,
    DuplicateNameError,
    MalformedUriError,
    MetricEngine,
    ScopeMismatchError,
    Subscription,
    UnknownMetricError,
)
from .model import ModelStore, NotAliveAtError, UnknownEntityError
from .query import QueryEntityError, QueryExecutor, QueryParseError, parse_query
from .resources import DEFAULT_WINDOW, Renderer
from .timeseries import TimeSeriesStore

logger = logging.getLogger(__name__)

ASPECTS = ("context", "parent", "children", "siblings")

IDENTITY_HEADERS = ("X-Seastar-Node", "X-Seastar-Pid", "X-Seastar-Tid")


@dataclass(frozen=True)
class TierConfig:
    mode: str = "master"  # master | forwarder | frontend
    upstream: str | None = None
    listen_host: str = "127.0.0.1"
    listen_port: int = 0
    cache_ttl_s: float = 2.0
    cache_capacity: int = 1024
    partition_prefixes: tuple[str, ...] = ()

    def validate(self) -> None:
        if self.mode not in ("master", "forwarder", "frontend"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "master" and self.upstream:
            raise ValueError("master mode takes no upstream")
        if self.mode != "master" and not self.upstream:
            raise ValueError(f"{self.mode} mode requires an upstream")


@dataclass
class Response:
    status: int
    body: Any

    @classmethod
    def error(cls, status: int, code: str, detail: str = "") -> "Response":
        payload = {"error": code}
        if detail:
            payload["detail"] = detail
        return cls(status, payload)


def _normalize_upstream(upstream: str) -> str:
    if not upstream.startswith(("http://", "https://")):
        upstream = f"http://{upstream}"
    return upstream.rstrip("/")


class MasterBackend:
    """Direct access to the model, sample store, and metric engine."""

    def __init__(
        self,
        model: ModelStore,
        tseries: TimeSeriesStore,
        engine: MetricEngine | None = None,
        clock: Callable[[], int] | None = None,
        stats_provider: Callable[[], dict] | None = None,
    ):
        self.model = model
        self.tseries = tseries
        self.engine = engine
        self.context = ContextView(model)
        self.renderer = Renderer(model, tseries, engine, self.context)
        self.executor = QueryExecutor(self.renderer)
        self.clock = clock or time.time_ns
        self.stats_provider = stats_provider

    # -------------------------------------------------------------- #

    def handle(self, method: str, path: str, params: dict[str, str],
               headers: dict[str, str], body: bytes) -> Response:
        segments = [urllib.parse.unquote(s) for s in path.split("/") if s]
        if method == "GET":
            return self._handle_get(segments, params, headers)
        if method == "POST" and segments == ["query"]:
            return self._handle_query(body, headers)
        if method == "PUT" and segments == ["dmetrics"]:
            return self._handle_dmetrics(body)
        if method == "PUT" and segments == ["callbacks"]:
            return self._handle_callbacks(body)
        return Response.error(404, "NotFound", path)

    def _handle_get(self, segments: list[str], params: dict[str, str],
                    headers: dict[str, str]) -> Response:
        if segments == ["healthz"]:
            return Response(200, {"status": "ok"})
        if segments == ["statz"]:
            return Response(200, self.stats())
        if not segments or segments[0] not in RESOURCE_TYPES:
            return Response.error(400, "BadType", segments[0] if segments else "")
        resource_type = segments[0]
        rest = segments[1:]
        aspect = None
        if rest and rest[-1] in ASPECTS:
            aspect = rest[-1]
            rest = rest[:-1]
        if not rest:
            return Response.error(404, "UnknownEntity", "missing id")
        entity_ref = "/".join(rest)
        t = self.clock()
        try:
            entity_id = self._resolve(entity_ref, resource_type, headers, t)
        except _IdentityError as err:
            return err.response
        try:
            node = self.model.node(entity_id)
        except UnknownEntityError:
            return Response.error(404, "UnknownEntity", entity_id)
        if node.kind != resource_type or not node.alive_at(t):
            return Response.error(404, "UnknownEntity", entity_id)
        window = int(params.get("window", DEFAULT_WINDOW))
        if aspect is None:
            return Response(200, self.renderer.render(entity_id, t, window))
        return self._aspect(entity_id, node.kind, aspect, t, window)

    def _aspect(self, entity_id: str, kind: str, aspect: str, t: int,
                window: int) -> Response:
        if aspect == "context":
            targets = self.context.context_of(entity_id, t)
            if kind == "thread":
                body = self.renderer.render(targets[0], t, window) if targets else None
                return Response(200, body)
            return Response(200, [self.renderer.render(e, t, window) for e in targets])
        ids = self.model.navigate(entity_id, aspect, t)
        if aspect == "parent":
            if not ids:
                return Response.error(404, "NoParent", entity_id)
            return Response(200, self.renderer.render(ids[0], t, window))
        return Response(200, [self.renderer.render(e, t, window) for e in ids])

    # -------------------------------------------------------------- #
    # self resolution
    # -------------------------------------------------------------- #

    def _resolve(self, entity_ref: str, resource_type: str,
                 headers: dict[str, str], t: int) -> str:
        if entity_ref != "self":
            return entity_ref
        if self.model.registry.get(resource_type).side != APPLICATION:
            raise _IdentityError(Response.error(400, "BadType",
                                                "self is an application path"))
        node_key = headers.get("x-seastar-node")
        pid = headers.get("x-seastar-pid")
        tid = headers.get("x-seastar-tid")
        if not node_key or not pid:
            raise _IdentityError(Response.error(401, "NoIdentity",
                                                "X-Seastar-Node and X-Seastar-Pid required"))
        process_id = self._find_process(node_key, pid, t)
        if process_id is None:
            raise _IdentityError(Response.error(404, "IdentityUnknown",
                                                f"node={node_key} pid={pid}"))
        if resource_type == "process":
            return process_id
        if resource_type == "job":
            parents = self.model.navigate(process_id, "parent", t)
            if not parents:
                raise _IdentityError(Response.error(404, "IdentityUnknown", process_id))
            return parents[0]
        # thread: requires the tid header
        if not tid:
            raise _IdentityError(Response.error(401, "NoIdentity",
                                                "X-Seastar-Tid required for /thread/self"))
        for thread_id in self.model.navigate(process_id, "children", t):
            if self.model.node(thread_id).labels.get("tid") == tid:
                return thread_id
        raise _IdentityError(Response.error(404, "IdentityUnknown", f"tid={tid}"))

    def _find_process(self, node_key: str, pid: str, t: int) -> str | None:
        for process_id in self.model.entities_of_kind("process", t):
            labels = self.model.node(process_id).labels
            if labels.get("pid") == pid and labels.get("hostname") == node_key:
                return process_id
        return None

    # -------------------------------------------------------------- #
    # queries and registrations
    # -------------------------------------------------------------- #

    def _handle_query(self, body: bytes, headers: dict[str, str]) -> Response:
        text = body.decode("utf-8", errors="replace")
        try:
            query = parse_query(text)
        except QueryParseError as err:
            return Response(400, {"error": "ParseError", "position": err.position,
                                  "detail": str(err)})
        t = self.clock()
        try:
            entity_id = self._resolve(query.entity_ref, query.resource_type, headers, t)
        except _IdentityError as err:
            return err.response
        try:
            return Response(200, self.executor.execute(query, entity_id, t))
        except QueryEntityError as err:
            return Response.error(404, "UnknownEntity", str(err))
        except (NotAliveAtError, UnknownEntityError) as err:
            return Response.error(404, "UnknownEntity", str(err))

    def _handle_dmetrics(self, body: bytes) -> Response:
        if self.engine is None:
            return Response.error(503, "NoMetricEngine")
        data, err = _exact_fields(body, {"metric_name", "scope", "function"})
        if err is not None:
            return err
        try:
            metric = self.engine.register_metric(DerivedMetric(
                metric_name=str(data["metric_name"]),
                scope=str(data["scope"]),
                function=str(data["function"]),
            ))
        except ParseError as exc:
            return Response(400, {"error": "ParseError", "position": exc.position,
                                  "detail": str(exc)})
        except DuplicateNameError as exc:
            return Response.error(409, "DuplicateName", str(exc))
        except (ScopeMismatchError, ValueError) as exc:
            return Response.error(400, type(exc).__name__.removesuffix("Error"), str(exc))
        return Response(200, {"id": metric.metric_name})

    def _handle_callbacks(self, body: bytes) -> Response:
        if self.engine is None:
            return Response.error(503, "NoMetricEngine")
        data, err = _exact_fields(body, {"callback_uri", "scope", "metric"})
        if err is not None:
            return err
        try:
            sub_id = self.engine.subscribe(Subscription(
                callback_uri=str(data["callback_uri"]),
                scope=str(data["scope"]),
                metric=str(data["metric"]),
            ))
        except (UnknownMetricError, MalformedUriError, ScopeMismatchError) as exc:
            return Response.error(400, type(exc).__name__.removesuffix("Error"), str(exc))
        return Response(200, {"id": sub_id})

    def stats(self) -> dict:
        stats = {"mode": "master", "cache": {"hits": 0, "misses": 0}}
        if self.stats_provider is not None:
            stats.update(self.stats_provider())
        return stats


class _IdentityError(Exception):
    def __init__(self, response: Response):
        self.response = response


def _exact_fields(body: bytes, fields: set[str]) -> tuple[dict, Response | None]:
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        return {}, Response.error(400, "BadBody", str(exc))
    if not isinstance(data, dict) or set(data) != fields:
        return {}, Response.error(
            400, "BadBody", f"body fields must be exactly {sorted(fields)}"
        )
    return data, None


class TierBackend:
    """Read-through cache over an upstream service (forwarder/frontend)."""

    def __init__(self, config: TierConfig, bus: Bus | None = None):
        self.config = config
        self.upstream = _normalize_upstream(config.upstream or "")
        self.cache: OrderedDict[str, tuple[float, int, bytes]] = OrderedDict()
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()
        self._invalidation_sub = None
        if bus is not None:
            self._invalidation_sub = bus.subscribe(
                TOPIC_CACHE_INVALIDATION, bus.next_offset(TOPIC_CACHE_INVALIDATION)
            )

    def handle(self, method: str, path: str, params: dict[str, str],
               headers: dict[str, str], body: bytes) -> Response:
        segments = [urllib.parse.unquote(s) for s in path.split("/") if s]
        if method == "GET" and segments == ["healthz"]:
            return Response(200, {"status": "ok"})
        if method == "GET" and segments == ["statz"]:
            with self._lock:
                return Response(200, {
                    "mode": self.config.mode,
                    "cache": {"hits": self.hits, "misses": self.misses},
                })
        self._drain_invalidations()
        if not self._cacheable(method, segments, params):
            return self._fetch(method, path, params, headers, body)
        key = path
        now = time.monotonic()
        with self._lock:
            entry = self.cache.get(key)
            if entry is not None and entry[0] > now:
                self.cache.move_to_end(key)
                self.hits += 1
                return Response(entry[1], json.loads(entry[2]))
            self.misses += 1
        response = self._fetch("GET", path, params, headers, body)
        if response.status == 200:
            payload = json.dumps(response.body).encode()
            with self._lock:
                self.cache[key] = (now + self.config.cache_ttl_s, 200, payload)
                self.cache.move_to_end(key)
                while len(self.cache) > self.config.cache_capacity:
                    self.cache.popitem(last=False)
        return response

    def _cacheable(self, method: str, segments: list[str],
                   params: dict[str, str]) -> bool:
        if method != "GET" or params:
            return False  # windowed/range reads always pass through
        if not segments or segments[0] not in RESOURCE_TYPES:
            return False
        if "self" in segments:
            return False  # identity-dependent
        prefixes = self.config.partition_prefixes
        if prefixes:
            rest = segments[1:]
            if rest and rest[-1] in ASPECTS:
                rest = rest[:-1]
            entity_id = "/".join(rest)
            if not any(entity_id.startswith(p) for p in prefixes):
                return False  # outside this instance's partition: serve, don't cache
        return True

    def _drain_invalidations(self) -> None:
        sub = self._invalidation_sub
        if sub is None:
            return
        flushed = False
        while True:
            batch = sub.poll(max_records=256)
            if not batch:
                break
            flushed = True
            sub.ack(batch[-1].offset)
        if flushed:
            with self._lock:
                self.cache.clear()

    def _fetch(self, method: str, path: str, params: dict[str, str],
               headers: dict[str, str], body: bytes) -> Response:
        url = self.upstream + path
        if params:
            url += "?" + urllib.parse.urlencode(params)
        forward_headers = {"Content-Type": "application/json"}
        for name in IDENTITY_HEADERS:
            value = headers.get(name.lower())
            if value:
                forward_headers[name] = value
        request = urllib.request.Request(
            url, data=body if method in ("POST", "PUT") else None,
            headers=forward_headers, method=method,
        )
        try:
            with urllib.request.urlopen(request, timeout=10) as resp:
                return Response(resp.status, json.loads(resp.read() or b"null"))
        except urllib.error.HTTPError as err:
            try:
                payload = json.loads(err.read() or b"null")
            except json.JSONDecodeError:
                payload = {"error": "UpstreamError"}
            return Response(err.code, payload)
        except (urllib.error.URLError, OSError) as err:
            logger.warning("upstream %s unreachable: %s", self.upstream, err)
            return Response.error(503, "UpstreamUnavailable", str(err))


class ApiService:
    """HTTP front for one tier instance; runs on its own server thread."""

    def __init__(
        self,
        config: TierConfig,
        model: ModelStore | None = None,
        tseries: TimeSeriesStore | None = None,
        engine: MetricEngine | None = None,
        bus: Bus | None = None,
        clock: Callable[[], int] | None = None,
        stats_provider: Callable[[], dict] | None = None,
    ):
        config.validate()
        self.config = config
        if config.mode == "master":
            if model is None or tseries is None:
                raise ValueError("master mode requires model and tseries stores")
            self.backend: MasterBackend | TierBackend = MasterBackend(
                model, tseries, engine, clock, stats_provider
            )
        else:
            self.backend = TierBackend(config, bus)
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # -------------------------------------------------------------- #

    def start(self) -> "ApiService":
        backend = self.backend

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def _dispatch(self, method: str) -> None:
                parsed = urllib.parse.urlsplit(self.path)
                params = dict(urllib.parse.parse_qsl(parsed.query))
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                headers = {k.lower(): v for k, v in self.headers.items()}
                try:
                    response = backend.handle(method, parsed.path, params, headers, body)
                except Exception as exc:  # noqa: BLE001 (server must answer)
                    logger.exception("unhandled error for %s %s", method, self.path)
                    response = Response.error(500, "InternalError", str(exc))
                payload = json.dumps(response.body).encode()
                self.send_response(response.status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def do_GET(self):  # noqa: N802
                self._dispatch("GET")

            def do_POST(self):  # noqa: N802
                self._dispatch("POST")

            def do_PUT(self):  # noqa: N802
                self._dispatch("PUT")

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(
            (self.config.listen_host, self.config.listen_port), Handler
        )
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.05),
            name=f"api-{self.config.mode}", daemon=True,
        )
        self._thread.start()
        return self

    @property
    def address(self) -> str:
        assert self._server is not None, "service not started"
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    @property
    def base_url(self) -> str:
        return f"http://{self.address}"

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> "ApiService":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
