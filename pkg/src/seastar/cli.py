"""Command-line entry point: run services, simulations, replays, exports.

    seastar sim --spec cluster.json --script workload.json --seed 7 \
                --duration 60s --listen 127.0.0.1:8080 --log events.ndjson
    seastar serve --mode frontend --upstream localhost:8080 --listen :8081
    seastar replay events.ndjson
    seastar validate --log events.ndjson
    seastar query http://localhost:8080 query.txt
    seastar export --bus-dir /var/lib/seastar --entity <id> --metric <name>

Every flag falls back to a SEASTAR_-prefixed environment variable
(--cache-ttl -> SEASTAR_CACHE_TTL, etc.). Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
import time
import urllib.error
import urllib.request

from .api import ApiService, TierConfig
from .bus import Bus, TOPIC_METRIC_SAMPLES
from .events import read_event_log
from .ingest import IngestPipeline
from .metrics import MetricEngine
from .model import ModelStore
from .sim import ClusterSpec, WorkloadScript
from .system import HarnessConfig, SimHarness
from .timeseries import (
    Sample,
    SeriesKey,
    TimeSeriesStore,
    UnknownSeriesError,
    store_lifetimes,
)

NANOS_PER_SECOND = 1_000_000_000

_DURATION_UNITS = {"ns": 1, "us": 1_000, "ms": 1_000_000,
                   "s": NANOS_PER_SECOND, "m": 60 * NANOS_PER_SECOND,
                   "h": 3600 * NANOS_PER_SECOND}


class CliError(RuntimeError):
    pass


def parse_duration(text: str) -> int:
    for unit in sorted(_DURATION_UNITS, key=len, reverse=True):
        if text.endswith(unit):
            number = text[: -len(unit)]
            try:
                return int(float(number) * _DURATION_UNITS[unit])
            except ValueError:
                break
    raise CliError(f"bad duration {text!r} (use e.g. 60s, 500ms, 2m)")


def parse_listen(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise CliError(f"bad listen address {text!r} (use host:port)")
    return host or "127.0.0.1", int(port)


def _env_default(name: str, fallback=None):
    return os.environ.get(f"SEASTAR_{name.upper().replace('-', '_')}", fallback)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seastar",
        description="Telemetry model, time-series store and context-aware API",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="start one API service instance")
    serve.add_argument("--config", default=_env_default("config"),
                       help="JSON config file; env and flags override it")
    serve.add_argument("--mode", choices=["master", "forwarder", "frontend"])
    serve.add_argument("--listen")
    serve.add_argument("--upstream")
    serve.add_argument("--cache-ttl")
    serve.add_argument("--cache-capacity", type=int)
    serve.add_argument("--bus-dir",
                       help="spill directory to ingest from (master mode)")
    serve.set_defaults(func=cmd_serve)

    simp = sub.add_parser("sim", help="run the simulator with all services in-process")
    simp.add_argument("--spec", required=True, help="cluster spec JSON file")
    simp.add_argument("--script", required=True, help="workload script JSON file")
    simp.add_argument("--seed", type=int, default=int(_env_default("seed", "0")))
    simp.add_argument("--duration", default=_env_default("duration", "60s"))
    simp.add_argument("--listen", default=_env_default("listen", "127.0.0.1:8080"))
    simp.add_argument("--log", default=_env_default("log"),
                      help="write the applied event log to this ndjson file")
    simp.add_argument("--bus-dir", default=_env_default("bus_dir"))
    simp.add_argument("--pace", type=float,
                      default=float(_env_default("pace", "0")),
                      help="simulated seconds per wall second (0 = unpaced)")
    simp.add_argument("--hold", action="store_true",
                      help="keep serving the API after the run until SIGINT")
    simp.set_defaults(func=cmd_sim)

    replay = sub.add_parser("replay", help="rebuild a model from an event log")
    replay.add_argument("log_file")
    replay.set_defaults(func=cmd_replay)

    validate = sub.add_parser("validate", help="replay a log and check invariants")
    validate.add_argument("--log", required=True)
    validate.set_defaults(func=cmd_validate)

    query = sub.add_parser("query", help="POST a query file to a service")
    query.add_argument("url")
    query.add_argument("query_file")
    query.set_defaults(func=cmd_query)

    export = sub.add_parser("export", help="dump one series as CSV")
    export.add_argument("--bus-dir", required=True)
    export.add_argument("--entity", required=True)
    export.add_argument("--metric", required=True)
    export.set_defaults(func=cmd_export)

    return parser


def _install_shutdown_event() -> threading.Event:
    stop = threading.Event()

    def handler(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
    return stop


def _serve_settings(args) -> dict:
    """Effective serve settings: flags > SEASTAR_ env > config file > defaults."""
    settings = {"mode": "master", "listen": "127.0.0.1:8080", "upstream": None,
                "cache_ttl": "2s", "cache_capacity": 1024, "bus_dir": None}
    if args.config:
        try:
            loaded = json.loads(open(args.config).read())
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read config file: {exc}")
        unknown = set(loaded) - set(settings)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        settings.update(loaded)
    for key in settings:
        env_value = _env_default(key)
        if env_value is not None:
            settings[key] = env_value
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            settings[key] = flag_value
    settings["cache_capacity"] = int(settings["cache_capacity"])
    return settings


def cmd_serve(args) -> int:
    settings = _serve_settings(args)
    host, port = parse_listen(settings["listen"])
    config = TierConfig(
        mode=settings["mode"], upstream=settings["upstream"],
        listen_host=host, listen_port=port,
        cache_ttl_s=parse_duration(settings["cache_ttl"]) / NANOS_PER_SECOND,
        cache_capacity=settings["cache_capacity"],
    )
    stop = _install_shutdown_event()
    bus = Bus(spill_dir=settings["bus_dir"]) if settings["bus_dir"] else None
    if config.mode == "master":
        model = ModelStore()
        tseries = TimeSeriesStore(lifetime_provider=store_lifetimes(model))
        engine = MetricEngine(model, tseries)
        ingest = IngestPipeline(bus, model, tseries) if bus is not None else None

        def counters() -> dict:
            stats = {"dead_letter": engine.dead_letter_count,
                     "webhooks_delivered": engine.delivered_count}
            if ingest is not None:
                stats.update({
                    "events_applied": ingest.events_applied,
                    "events_rejected": ingest.events_rejected,
                    "samples_accepted": ingest.samples_accepted,
                    "samples_rejected": ingest.samples_rejected,
                })
            return stats

        service = ApiService(config, model=model, tseries=tseries,
                             engine=engine, bus=bus, stats_provider=counters)
    else:
        ingest = None
        service = ApiService(config, bus=bus)
    service.start()
    print(f"seastar {config.mode} listening on {service.address}", flush=True)
    try:
        while not stop.is_set():
            if ingest is not None:
                ingest.drain()
            stop.wait(0.2)
    finally:
        service.stop()
        if bus is not None:
            bus.close()
    return 0


def cmd_sim(args) -> int:
    spec = ClusterSpec.from_file(args.spec)
    spec = ClusterSpec(spec.nodes, spec.processors_per_node,
                       spec.cores_per_processor, seed=args.seed)
    script = WorkloadScript.from_file(args.script)
    duration = parse_duration(args.duration)
    host, port = parse_listen(args.listen)
    stop = _install_shutdown_event()
    bus = Bus(spill_dir=args.bus_dir) if args.bus_dir else None
    harness = SimHarness(spec, script, HarnessConfig(), bus=bus)
    service = ApiService(
        TierConfig(mode="master", listen_host=host, listen_port=port),
        model=harness.model, tseries=harness.tseries, engine=harness.engine,
        bus=harness.bus, clock=lambda: harness.now_ns,
        stats_provider=harness.stat_counters,
    ).start()
    print(f"seastar sim serving on {service.address}", flush=True)
    try:
        end = harness.now_ns + duration
        step = NANOS_PER_SECOND if args.pace <= 0 else max(
            1, int(NANOS_PER_SECOND / 10))
        while harness.now_ns < end and not stop.is_set():
            harness.run(min(step, end - harness.now_ns))
            if args.pace > 0:
                time.sleep(step / NANOS_PER_SECOND / args.pace)
        if args.log:
            count = harness.write_event_log(args.log)
            print(f"wrote {count} events to {args.log}", flush=True)
        print(f"sim done at t={harness.now_ns / NANOS_PER_SECOND:.1f}s "
              f"({json.dumps(harness.stat_counters())})", flush=True)
        while args.hold and not stop.is_set():
            stop.wait(0.2)
    finally:
        service.stop()
        harness.close()
    return 0


def cmd_replay(args) -> int:
    store = ModelStore()
    try:
        count = store.replay(read_event_log(args.log_file))
    except (OSError, ValueError) as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    print(f"replayed {count} events: {len(store.graph_ids())} graphs, "
          f"{len(store.applications())} applications")
    return 0


def cmd_validate(args) -> int:
    store = ModelStore()
    try:
        store.replay(read_event_log(args.log))
    except (OSError, ValueError) as exc:
        print(f"validate failed: {exc}", file=sys.stderr)
        return 1
    violations = store.validate()
    if violations:
        for violation in violations:
            print(f"{violation.code}: {violation.detail}")
        return 1
    print("ok")
    return 0


def cmd_query(args) -> int:
    try:
        text = open(args.query_file, "rb").read()
    except OSError as exc:
        print(f"cannot read query file: {exc}", file=sys.stderr)
        return 1
    url = args.url.rstrip("/")
    if not url.startswith(("http://", "https://")):
        url = f"http://{url}"
    request = urllib.request.Request(f"{url}/query", data=text, method="POST")
    try:
        with urllib.request.urlopen(request, timeout=10) as resp:
            body = resp.read()
    except urllib.error.HTTPError as err:
        sys.stdout.buffer.write(err.read())
        sys.stdout.buffer.write(b"\n")
        return 1
    except urllib.error.URLError as exc:
        print(f"query failed: {exc}", file=sys.stderr)
        return 1
    sys.stdout.buffer.write(body)
    sys.stdout.buffer.write(b"\n")
    return 0


def cmd_export(args) -> int:
    bus = Bus(spill_dir=args.bus_dir)
    model = ModelStore()
    tseries = TimeSeriesStore(lifetime_provider=store_lifetimes(model))
    ingest = IngestPipeline(bus, model, tseries, publish_invalidations=False)
    ingest.drain()
    # tolerate a samples-only spill: fall back to lifetime-free acceptance
    if not model.graph_ids():
        tseries = TimeSeriesStore(lifetime_provider=lambda _e: (0, None))
        sub = bus.subscribe(TOPIC_METRIC_SAMPLES, 0)
        while True:
            batch = sub.poll(max_records=2048)
            if not batch:
                break
            for record in batch:
                data = json.loads(record.payload)
                tseries.append(SeriesKey(data["entity_id"], data["metric"]),
                               Sample(int(data["ts"]), float(data["value"])))
            sub.ack(batch[-1].offset)
    bus.close()
    try:
        sys.stdout.write(tseries.export_csv(SeriesKey(args.entity, args.metric)))
    except UnknownSeriesError:
        print(f"no such series: {args.entity} {args.metric}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 0


if __name__ == "__main__":
    sys.exit(main())
