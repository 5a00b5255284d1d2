"""In-process wiring of simulator, sensors, bus, stores, and metric engine.

Drives everything on the simulator's logical clock in fixed steps: advance
the cluster, let due exporters publish, drain the ingest pipeline, tick the
notification scheduler. One such harness backs the `seastar sim` subcommand
and the system-level tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .bus import Bus
from .context import ContextView
from .events import write_event_log
from .ingest import IngestPipeline
from .metrics import MetricEngine
from .model import ModelStore
from .sensors import ContextExporter, NodeExporter, SensorConfig
from .sim import ClusterSpec, Simulator, WorkloadScript
from .timeseries import TimeSeriesStore, store_lifetimes

NANOS_PER_SECOND = 1_000_000_000


@dataclass(frozen=True)
class HarnessConfig:
    sensor: SensorConfig = SensorConfig()
    step_ns: int = NANOS_PER_SECOND // 10
    engine_tick_ns: int = NANOS_PER_SECOND
    retention_horizon_ns: int = 24 * 3600 * NANOS_PER_SECOND


class SimHarness:
    def __init__(
        self,
        spec: ClusterSpec,
        script: WorkloadScript,
        config: HarnessConfig | None = None,
        bus: Bus | None = None,
    ):
        self.config = config or HarnessConfig()
        self.sim = Simulator(spec, script)
        self.bus = bus or Bus()
        self.model = ModelStore()
        self.tseries = TimeSeriesStore(
            lifetime_provider=store_lifetimes(self.model),
            horizon_ns=self.config.retention_horizon_ns,
        )
        self.engine = MetricEngine(
            self.model, self.tseries,
            known_raw_metrics=self._script_metric_names(script),
            backoff_base_s=0.05,
        )
        self.context = ContextView(self.model)
        self.context_exporter = ContextExporter(self.sim, self.bus, self.config.sensor)
        self.node_exporter = NodeExporter(self.sim, self.bus, self.config.sensor)
        self.ingest = IngestPipeline(self.bus, self.model, self.tseries)
        self._next_engine_tick = 0

    @staticmethod
    def _script_metric_names(script: WorkloadScript) -> set[str]:
        names: set[str] = set()
        for _, gens in script.platform_metrics:
            names |= {metric for metric, _ in gens}
        for job in script.jobs:
            for _, gens in job.metrics:
                names |= {metric for metric, _ in gens}
        return names

    @property
    def now_ns(self) -> int:
        return self.sim.clock_ns

    def run(self, duration_ns: int) -> None:
        """Advance simulated time, keeping sensors/ingest/engine in lockstep."""
        end = self.sim.clock_ns + duration_ns
        self.pump()  # export the state at the starting instant first
        while self.sim.clock_ns < end:
            dt = min(self.config.step_ns, end - self.sim.clock_ns)
            self.sim.advance(dt)
            self.pump()

    def pump(self) -> None:
        """One housekeeping pass at the current simulated instant."""
        now = self.sim.clock_ns
        self.context_exporter.maybe_step(now)
        self.node_exporter.maybe_step(now)
        self.ingest.drain()
        if now >= self._next_engine_tick:
            self.engine.detect_and_deliver(now)
            while self._next_engine_tick <= now:
                self._next_engine_tick += self.config.engine_tick_ns

    def write_event_log(self, path: str | Path) -> int:
        return write_event_log(path, self.model.event_log)

    def stat_counters(self) -> dict:
        return {
            "events_applied": self.ingest.events_applied,
            "events_rejected": self.ingest.events_rejected,
            "samples_accepted": self.ingest.samples_accepted,
            "samples_rejected": self.ingest.samples_rejected,
            "samples_dropped": self.node_exporter.samples_dropped,
            "dead_letter": self.engine.dead_letter_count,
            "webhooks_delivered": self.engine.delivered_count,
        }

    def close(self) -> None:
        self.engine.close()
        self.bus.close()
