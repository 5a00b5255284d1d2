"""Sensors + ingest: convergence to ground truth, restarts, fidelity."""

import math

from seastar.bus import Bus, BusLimits, TOPIC_STRUCTURAL_EVENTS
from seastar.sensors import ContextExporter, NodeExporter, SensorConfig
from seastar.sim import ClusterSpec, GeneratorSpec, JobSpec, Simulator, WorkloadScript
from seastar.system import HarnessConfig, SimHarness
from seastar.timeseries import SeriesKey

S = 1_000_000_000


def job(name, submit, duration, procs=1, threads=1, **kw):
    return JobSpec(name=name, submit_time_s=submit, duration_s=duration,
                   processes=procs, threads_per_process=threads, **kw)


def model_state(harness, t):
    """(entities, edges, placements) as the live model sees them at t."""
    nodes, edges = set(), set()
    for graph_id in ["platform"] + harness.model.applications():
        snap = harness.model.snapshot(graph_id, t)
        nodes |= snap.node_ids()
        for graph in _walk(snap):
            for edge in graph.edges:
                edges.add((edge.id, edge.source, edge.target))
    placements = {
        (m.app_entity, m.platform_entity)
        for m in harness.model.mappings() if m.active_at(t)
    }
    return nodes, edges, placements


def _walk(graph):
    yield graph
    for node in graph.nodes:
        if node.nested is not None:
            yield from _walk(node.nested)


def assert_converged(harness, t):
    truth = harness.sim.ground_truth(t)
    nodes, edges, placements = model_state(harness, t)
    assert nodes == set(truth.entities)
    assert edges == set(truth.edges)
    assert placements == set(truth.placements)


SCRIPT = WorkloadScript(jobs=(
    job("alpha", 1, 6, procs=2, threads=2, edges=((0, 1),)),
    job("beta", 3, 8, procs=1, threads=2),
    job("gamma", 4, 2, procs=1, threads=1),
))


class TestContextExporter:
    def test_empty_cluster_publishes_platform_only(self):
        harness = SimHarness(ClusterSpec(2, 1, 2), WorkloadScript(jobs=()))
        harness.run(2 * S)
        assert harness.ingest.events_applied == 2 + 2 + 4
        assert all(e.action == "create_node" for e in harness.model.event_log)
        assert_converged(harness, 1 * S)

    def test_scripted_lifecycle_converges_everywhere(self):
        harness = SimHarness(ClusterSpec(2, 1, 2), SCRIPT)
        harness.run(15 * S)
        lag = 2 * harness.config.sensor.structure_period_ns
        changes = harness.sim.change_times()
        for t in range(0, 15 * S, S // 4):
            if all(abs(t - c) >= lag for c in changes):
                assert_converged(harness, t)

    def test_quiescent_state_converges_within_two_periods(self):
        harness = SimHarness(ClusterSpec(2, 1, 2), SCRIPT)
        harness.run(20 * S)  # all jobs done by 12s; state quiescent
        assert_converged(harness, harness.now_ns)
        assert harness.ingest.events_rejected == 0

    def test_thread_migration_emits_unmap_map_pair(self):
        # hand-drive a source whose placement changes between polls
        class MigratingSource:
            def __init__(self):
                self.sim = Simulator(ClusterSpec(1, 1, 2), WorkloadScript(jobs=(
                    job("a", 0, 100, procs=1, threads=1),)))
                self.sim.run_until(1 * S)
                self.core = "n00.p0.c0"

            def clock(self):
                return self.sim.clock()

            def enumerate_platform(self):
                return self.sim.enumerate_platform()

            def poll_metrics(self, entity):
                return []

            def poll_structure(self):
                view = self.sim.poll_structure()
                placements = tuple(
                    (thread, self.core) for thread, _ in view.placements
                )
                return type(view)(at=view.at, entities=view.entities,
                                  placements=placements, edges=view.edges)

        source = MigratingSource()
        bus = Bus()
        exporter = ContextExporter(source, bus, SensorConfig())
        exporter.step()
        source.core = "n00.p0.c1"  # migrate
        source.sim.advance(1 * S)
        exporter.step()
        sub = bus.subscribe(TOPIC_STRUCTURAL_EVENTS, 0)
        actions = []
        while True:
            batch = sub.poll(max_records=64)
            if not batch:
                break
            actions.extend(
                __import__("json").loads(r.payload)["action"] for r in batch
            )
            sub.ack(batch[-1].offset)
        tail = [a for a in actions if a in ("map", "unmap")]
        assert tail == ["map", "unmap", "map"]

    def test_restart_emits_no_spurious_creates(self):
        harness = SimHarness(ClusterSpec(1, 1, 4), WorkloadScript(jobs=(
            job("steady", 0, 100, procs=1, threads=2),)))
        harness.run(3 * S)
        applied_before = harness.ingest.events_applied
        # restart: a fresh exporter primed from the live model
        replacement = ContextExporter(harness.sim, harness.bus, harness.config.sensor)
        replacement.resume_from(harness.model, harness.sim.poll_structure())
        replacement.step()
        harness.ingest.drain()
        assert harness.ingest.events_applied == applied_before
        assert harness.ingest.events_rejected == 0


class TestNodeExporter:
    def test_constant_platform_metric_stored(self):
        script = WorkloadScript(
            jobs=(),
            platform_metrics=(
                ("node", (("memory_total",
                           GeneratorSpec.from_dict({"kind": "constant", "value": 64e9})),)),
            ),
        )
        harness = SimHarness(ClusterSpec(1, 1, 1), script)
        harness.run(5 * S)
        key = SeriesKey("platform/node/n00", "memory_total")
        samples = harness.tseries.query_range(key, 0, 10 * S)
        assert samples and all(s.value == 64e9 for s in samples)

    def test_no_samples_after_entity_close(self):
        script = WorkloadScript(jobs=(
            JobSpec(name="brief", submit_time_s=0, duration_s=3, processes=1,
                    threads_per_process=1,
                    metrics=(("process", (("cpu_utilization",
                              GeneratorSpec.from_dict({"kind": "constant", "value": 0.9})),)),)),
        ))
        harness = SimHarness(ClusterSpec(1, 1, 1), script)
        harness.run(10 * S)
        key = SeriesKey("application/process/brief.p000", "cpu_utilization")
        samples = harness.tseries.query_range(key, 0, 20 * S)
        assert samples
        close_ts = max(
            e.ts for e in harness.model.event_log if e.action == "close_node"
        )
        assert all(s.ts <= close_ts for s in samples)

    def test_sinusoid_series_matches_generator(self):
        gen = {"kind": "sinusoid", "amplitude": 1000.0, "period": 8.0, "offset": 2000.0}
        script = WorkloadScript(jobs=(
            JobSpec(name="waves", submit_time_s=0, duration_s=30, processes=1,
                    threads_per_process=1,
                    metrics=(("process", (("io_read_bytes",
                              GeneratorSpec.from_dict(gen)),)),)),
        ))
        harness = SimHarness(ClusterSpec(1, 1, 1), script)
        harness.run(30 * S)
        start_ns = next(
            ts for ts, change, name in harness.sim.structural_changes()
            if change == "job_started"
        )
        key = SeriesKey("application/process/waves.p000", "io_read_bytes")
        for sample in harness.tseries.query_range(key, 0, 40 * S):
            elapsed = (sample.ts - start_ns) / S
            expected = 2000.0 + 1000.0 * math.sin(2 * math.pi * elapsed / 8.0)
            assert abs(sample.value - expected) < 1e-6

    def test_allowlist_filters_metrics(self):
        script = WorkloadScript(jobs=(
            JobSpec(name="a", submit_time_s=0, duration_s=10, processes=1,
                    threads_per_process=1,
                    metrics=(("process", (
                        ("io_read_bytes", GeneratorSpec.from_dict({"kind": "constant", "value": 1.0})),
                        ("net_tx_bytes", GeneratorSpec.from_dict({"kind": "constant", "value": 2.0})),
                    )),)),
        ))
        config = HarnessConfig(sensor=SensorConfig(
            metric_allowlist=frozenset({"io_read_bytes"})))
        harness = SimHarness(ClusterSpec(1, 1, 1), script, config)
        harness.run(5 * S)
        entity = "application/process/a.p000"
        assert harness.tseries.list_metrics(entity) == ["io_read_bytes"]

    def test_backpressure_drops_samples_not_events(self):
        script = WorkloadScript(jobs=(
            JobSpec(name="a", submit_time_s=0, duration_s=10, processes=1,
                    threads_per_process=1,
                    metrics=(("process", (("io_read_bytes",
                              GeneratorSpec.from_dict({"kind": "constant", "value": 1.0})),)),)),
        ))
        # room for all 7 structural events but not for ~11 metric samples
        bus = Bus(limits=BusLimits(max_records_per_topic=8))
        harness = SimHarness(ClusterSpec(1, 1, 1), script, bus=bus)
        harness.run(10 * S)
        assert harness.node_exporter.samples_dropped > 0
        assert harness.ingest.events_rejected == 0
        # every structural event made it through regardless
        assert_converged(harness, harness.now_ns)


class TestSourceFailures:
    def test_poll_failure_leaves_gap_then_recovers(self):
        class FlakySource:
            def __init__(self):
                self.sim = Simulator(ClusterSpec(1, 1, 2), WorkloadScript(jobs=(
                    job("steady", 0, 100, procs=1, threads=1),)))
                self.fail = False

            def clock(self):
                return self.sim.clock()

            def enumerate_platform(self):
                return self.sim.enumerate_platform()

            def poll_structure(self):
                if self.fail:
                    raise ConnectionError("source down")
                return self.sim.poll_structure()

            def poll_metrics(self, entity):
                if self.fail:
                    raise ConnectionError("source down")
                return self.sim.poll_metrics(entity)

        source = FlakySource()
        bus = Bus()
        context_exporter = ContextExporter(source, bus)
        node_exporter = NodeExporter(source, bus)
        source.sim.run_until(1 * S)
        assert context_exporter.step() > 0
        source.fail = True
        source.sim.run_until(2 * S)
        assert context_exporter.step() == 0
        assert node_exporter.step() == 0
        assert context_exporter.source_errors == 1
        assert node_exporter.source_errors >= 1
        source.fail = False
        source.sim.run_until(3 * S)
        assert context_exporter.step() == 0  # unchanged structure: no events
        assert node_exporter.step() == 0     # no generators scripted
        assert context_exporter.source_errors == 1
