"""Deterministic synthetic HPC cluster.

Builds a platform of nodes/processors/cores, runs a scripted workload of
jobs (processes x threads) through a FIFO scheduler, and generates metric
values from closed-form generators. The simulator is the sensor source for
the exporters and, through :meth:`Simulator.ground_truth`, the oracle that
system tests compare the live model against.

Time is logical: nothing happens until :meth:`Simulator.advance` moves the
clock, and (spec, script, seed) fully determine every event and sample.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .kinds import APPLICATION, PLATFORM, mint_id

NANOS_PER_SECOND = 1_000_000_000


class InvalidSpecError(ValueError):
    pass


class FutureTimeError(ValueError):
    pass


def _ns(seconds: float) -> int:
    return int(round(seconds * NANOS_PER_SECOND))


@dataclass(frozen=True)
class ClusterSpec:
    nodes: int
    processors_per_node: int
    cores_per_processor: int
    seed: int = 0

    def validate(self) -> None:
        if min(self.nodes, self.processors_per_node, self.cores_per_processor) < 1:
            raise InvalidSpecError("all counts must be >= 1")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ClusterSpec":
        return cls(
            nodes=int(data["nodes"]),
            processors_per_node=int(data["processors_per_node"]),
            cores_per_processor=int(data["cores_per_processor"]),
            seed=int(data.get("seed", 0)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ClusterSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class GeneratorSpec:
    """Closed-form metric generator.

    kinds: constant {value}; linear {rate, start} counting per second;
    sinusoid {amplitude, period, offset}; step {before, after, at}.
    Elapsed time is measured from the owning entity's start (platform
    entities start at t=0).
    """

    kind: str
    params: tuple[tuple[str, float], ...]

    def value_at(self, t_ns: int, origin_ns: int) -> float:
        p = dict(self.params)
        elapsed = (t_ns - origin_ns) / NANOS_PER_SECOND
        if self.kind == "constant":
            return p["value"]
        if self.kind == "linear":
            return p.get("start", 0.0) + p["rate"] * elapsed
        if self.kind == "sinusoid":
            return p.get("offset", 0.0) + p["amplitude"] * math.sin(
                2.0 * math.pi * elapsed / p["period"]
            )
        if self.kind == "step":
            return p["before"] if elapsed < p["at"] else p["after"]
        raise InvalidSpecError(f"unknown generator kind {self.kind!r}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GeneratorSpec":
        params = tuple(
            sorted((k, float(v)) for k, v in data.items() if k != "kind")
        )
        spec = cls(kind=data["kind"], params=params)
        spec.value_at(0, 0)  # fail fast on unknown kinds / missing params
        return spec


@dataclass(frozen=True)
class JobSpec:
    name: str
    submit_time_s: float
    duration_s: float
    processes: int
    threads_per_process: int
    metrics: tuple[tuple[str, tuple[tuple[str, GeneratorSpec], ...]], ...] = ()
    edges: tuple[tuple[int, int], ...] = ()
    oversubscribe: bool = False

    def generators_for(self, kind: str) -> tuple[tuple[str, GeneratorSpec], ...]:
        for k, gens in self.metrics:
            if k == kind:
                return gens
        return ()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "JobSpec":
        metrics = []
        for kind, entries in (data.get("metrics") or {}).items():
            metrics.append((
                kind,
                tuple((e["metric"], GeneratorSpec.from_dict(e["generator"]))
                      for e in entries),
            ))
        return cls(
            name=str(data["name"]),
            submit_time_s=float(data["submit_time"]),
            duration_s=float(data["duration"]),
            processes=int(data["processes"]),
            threads_per_process=int(data["threads_per_process"]),
            metrics=tuple(metrics),
            edges=tuple((int(a), int(b)) for a, b in data.get("edges") or ()),
            oversubscribe=bool(data.get("oversubscribe", False)),
        )


@dataclass(frozen=True)
class WorkloadScript:
    jobs: tuple[JobSpec, ...]
    platform_metrics: tuple[tuple[str, tuple[tuple[str, GeneratorSpec], ...]], ...] = ()

    def validate(self) -> None:
        for job in self.jobs:
            if job.submit_time_s < 0 or job.duration_s <= 0:
                raise InvalidSpecError(f"job {job.name}: times must be non-negative")
            if job.processes < 1 or job.threads_per_process < 1:
                raise InvalidSpecError(f"job {job.name}: counts must be >= 1")
            for a, b in job.edges:
                if not (0 <= a < job.processes and 0 <= b < job.processes):
                    raise InvalidSpecError(f"job {job.name}: edge index out of range")
        names = [job.name for job in self.jobs]
        if len(names) != len(set(names)):
            raise InvalidSpecError("job names must be unique")

    def platform_generators_for(self, kind: str):
        for k, gens in self.platform_metrics:
            if k == kind:
                return gens
        return ()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "WorkloadScript":
        platform = []
        for kind, entries in (data.get("platform_metrics") or {}).items():
            platform.append((
                kind,
                tuple((e["metric"], GeneratorSpec.from_dict(e["generator"]))
                      for e in entries),
            ))
        script = cls(
            jobs=tuple(JobSpec.from_dict(j) for j in data.get("jobs") or ()),
            platform_metrics=tuple(platform),
        )
        script.validate()
        return script

    @classmethod
    def from_file(cls, path: str | Path) -> "WorkloadScript":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------- #
# source views (what sensors observe)
# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class EntityView:
    stable_key: str
    kind: str
    side: str
    parent_key: str | None
    labels: tuple[tuple[str, str], ...] = ()

    @property
    def entity_id(self) -> str:
        return mint_id(self.side, self.kind, self.stable_key)


@dataclass(frozen=True)
class EdgeView:
    stable_key: str
    source_key: str  # process stable keys
    target_key: str
    labels: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class StructureView:
    """Application-side structure the context exporter observes."""

    at: int
    entities: tuple[EntityView, ...]
    placements: tuple[tuple[str, str], ...]  # (thread key, core key)
    edges: tuple[EdgeView, ...]


@dataclass(frozen=True)
class GroundTruth:
    """Authoritative cluster state at one instant, in minted-entity-id terms."""

    at: int
    platform_entities: frozenset[str]
    application_entities: frozenset[str]
    edges: frozenset[tuple[str, str, str]]  # (edge id, source id, target id)
    placements: frozenset[tuple[str, str]]  # (thread id, core id)

    @property
    def entities(self) -> frozenset[str]:
        return self.platform_entities | self.application_entities


@dataclass
class _JobRun:
    spec: JobSpec
    start_ns: int
    end_ns: int
    # process stable key -> node stable key
    process_nodes: dict[str, str] = field(default_factory=dict)
    # thread stable key -> core stable key
    thread_cores: dict[str, str] = field(default_factory=dict)
    pids: dict[str, int] = field(default_factory=dict)
    tids: dict[str, int] = field(default_factory=dict)


class Simulator:
    """Scripted cluster with FIFO, lowest-id-first gang scheduling.

    A job starts when every process fits on some node (a process's threads
    never straddle nodes); otherwise it queues FIFO with head-of-line
    blocking. Scripted oversubscription bypasses the capacity check and packs
    threads onto the least-loaded, lowest-id cores.
    """

    def __init__(self, spec: ClusterSpec, script: WorkloadScript):
        spec.validate()
        script.validate()
        self.spec = spec
        self.script = script
        self.rng = random.Random(spec.seed)  # reserved for scripted noise
        self.clock_ns = 0
        self._pending = sorted(
            script.jobs, key=lambda j: (j.submit_time_s, j.name)
        )
        self._queue: list[JobSpec] = []
        self._running: dict[str, _JobRun] = {}
        self._history: list[_JobRun] = []  # finished runs keep their records
        self._changes: list[tuple[int, str, str]] = []
        self._pid_counter = 1000
        self._tid_counter = 20000
        self._build_platform()

    # ------------------------------------------------------------------ #
    # platform
    # ------------------------------------------------------------------ #

    def _build_platform(self) -> None:
        self._nodes: list[str] = []
        self._node_cores: dict[str, list[str]] = {}
        self._core_owner: dict[str, list[str]] = {}  # core key -> thread keys
        self._platform_views: list[EntityView] = []
        for n in range(self.spec.nodes):
            node_key = f"n{n:02d}"
            self._nodes.append(node_key)
            self._node_cores[node_key] = []
            self._platform_views.append(EntityView(
                stable_key=node_key, kind="node", side=PLATFORM, parent_key=None,
                labels=(("hostname", node_key),),
            ))
            for p in range(self.spec.processors_per_node):
                proc_key = f"{node_key}.p{p}"
                self._platform_views.append(EntityView(
                    stable_key=proc_key, kind="processor", side=PLATFORM,
                    parent_key=node_key,
                ))
                for c in range(self.spec.cores_per_processor):
                    core_key = f"{proc_key}.c{c}"
                    self._node_cores[node_key].append(core_key)
                    self._core_owner[core_key] = []
                    self._platform_views.append(EntityView(
                        stable_key=core_key, kind="core", side=PLATFORM,
                        parent_key=proc_key,
                    ))

    # ------------------------------------------------------------------ #
    # stepping
    # ------------------------------------------------------------------ #

    def advance(self, dt_ns: int) -> list[tuple[int, str, str]]:
        """Advance the logical clock, returning (ts, change, job) records."""
        if dt_ns <= 0:
            raise ValueError("dt must be > 0")
        target = self.clock_ns + dt_ns
        changes_before = len(self._changes)
        while True:
            next_finish = min(
                (run.end_ns for run in self._running.values()), default=None
            )
            next_submit = (
                _ns(self._pending[0].submit_time_s) if self._pending else None
            )
            candidates = [t for t in (next_finish, next_submit) if t is not None]
            next_event = min(candidates, default=None)
            if next_event is None or next_event > target:
                break
            self._step_at(next_event)
        self.clock_ns = target
        return self._changes[changes_before:]

    def run_until(self, t_ns: int) -> None:
        if t_ns > self.clock_ns:
            self.advance(t_ns - self.clock_ns)

    def _step_at(self, ts: int) -> None:
        finished = sorted(
            name for name, run in self._running.items() if run.end_ns <= ts
        )
        for name in finished:
            run = self._running.pop(name)
            for thread_key, core_key in run.thread_cores.items():
                owners = self._core_owner[core_key]
                if thread_key in owners:
                    owners.remove(thread_key)
            self._history.append(run)
            self._changes.append((run.end_ns, "job_finished", name))
        while self._pending and _ns(self._pending[0].submit_time_s) <= ts:
            job = self._pending.pop(0)
            self._queue.append(job)
            self._changes.append((_ns(job.submit_time_s), "job_submitted", job.name))
        self._schedule(ts)

    def _schedule(self, ts: int) -> None:
        while self._queue:
            job = self._queue[0]
            placement = self._try_place(job)
            if placement is None:
                return  # FIFO head-of-line blocking
            self._queue.pop(0)
            self._start_job(job, placement, ts)

    def _free_cores(self, node_key: str) -> list[str]:
        return [c for c in self._node_cores[node_key] if not self._core_owner[c]]

    def _try_place(self, job: JobSpec) -> dict[int, tuple[str, list[str]]] | None:
        """Process index -> (node, cores); lowest-id-first, None if it won't fit."""
        if job.oversubscribe:
            return self._place_oversubscribed(job)
        free = {node: self._free_cores(node) for node in self._nodes}
        placement: dict[int, tuple[str, list[str]]] = {}
        for index in range(job.processes):
            chosen = None
            for node in self._nodes:
                if len(free[node]) >= job.threads_per_process:
                    chosen = node
                    break
            if chosen is None:
                return None
            cores = free[chosen][: job.threads_per_process]
            free[chosen] = free[chosen][job.threads_per_process:]
            placement[index] = (chosen, cores)
        return placement

    def _place_oversubscribed(self, job: JobSpec) -> dict[int, tuple[str, list[str]]]:
        load = {core: len(threads) for core, threads in self._core_owner.items()}
        placement: dict[int, tuple[str, list[str]]] = {}
        for index in range(job.processes):
            node = self._nodes[index % len(self._nodes)]
            cores = []
            for _ in range(job.threads_per_process):
                core = min(self._node_cores[node], key=lambda c: (load[c], c))
                load[core] += 1
                cores.append(core)
            placement[index] = (node, cores)
        return placement

    def _start_job(
        self, job: JobSpec, placement: dict[int, tuple[str, list[str]]], ts: int
    ) -> None:
        run = _JobRun(spec=job, start_ns=ts, end_ns=ts + _ns(job.duration_s))
        for index in range(job.processes):
            node_key, cores = placement[index]
            proc_key = f"{job.name}.p{index:03d}"
            self._pid_counter += 1
            run.process_nodes[proc_key] = node_key
            run.pids[proc_key] = self._pid_counter
            for t_index, core_key in enumerate(cores):
                thread_key = f"{proc_key}.t{t_index}"
                self._tid_counter += 1
                run.thread_cores[thread_key] = core_key
                run.tids[thread_key] = self._tid_counter
                self._core_owner[core_key].append(thread_key)
        self._running[job.name] = run
        self._changes.append((ts, "job_started", job.name))

    # ------------------------------------------------------------------ #
    # SensorSource interface
    # ------------------------------------------------------------------ #

    def clock(self) -> int:
        return self.clock_ns

    def enumerate_platform(self) -> tuple[EntityView, ...]:
        return tuple(self._platform_views)

    def poll_structure(self) -> StructureView:
        entities: list[EntityView] = []
        placements: list[tuple[str, str]] = []
        edges: list[EdgeView] = []
        for name in sorted(self._running):
            run = self._running[name]
            job = run.spec
            entities.append(EntityView(
                stable_key=job.name, kind="job", side=APPLICATION, parent_key=None,
                labels=(("name", job.name),),
            ))
            for proc_key in sorted(run.process_nodes):
                entities.append(EntityView(
                    stable_key=proc_key, kind="process", side=APPLICATION,
                    parent_key=job.name,
                    labels=(
                        ("hostname", run.process_nodes[proc_key]),
                        ("pid", str(run.pids[proc_key])),
                    ),
                ))
            for thread_key in sorted(run.thread_cores):
                proc_key = thread_key.rsplit(".", 1)[0]
                entities.append(EntityView(
                    stable_key=thread_key, kind="thread", side=APPLICATION,
                    parent_key=proc_key,
                    labels=(("tid", str(run.tids[thread_key])),),
                ))
                placements.append((thread_key, run.thread_cores[thread_key]))
            for a, b in job.edges:
                edges.append(EdgeView(
                    stable_key=f"{job.name}.p{a:03d}-p{b:03d}",
                    source_key=f"{job.name}.p{a:03d}",
                    target_key=f"{job.name}.p{b:03d}",
                    labels=(("channel", "comm"),),
                ))
        return StructureView(
            at=self.clock_ns,
            entities=tuple(entities),
            placements=tuple(placements),
            edges=tuple(edges),
        )

    def poll_metrics(self, entity: EntityView) -> list[tuple[str, float]]:
        if entity.side == PLATFORM:
            gens = self.script.platform_generators_for(entity.kind)
            return [(m, g.value_at(self.clock_ns, 0)) for m, g in gens]
        run = self._run_for(entity.stable_key)
        if run is None:
            return []
        gens = run.spec.generators_for(entity.kind)
        return [(m, g.value_at(self.clock_ns, run.start_ns)) for m, g in gens]

    def _run_for(self, app_stable_key: str) -> _JobRun | None:
        job_name = app_stable_key.split(".", 1)[0]
        return self._running.get(job_name)

    # ------------------------------------------------------------------ #
    # ground truth (the oracle)
    # ------------------------------------------------------------------ #

    def ground_truth(self, t_ns: int) -> GroundTruth:
        if t_ns > self.clock_ns:
            raise FutureTimeError(f"t={t_ns} is ahead of the clock {self.clock_ns}")
        platform = frozenset(v.entity_id for v in self._platform_views)
        app: set[str] = set()
        edges: set[tuple[str, str, str]] = set()
        placements: set[tuple[str, str]] = set()
        for run in list(self._running.values()) + self._history:
            if not (run.start_ns <= t_ns < run.end_ns):
                continue
            job = run.spec
            app.add(mint_id(APPLICATION, "job", job.name))
            for proc_key in run.process_nodes:
                app.add(mint_id(APPLICATION, "process", proc_key))
            for thread_key, core_key in run.thread_cores.items():
                app.add(mint_id(APPLICATION, "thread", thread_key))
                placements.add((
                    mint_id(APPLICATION, "thread", thread_key),
                    mint_id(PLATFORM, "core", core_key),
                ))
            for a, b in job.edges:
                edges.add((
                    mint_id(APPLICATION, "edge", f"{job.name}.p{a:03d}-p{b:03d}"),
                    mint_id(APPLICATION, "process", f"{job.name}.p{a:03d}"),
                    mint_id(APPLICATION, "process", f"{job.name}.p{b:03d}"),
                ))
        return GroundTruth(
            at=t_ns,
            platform_entities=platform,
            application_entities=frozenset(app),
            edges=frozenset(edges),
            placements=frozenset(placements),
        )

    def expected_series_value(self, entity_id: str, metric: str, t_ns: int) -> float | None:
        """Closed-form generator value, or None when no generator applies."""
        side, kind, stable_key = entity_id.split("/", 2)
        if side == PLATFORM:
            for m, gen in self.script.platform_generators_for(kind):
                if m == metric:
                    return gen.value_at(t_ns, 0)
            return None
        job_name = stable_key.split(".", 1)[0]
        for run in list(self._running.values()) + self._history:
            if run.spec.name == job_name:
                for m, gen in run.spec.generators_for(kind):
                    if m == metric:
                        return gen.value_at(t_ns, run.start_ns)
        return None

    def change_times(self) -> list[int]:
        """Timestamps at which ground truth changed, ascending and unique."""
        return sorted({ts for ts, _, _ in self._changes})

    def structural_changes(self) -> list[tuple[int, str, str]]:
        return list(self._changes)
