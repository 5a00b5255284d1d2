"""The acceptance fixture: 16 nodes x 2 processors x 2 cores, 8 jobs,
~200 processes, ~400 threads over 120 simulated seconds, seed 7."""

from __future__ import annotations

from seastar.sim import ClusterSpec, GeneratorSpec, JobSpec, WorkloadScript

S = 1_000_000_000

FIXTURE_SPEC = ClusterSpec(nodes=16, processors_per_node=2,
                           cores_per_processor=2, seed=7)

FIXTURE_DURATION_NS = 120 * S


def _gen(kind: str, **params) -> GeneratorSpec:
    return GeneratorSpec.from_dict({"kind": kind, **params})


def _job(name: str, submit: float, duration: float, procs: int) -> JobSpec:
    return JobSpec(
        name=name, submit_time_s=submit, duration_s=duration,
        processes=procs, threads_per_process=2,
        metrics=(
            ("process", (
                ("io_read_bytes", _gen("linear", rate=40_000.0, start=0.0)),
                ("io_write_bytes", _gen("linear", rate=25_000.0, start=0.0)),
            )),
            ("thread", (
                ("cpu_utilization", _gen("sinusoid", amplitude=0.35,
                                         period=12.0, offset=0.55)),
            )),
        ),
        edges=tuple((i, i + 1) for i in range(min(procs, 6) - 1)),
    )


def fixture_script() -> WorkloadScript:
    # 5 wide jobs (30 procs) + 3 narrow (17 procs): 201 processes, 402 threads
    jobs = (
        _job("wide0", 0.0, 14.0, 30),
        _job("narrow0", 4.0, 10.0, 17),
        _job("wide1", 15.0, 14.0, 30),
        _job("narrow1", 22.0, 10.0, 17),
        _job("wide2", 35.0, 14.0, 30),
        _job("wide3", 55.0, 14.0, 30),
        _job("narrow2", 61.0, 10.0, 17),
        _job("wide4", 75.0, 14.0, 30),
    )
    return WorkloadScript(
        jobs=jobs,
        platform_metrics=(
            ("node", (("memory_total", _gen("constant", value=64e9)),)),
        ),
    )


def fixture_totals() -> tuple[int, int]:
    script = fixture_script()
    procs = sum(j.processes for j in script.jobs)
    threads = sum(j.processes * j.threads_per_process for j in script.jobs)
    return procs, threads
