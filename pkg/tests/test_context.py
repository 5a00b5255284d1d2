"""Context mapping: bidirectional resolution, lifted views, subgraphs."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seastar.context import ContextView, UnknownApplicationError
from seastar.model import ALREADY_MAPPED, KIND_INCOMPATIBLE, NOT_MAPPED, ModelStore

from generators import generate_event_log
from oracles import replay_events
from scenarios import S, ev, platform_events, twelve_event_scenario


def build(events):
    store = ModelStore()
    for event in events:
        result = store.apply_event(event)
        assert result.applied, f"seq {event.seq}: {result.reason}"
    return store, ContextView(store)


@pytest.fixture()
def scenario():
    events, _ = twelve_event_scenario()
    return build(events)


class TestMapUnmap:
    def test_map_then_context_of(self, scenario):
        _, view = scenario
        assert view.context_of("application/thread/j1.p1.t1", 12 * S) == [
            "platform/core/n0.p0.c0"
        ]

    def test_kind_incompatible(self):
        events, _ = twelve_event_scenario()
        store, _ = build(events)
        result = store.apply_event(
            ev(len(events) + 1, 21 * S, "map",
               app_entity="application/thread/j1.p1.t1",
               platform_entity="platform/node/n0")
        )
        assert result.reason == KIND_INCOMPATIBLE

    def test_already_mapped(self):
        events, _ = twelve_event_scenario()
        store, _ = build(events)
        result = store.apply_event(
            ev(len(events) + 1, 21 * S, "map",
               app_entity="application/thread/j1.p1.t1",
               platform_entity="platform/core/n0.p0.c3")
        )
        assert result.reason == ALREADY_MAPPED

    def test_unmap_unmapped(self):
        events, _ = twelve_event_scenario()
        store, _ = build(events)
        result = store.apply_event(
            ev(len(events) + 1, 21 * S, "unmap",
               app_entity="application/thread/j1.p1.t1")
        )
        assert result.applied
        again = store.apply_event(
            ev(len(events) + 2, 22 * S, "unmap",
               app_entity="application/thread/j1.p1.t1")
        )
        assert again.reason == NOT_MAPPED

    def test_unmap_then_empty_context(self, scenario):
        _, view = scenario
        # t3 unmapped at 20s
        assert view.context_of("application/thread/j1.p2.t1", 18 * S) == [
            "platform/core/n0.p0.c2"
        ]

    def test_migration_boundary(self):
        events, _ = twelve_event_scenario()
        store, view = build(events)
        seq = len(events)
        thread = "application/thread/j1.p1.t1"
        store.apply_event(ev(seq + 1, 21 * S, "unmap", app_entity=thread))
        store.apply_event(ev(seq + 2, 21 * S, "map", app_entity=thread,
                             platform_entity="platform/core/n0.p0.c3"))
        assert view.context_of(thread, 21 * S - 1) == ["platform/core/n0.p0.c0"]
        assert view.context_of(thread, 21 * S) == ["platform/core/n0.p0.c3"]


class TestContextOf:
    def test_core_lists_all_threads(self):
        events, _ = twelve_event_scenario()
        store, view = build(events)
        seq = len(events)
        # put a second thread on c0
        store.apply_event(ev(seq + 1, 14 * S, "unmap",
                             app_entity="application/thread/j1.p1.t2"))
        store.apply_event(ev(seq + 2, 14 * S, "map",
                             app_entity="application/thread/j1.p1.t2",
                             platform_entity="platform/core/n0.p0.c0"))
        assert view.context_of("platform/core/n0.p0.c0", 15 * S) == [
            "application/thread/j1.p1.t1",
            "application/thread/j1.p1.t2",
        ]

    def test_unmapped_thread_empty(self):
        events, seq = platform_events()
        events += [
            ev(seq, 0, "create_node", id="application/job/j1", kind="job",
               parent=None, owner="application/job/j1", labels={}),
            ev(seq + 1, 0, "create_node", id="application/process/p", kind="process",
               parent="application/job/j1", labels={}),
            ev(seq + 2, 0, "create_node", id="application/thread/t", kind="thread",
               parent="application/process/p", labels={}),
        ]
        _, view = build(events)
        assert view.context_of("application/thread/t", 1 * S) == []

    def test_process_lifts_to_processors(self, scenario):
        _, view = scenario
        assert view.context_of("application/process/j1.p1", 13 * S) == [
            "platform/processor/n0.p0"
        ]

    def test_job_context_is_hosting_nodes(self, scenario):
        store, view = scenario
        oracle = replay_events(store.event_log)
        t = 13 * S
        # oracle-side: the job's threads occupy three distinct cores, all n0
        cores = set()
        for th in (
            "application/thread/j1.p1.t1",
            "application/thread/j1.p1.t2",
            "application/thread/j1.p2.t1",
        ):
            cores |= oracle.platform_of(th, t)
        assert len(cores) == 3
        assert view.context_of("application/job/j1", t) == ["platform/node/n0"]

    def test_node_context_lists_jobs(self, scenario):
        _, view = scenario
        assert view.context_of("platform/node/n0", 13 * S) == ["application/job/j1"]

    def test_processor_context_lists_processes(self, scenario):
        _, view = scenario
        assert view.context_of("platform/processor/n0.p0", 13 * S) == [
            "application/process/j1.p1",
            "application/process/j1.p2",
        ]


class TestContextGraphs:
    def test_app_subgraph_contains_own_mappings_only(self, scenario):
        _, view = scenario
        sub = view.app_context_subgraph("application/job/j1", 13 * S)
        assert sub.mapping_pairs() == {
            ("application/thread/j1.p1.t1", "platform/core/n0.p0.c0"),
            ("application/thread/j1.p1.t2", "platform/core/n0.p0.c1"),
            ("application/thread/j1.p2.t1", "platform/core/n0.p0.c2"),
        }
        assert sub.platform is not None

    def test_app_without_mappings_has_no_mapping_edges(self):
        events, seq = platform_events()
        events.append(ev(seq, 0, "create_node", id="application/job/lonely",
                         kind="job", parent=None, owner="application/job/lonely",
                         labels={}))
        _, view = build(events)
        assert view.app_context_subgraph("application/job/lonely", S).mappings == ()

    def test_unknown_application(self, scenario):
        _, view = scenario
        with pytest.raises(UnknownApplicationError):
            view.app_context_subgraph("application/job/nope", 0)

    def test_union_of_app_subgraphs_is_global(self):
        events = generate_event_log(99, n_events=120)
        store, view = build(events)
        t = max(e.ts for e in events)
        union = set()
        for app in store.applications():
            union |= view.app_context_subgraph(app, t).mapping_pairs()
        assert union == view.global_context(t).mapping_pairs()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_random_map_unmap_matches_interval_oracle(seed):
    events = generate_event_log(seed, n_events=100)
    store, view = build(events)
    oracle = replay_events(events)
    boundaries = sorted({e.ts for e in events})
    for t in boundaries:
        assert view.global_context(t).mapping_pairs() == oracle.active_mappings(t)
        # per-thread single placement + round trip
        for th, plat in oracle.active_mappings(t):
            got = view.context_of(th, t)
            assert got == [plat]
            assert th in view.context_of(plat, t)
