from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgesim.dataflow import (
    GraphIndex,
    UnknownTaskError,
    WindowConfig,
    WorkloadCursor,
    filter_ready,
    next_window,
    prioritize,
)
from edgesim.datagen import GenConfig, generate_applications

from helpers import app, chain_app, state_with, task


def flat_apps(n_apps, n_tasks):
    return [app(f"a{k:03d}", [task(f"a{k:03d}t{i:02d}", f"a{k:03d}") for i in range(n_tasks)])
            for k in range(n_apps)]


# --- windows ---------------------------------------------------------------------

def test_off_interval_cycle_is_empty():
    cursor = WorkloadCursor(flat_apps(2, 3))
    assert next_window(cursor, WindowConfig(15, 1000, 40), 7, np.random.default_rng(1)) == []
    assert cursor.pending_tasks() == 6


def test_small_backlog_delivered_whole_and_shuffled():
    apps = flat_apps(3, 30)
    cursor = WorkloadCursor(apps)
    batch = next_window(cursor, WindowConfig(15, 1000, 40), 15, np.random.default_rng(1))
    ids = [t.task_id for a in apps for t in a.tasks]
    got = [t.task_id for t in batch]
    assert Counter(got) == Counter(ids)
    assert got != ids
    assert cursor.exhausted


def test_task_cap_binds_before_app_cap():
    cursor = WorkloadCursor(flat_apps(50, 30))
    batch = next_window(cursor, WindowConfig(15, 1000, 40), 0, np.random.default_rng(1))
    assert len(batch) == 1000
    assert len({t.app_id for t in batch}) <= 40
    # 33 whole apps plus 10 tasks of the 34th.
    assert len({t.app_id for t in batch}) == 34
    assert cursor.pending_tasks() == 500


def test_app_cap_binds():
    cursor = WorkloadCursor(flat_apps(50, 3))
    batch = next_window(cursor, WindowConfig(15, 1000, 40), 30, np.random.default_rng(1))
    assert len(batch) == 120
    assert len({t.app_id for t in batch}) == 40


def test_truncated_app_resumes_first_in_topological_order():
    apps = [chain_app("a0", 12), chain_app("a1", 4)]
    cursor = WorkloadCursor(apps)
    first = cursor.take(5, 40)
    assert [t.task_id for t in first] == [f"a0t{i:02d}" for i in range(5)]
    second = cursor.take(10, 40)
    assert [t.task_id for t in second][:7] == [f"a0t{i:02d}" for i in range(5, 12)]
    assert [t.app_id for t in second[7:]] == ["a1"] * 3


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 200), st.integers(1, 10), st.integers(0, 1000))
def test_windows_deliver_once_and_never_ahead_of_predecessors(n_apps, max_tasks, max_apps, seed):
    apps = generate_applications(GenConfig(num_apps=n_apps, tasks_per_app=(1, 12), seed=seed),
                                 np.random.default_rng(seed))
    cursor = WorkloadCursor(apps)
    cfg = WindowConfig(1, max_tasks, max_apps)
    rng = np.random.default_rng(seed)
    window_of = {}
    cycle = 0
    while not cursor.exhausted:
        batch = next_window(cursor, cfg, cycle, rng)
        assert 0 < len(batch) <= max_tasks
        assert len({t.app_id for t in batch}) <= max_apps
        for t in batch:
            assert t.task_id not in window_of
            window_of[t.task_id] = cycle
        cycle += 1
    for a in apps:
        for t in a.tasks:
            assert all(window_of[p] <= window_of[t.task_id] for p in t.predecessors)
    assert len(window_of) == sum(a.num_tasks for a in apps)


def test_window_config_validation():
    with pytest.raises(ValueError):
        WindowConfig(0, 10, 10)


# --- readiness ---------------------------------------------------------------------

def diamond():
    A = task("A")
    B = task("B", preds=["A"])
    C = task("C", preds=["A"])
    D = task("D", preds=["B", "C"])
    return A, B, C, D


def test_roots_all_ready():
    ts = [task("X"), task("Y"), task("Z")]
    assert filter_ready(state_with(remaining=ts), ts) == ts


def test_diamond_with_root_finished():
    A, B, C, D = diamond()
    s = state_with(remaining=[B, C, D], finished=[A])
    assert filter_ready(s, [B, C, D]) == [B, C]


def test_nothing_ready_when_predecessors_open():
    A, B, C, D = diamond()
    s = state_with(remaining=[A, B, C, D])
    assert filter_ready(s, [B, C, D]) == []


def test_unknown_candidate_raises():
    A, B, C, D = diamond()
    s = state_with(remaining=[B], finished=[A])
    with pytest.raises(UnknownTaskError):
        filter_ready(s, [B, C])


# --- priority ----------------------------------------------------------------------

def test_single_task_priority():
    t = task("A")
    assert prioritize([t], GraphIndex([app("a0", [t])])) == [t]


def test_star_before_isolated():
    A = task("A")
    E = task("E")
    star = app("a0", [A, task("B", preds=["A"]), task("C", preds=["A"]), task("D", preds=["A"]), E])
    idx = GraphIndex([star])
    assert idx.score("A") == 3 and idx.score("E") == 0
    assert prioritize([E, A], idx) == [A, E]


def test_equal_degree_ascending_id():
    ts = [task("c"), task("a"), task("b")]
    assert [t.task_id for t in prioritize(ts, {"a": 1, "b": 1, "c": 1})] == ["a", "b", "c"]


def test_descendant_rule():
    a = chain_app("a0", 4)
    idx = GraphIndex([a], transitive=True)
    assert [idx.score(t.task_id) for t in a.tasks] == [3, 2, 1, 0]
    assert GraphIndex([a]).score("a0t00") == 1


def test_unknown_task_in_index():
    with pytest.raises(UnknownTaskError):
        prioritize([task("Q")], GraphIndex([]))
    with pytest.raises(UnknownTaskError):
        prioritize([task("Q")], {})
