import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgesim.datagen import GenConfig, generate_applications, generate_dag
from edgesim.model import (
    CycleError,
    InvariantError,
    SimState,
    Tier,
    check_invariants,
    critical_path_cycles,
    energy_per_cycle,
    exec_cycles,
    successor_map,
    topological_order,
    validate_application,
)

from helpers import app, chain_app, device, state_with, task


def dfs_has_cycle(tasks):
    """Independent oracle: three-colour depth-first search over predecessor edges."""
    preds = {t.task_id: sorted(t.predecessors) for t in tasks}
    colour = dict.fromkeys(preds, 0)

    def visit(n):
        colour[n] = 1
        for p in preds.get(n, ()):
            if p not in colour:
                continue
            if colour[p] == 1 or (colour[p] == 0 and visit(p)):
                return True
        colour[n] = 2
        return False

    return any(colour[n] == 0 and visit(n) for n in list(preds))


def random_app(rng, n, density, app_id="a0"):
    edges = generate_dag(n, density, rng)
    ids = [f"{app_id}t{i:02d}" for i in range(n)]
    preds = {i: [] for i in range(n)}
    for u, v in edges:
        preds[v].append(ids[u])
    return app(app_id, [task(ids[i], app_id, int(rng.integers(1, 20)), preds[i]) for i in range(n)])


# --- validate_application ---------------------------------------------------

def test_chain_is_valid():
    a = app("a0", [task("A", load=1), task("B", preds=["A"]), task("C", preds=["B"])])
    assert validate_application(a) == []


def test_two_cycle_names_both_tasks():
    a = app("a0", [task("A", preds=["B"]), task("B", preds=["A"])])
    problems = validate_application(a)
    assert len(problems) == 1
    assert problems[0].startswith("cycle")
    assert "A" in problems[0] and "B" in problems[0]


def test_generated_apps_pass_independent_cycle_oracle():
    apps = generate_applications(GenConfig(num_apps=1000, seed=1), np.random.default_rng(1))
    assert len(apps) == 1000
    for a in apps:
        assert validate_application(a) == []
        assert not dfs_has_cycle(a.tasks)


@pytest.mark.parametrize("bad, fragment", [
    (task("A", load=0), "compute_load"),
    (task("A", size=0.5), "input_size_mb"),
    (task("A", size=2048.0), "output_size_mb"),
    (task("A", safety=4), "safety_level"),
    (task("A", preds=["A"]), "self reference"),
    (task("A", preds=["Z"]), "dangling predecessor"),
    (task("A", app="other"), "foreign task"),
])
def test_attribute_violations(bad, fragment):
    assert any(p.startswith(fragment) for p in validate_application(app("a0", [bad])))


def test_duplicate_ids_and_empty_app():
    assert any("duplicate" in p for p in validate_application(app("a0", [task("A"), task("A")])))
    assert any("empty" in p for p in validate_application(app("a0", [])))
    assert any("deadline" in p for p in validate_application(app("a0", [task("A")], deadline=0)))


# --- topological_order ------------------------------------------------------

def test_single_task_order():
    assert topological_order(app("a0", [task("A")])) == ["A"]


def test_diamond_breaks_ties_by_id():
    a = app("a0", [task("D", preds=["B", "C"]), task("C", preds=["A"]),
                   task("B", preds=["A"]), task("A")])
    assert topological_order(a) == ["A", "B", "C", "D"]


def test_chain_order_is_unique():
    a = chain_app("a7", 60)
    shuffled = app("a7", list(np.random.default_rng(3).permutation(np.array(a.tasks, dtype=object))))
    assert topological_order(shuffled) == [t.task_id for t in a.tasks]


def test_cycle_raises():
    with pytest.raises(CycleError):
        topological_order(app("a0", [task("A", preds=["B"]), task("B", preds=["A"])]))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_topological_order_is_smallest_valid_permutation(n, density, seed):
    a = random_app(np.random.default_rng(seed), n, density)
    preds = {t.task_id: t.predecessors for t in a.tasks}

    def valid(order):
        pos = {tid: i for i, tid in enumerate(order)}
        return all(pos[p] < pos[t] for t in order for p in preds[t])

    best = min(p for p in itertools.permutations(sorted(preds)) if valid(p))
    assert topological_order(a) == list(best)


# --- critical path, successors, energy ---------------------------------------

def _paths(tasks):
    succ = successor_map(tasks)
    roots = [t.task_id for t in tasks if not t.predecessors]

    def walk(node):
        if not succ[node]:
            yield [node]
        for s in succ[node]:
            for rest in walk(s):
                yield [node] + rest

    for r in roots:
        yield from walk(r)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.floats(0, 1), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_critical_path_matches_path_enumeration(n, density, speed, seed):
    a = random_app(np.random.default_rng(seed), n, density)
    load = {t.task_id: t.compute_load for t in a.tasks}
    expected = max(sum(-(-load[x] // speed) for x in p) for p in _paths(a.tasks))
    assert critical_path_cycles(a, speed) == expected


@pytest.mark.parametrize("load, speed, cycles", [(4, 2, 2), (5, 2, 3), (1, 8, 1), (100, 1, 100), (9, 4, 3)])
def test_exec_cycles_is_ceiling(load, speed, cycles):
    assert exec_cycles(load, speed) == cycles


def test_energy_per_cycle_arithmetic():
    # 4 busy cores at 2 W for 1 ms.
    assert energy_per_cycle(4, 0, 2.0, 0.2, 0.001) == pytest.approx(8 * 0.001 / 3600, rel=1e-12)
    assert energy_per_cycle(1, 3, 2.0, 0.2, 0.001) == pytest.approx(2.6 * 0.001 / 3600, rel=1e-12)


# --- ledger invariants -----------------------------------------------------------

def test_invariants_hold_on_clean_state():
    s = state_with([device()], remaining=[task("A")], finished=[task("B")])
    check_invariants(s)


def test_invariants_detect_lost_task():
    s = state_with([device()], remaining=[task("A")])
    del s.remaining_tasks["A"]
    with pytest.raises(InvariantError):
        check_invariants(s)


def test_invariants_detect_overlap():
    s = state_with([device()], remaining=[task("A")], finished=[task("B")])
    # Same size totals, but A is in two ledgers and B in none.
    s.finished_tasks = {"A"}
    with pytest.raises(InvariantError):
        check_invariants(s, deep=False)


def test_invariants_detect_unplaced_running_task():
    s = state_with([device()], remaining=[task("A")])
    del s.remaining_tasks["A"]
    s.running_tasks["A"] = ("iot0000", 0)
    with pytest.raises(InvariantError, match="placed"):
        check_invariants(s)


def test_invariants_detect_queue_overflow():
    d = device(capacity=1)
    s = state_with([d], remaining=[task("A"), task("B")])
    for tid in ("A", "B"):
        del s.remaining_tasks[tid]
        s.running_tasks[tid] = ("iot0000", 0)
        d.cores[0].queue.append(tid)
    d.active_cores.add(0)
    with pytest.raises(InvariantError, match="overflow"):
        check_invariants(s)


def test_live_objects_counts_ledgers_queues_apps_devices():
    d = device(cores=2)
    s = state_with([d], remaining=[task("A")], finished=[task("B")])
    s.delivered["C"] = task("C")
    s.running_tasks["C"] = ("iot0000", 1)
    d.cores[1].queue.append("C")
    d.active_cores.add(1)
    # 1 remaining + 1 running + 1 finished + 1 queued + 0 apps + 1 device
    assert s.live_objects() == 5


def test_duplicate_device_rejected():
    s = SimState()
    s.add_device(device())
    with pytest.raises(ValueError):
        s.add_device(device())
    assert s.device_counters[Tier.IOT] == 1
