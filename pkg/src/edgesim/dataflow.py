"""Task arrival and preprocessing: the window manager and the ready-task filter."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .model import ApplicationSpec, SimState, TaskSpec, successor_map, topological_order


class UnknownTaskError(KeyError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    interval_cycles: int = 15
    max_tasks: int = 1000
    max_apps: int = 40

    def __post_init__(self):
        if min(self.interval_cycles, self.max_tasks, self.max_apps) < 1:
            raise ValueError("window settings must all be positive")


class WorkloadCursor:
    """Backlog of applications not yet fully delivered.

    Each application's tasks are queued in topological order, so a
    truncated window never delivers a task ahead of its predecessors.
    """

    def __init__(self, apps: Iterable[ApplicationSpec] = ()):
        self._backlog: Deque[Tuple[str, Deque[TaskSpec]]] = deque()
        for app in apps:
            self.push(app)

    def push(self, app: ApplicationSpec) -> None:
        by_id = {t.task_id: t for t in app.tasks}
        ordered = deque(by_id[i] for i in topological_order(app))
        if ordered:
            self._backlog.append((app.app_id, ordered))

    @property
    def exhausted(self) -> bool:
        return not self._backlog

    def pending_apps(self) -> int:
        return len(self._backlog)

    def pending_tasks(self) -> int:
        return sum(len(q) for _, q in self._backlog)

    def take(self, max_tasks: int, max_apps: int) -> List[TaskSpec]:
        out: List[TaskSpec] = []
        apps = 0
        while self._backlog and apps < max_apps and len(out) < max_tasks:
            _, queue = self._backlog[0]
            room = max_tasks - len(out)
            while queue and room:
                out.append(queue.popleft())
                room -= 1
            apps += 1
            if not queue:
                self._backlog.popleft()
        return out


def next_window(cursor: WorkloadCursor, cfg: WindowConfig, cycle: int,
                rng: np.random.Generator) -> List[TaskSpec]:
    """Tasks arriving at ``cycle``: empty off-interval, else a shuffled batch."""
    if cycle % cfg.interval_cycles != 0:
        return []
    batch = cursor.take(cfg.max_tasks, cfg.max_apps)
    if len(batch) > 1:
        order = rng.permutation(len(batch))
        batch = [batch[i] for i in order]
    return batch


def filter_ready(state: SimState, candidates: Sequence[TaskSpec]) -> List[TaskSpec]:
    """Candidates whose predecessors have all finished, in input order."""
    remaining = state.remaining_tasks
    finished = state.finished_tasks
    ready = []
    for t in candidates:
        if t.task_id not in remaining:
            raise UnknownTaskError(t.task_id)
        if t.predecessors <= finished:
            ready.append(t)
    return ready


class GraphIndex:
    """Successor counts for every known task, per application DAG.

    ``transitive=True`` counts all descendants instead of direct successors.
    """

    def __init__(self, apps: Iterable[ApplicationSpec] = (), transitive: bool = False):
        self.transitive = transitive
        self._score: Dict[str, int] = {}
        for app in apps:
            self.add(app)

    def add(self, app: ApplicationSpec) -> None:
        succ = successor_map(app.tasks)
        if not self.transitive:
            for tid, s in succ.items():
                self._score[tid] = len(s)
            return
        desc: Dict[str, frozenset] = {}
        for tid in reversed(topological_order(app)):
            acc = set()
            for s in succ[tid]:
                acc.add(s)
                acc |= desc[s]
            desc[tid] = frozenset(acc)
            self._score[tid] = len(acc)

    def score(self, task_id: str) -> int:
        try:
            return self._score[task_id]
        except KeyError:
            raise UnknownTaskError(task_id) from None

    def __contains__(self, task_id) -> bool:
        return task_id in self._score


def prioritize(ready: Sequence[TaskSpec], index: GraphIndex | Mapping[str, int]) -> List[TaskSpec]:
    """Most successors first; ties go to the smaller task id."""
    if isinstance(index, GraphIndex):
        score = index.score
    else:
        def score(tid):
            try:
                return index[tid]
            except KeyError:
                raise UnknownTaskError(tid) from None
    keyed = [(-score(t.task_id), t.task_id, t) for t in ready]
    keyed.sort(key=lambda k: (k[0], k[1]))
    return [k[2] for k in keyed]
