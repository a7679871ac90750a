"""Domain types shared by every part of the simulator.

Tasks and applications are immutable values. Devices, cores and the
``SimState`` ledger are mutable and owned by the engine; schedulers only
ever see them through :mod:`edgesim.snapshot` views.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

MIN_SIZE_MB = 1.0
MAX_SIZE_MB = 1024.0
MAX_SAFETY = 3


class Tier(str, Enum):
    IOT = "IoT"
    MEC = "MEC"
    CLOUD = "Cloud"


class CycleError(ValueError):
    """Raised when an application's predecessor relation is not acyclic."""


class ValidationError(ValueError):
    """Raised when data violates a structural invariant."""


class InvariantError(RuntimeError):
    """Raised when the simulation state breaks one of its ledger invariants."""


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    app_id: str
    compute_load: int
    input_size_mb: float
    output_size_mb: float
    safety_level: int
    predecessors: FrozenSet[str] = frozenset()

    def exec_cycles(self, speed: int) -> int:
        return exec_cycles(self.compute_load, speed)


@dataclass(frozen=True)
class ApplicationSpec:
    app_id: str
    tasks: Tuple[TaskSpec, ...]
    deadline_cycles: int

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)


def exec_cycles(compute_load: int, speed: int) -> int:
    """Whole cycles a core of ``speed`` needs for ``compute_load`` units."""
    return -(-compute_load // speed)


@dataclass
class CoreState:
    """One processing core with its private FIFO queue.

    ``queue_capacity`` of ``None`` means unbounded (Cloud cores).
    ``running`` holds ``(task_id, remaining_cycles)`` while a task executes.
    """

    speed: int
    queue_capacity: Optional[int] = None
    queue: Deque[str] = field(default_factory=deque)
    running: Optional[Tuple[str, int]] = None

    @property
    def busy(self) -> bool:
        return self.running is not None or bool(self.queue)

    @property
    def queue_full(self) -> bool:
        return self.queue_capacity is not None and len(self.queue) >= self.queue_capacity


@dataclass
class DeviceSpec:
    device_id: str
    tier: Tier
    cores: List[CoreState]
    battery_wh: Optional[float] = None
    active_power_w: float = 0.0
    idle_power_w: float = 0.0
    safety_capability: int = 0
    # Cumulative energy drawn so far; read by the metrics store.
    energy_wh: float = 0.0
    # Indices of cores with a running or queued task.
    active_cores: Set[int] = field(default_factory=set, repr=False, compare=False)
    # Derived data that only changes with the core list (used by snapshots).
    view_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def is_cloud(self) -> bool:
        return self.tier is Tier.CLOUD

    @property
    def schedulable(self) -> bool:
        return self.battery_wh is None or self.battery_wh > 0

    def structure(self) -> tuple:
        """Static description used for equality after a CSV round-trip."""
        return (
            self.device_id,
            self.tier,
            tuple((c.speed, c.queue_capacity) for c in self.cores),
            self.battery_wh,
            self.active_power_w,
            self.idle_power_w,
            self.safety_capability,
        )


@dataclass(frozen=True)
class Assignment:
    task_id: str
    device_id: str
    core_index: int
    agent_id: int = 0


@dataclass
class AppProgress:
    app_id: str
    num_tasks: int
    deadline_cycles: int
    first_delivery_cycle: int
    delivered: int = 0
    finished: int = 0
    deadline_missed: bool = False


@dataclass
class SimState:
    """The single source of truth for a running simulation.

    Every delivered task sits in exactly one of ``remaining_tasks``,
    ``running_tasks`` (queued on or executing on a core) and
    ``finished_tasks``; ``delivered`` keeps the spec of each one.
    """

    cycle: int = 0
    remaining_tasks: Dict[str, TaskSpec] = field(default_factory=dict)
    running_tasks: Dict[str, Tuple[str, int]] = field(default_factory=dict)
    finished_tasks: Set[str] = field(default_factory=set)
    active_apps: Dict[str, AppProgress] = field(default_factory=dict)
    finished_apps: List[Tuple[str, int]] = field(default_factory=list)
    devices: Dict[str, DeviceSpec] = field(default_factory=dict)
    delivered: Dict[str, TaskSpec] = field(default_factory=dict)
    # Per-tier counters so device ids stay unique across churn.
    device_counters: Dict[Tier, int] = field(default_factory=dict)
    # Completion order of ``finished_tasks``; append-only, lets snapshots defer copying.
    finished_log: List[str] = field(default_factory=list, repr=False)

    def add_device(self, device: DeviceSpec) -> None:
        if device.device_id in self.devices:
            raise ValidationError(f"duplicate device id {device.device_id!r}")
        self.devices[device.device_id] = device
        self.device_counters[device.tier] = self.device_counters.get(device.tier, 0) + 1

    def live_objects(self) -> int:
        queued = sum(len(d.cores[i].queue) for d in self.devices.values() for i in d.active_cores)
        return (
            len(self.remaining_tasks)
            + len(self.running_tasks)
            + len(self.finished_tasks)
            + queued
            + len(self.active_apps)
            + len(self.finished_apps)
            + len(self.devices)
        )


def check_invariants(state: SimState, deep: bool = True) -> None:
    """Raise :class:`InvariantError` if the ledgers are not a partition of ``delivered``.

    The shallow pass costs O(|remaining| + |running|); ``deep`` also checks
    that every finished id was delivered and walks the busy cores.
    """
    remaining = state.remaining_tasks.keys()
    running = state.running_tasks.keys()
    finished = state.finished_tasks
    delivered = state.delivered
    total = len(remaining) + len(running) + len(finished)
    if total != len(delivered):
        raise InvariantError(
            f"cycle {state.cycle}: ledgers hold {total} tasks, {len(delivered)} delivered"
        )
    if not remaining.isdisjoint(running):
        raise InvariantError(f"cycle {state.cycle}: remaining and running overlap")
    if not remaining.isdisjoint(finished) or not running.isdisjoint(finished):
        raise InvariantError(f"cycle {state.cycle}: finished overlaps an open ledger")
    if not (remaining <= delivered.keys() and running <= delivered.keys()):
        raise InvariantError(f"cycle {state.cycle}: open ledger holds undelivered tasks")
    if not deep:
        return
    if not finished <= delivered.keys():
        raise InvariantError(f"cycle {state.cycle}: finished holds undelivered tasks")
    # Only cores in ``active_cores`` may hold work, so the placed-task count
    # over those cores must match the running ledger.
    placed = 0
    for dev in state.devices.values():
        for i in dev.active_cores:
            core = dev.cores[i]
            if core.queue_capacity is not None and len(core.queue) > core.queue_capacity:
                raise InvariantError(f"cycle {state.cycle}: queue overflow on {dev.device_id}")
            if core.running is not None:
                if core.running[1] < 1:
                    raise InvariantError(f"cycle {state.cycle}: stale running task on {dev.device_id}")
                placed += 1
            placed += len(core.queue)
    if placed != len(running):
        raise InvariantError(
            f"cycle {state.cycle}: {placed} tasks placed on cores, {len(running)} in the running ledger"
        )


def validate_application(app: ApplicationSpec) -> List[str]:
    """Return a list of invariant violations; empty means the app is well formed."""
    violations = []
    ids = [t.task_id for t in app.tasks]
    known = set(ids)
    if not app.tasks:
        violations.append(f"empty application: {app.app_id} has no tasks")
    if app.deadline_cycles < 1:
        violations.append(f"deadline: {app.app_id} has deadline_cycles={app.deadline_cycles}")
    if len(known) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        violations.append(f"duplicate task ids: {dupes}")
    for t in app.tasks:
        if t.app_id != app.app_id:
            violations.append(f"foreign task: {t.task_id} belongs to {t.app_id}, not {app.app_id}")
        if t.compute_load < 1:
            violations.append(f"compute_load: {t.task_id} has {t.compute_load}")
        for name in ("input_size_mb", "output_size_mb"):
            size = getattr(t, name)
            if not MIN_SIZE_MB <= size <= MAX_SIZE_MB:
                violations.append(f"{name}: {t.task_id} has {size} outside [1, 1024]")
        if not 0 <= t.safety_level <= MAX_SAFETY:
            violations.append(f"safety_level: {t.task_id} has {t.safety_level}")
        if t.task_id in t.predecessors:
            violations.append(f"self reference: {t.task_id}")
        dangling = sorted(p for p in t.predecessors if p not in known)
        if dangling:
            violations.append(f"dangling predecessor: {t.task_id} -> {dangling}")
    cyclic = _cyclic_tasks(app)
    if cyclic:
        violations.append(f"cycle: {sorted(cyclic)}")
    return violations


def _cyclic_tasks(app: ApplicationSpec) -> Set[str]:
    # Kahn's algorithm; whatever is left over sits on or behind a cycle.
    known = {t.task_id for t in app.tasks}
    indeg = {t.task_id: 0 for t in app.tasks}
    succ: Dict[str, List[str]] = {t.task_id: [] for t in app.tasks}
    for t in app.tasks:
        for p in t.predecessors:
            if p in known and p != t.task_id:
                indeg[t.task_id] += 1
                succ[p].append(t.task_id)
    stack = [i for i, d in indeg.items() if d == 0]
    seen = 0
    while stack:
        node = stack.pop()
        seen += 1
        for s in succ[node]:
            indeg[s] -= 1
            if indeg[s] == 0:
                stack.append(s)
    return {i for i, d in indeg.items() if d > 0}


def topological_order(app: ApplicationSpec) -> List[str]:
    """Topological order of task ids, ties broken by ascending id."""
    indeg: Dict[str, int] = {}
    succ: Dict[str, List[str]] = {}
    for t in app.tasks:
        indeg[t.task_id] = len(t.predecessors)
        succ.setdefault(t.task_id, [])
    for t in app.tasks:
        for p in t.predecessors:
            if p not in succ:
                raise CycleError(f"{t.task_id} depends on unknown task {p}")
            succ[p].append(t.task_id)
    heap = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        node = heapq.heappop(heap)
        order.append(node)
        for s in succ[node]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(heap, s)
    if len(order) != len(indeg):
        raise CycleError(f"application {app.app_id} has a dependency cycle: "
                         f"{sorted(i for i, d in indeg.items() if d > 0)}")
    return order


def critical_path_cycles(app: ApplicationSpec, speed: int) -> int:
    """Longest root-to-leaf sum of execution cycles at a uniform ``speed``."""
    by_id = {t.task_id: t for t in app.tasks}
    longest: Dict[str, int] = {}
    for tid in topological_order(app):
        t = by_id[tid]
        base = max((longest[p] for p in t.predecessors), default=0)
        longest[tid] = base + exec_cycles(t.compute_load, speed)
    return max(longest.values(), default=0)


def successor_map(tasks: Iterable[TaskSpec]) -> Dict[str, Tuple[str, ...]]:
    succ: Dict[str, List[str]] = {}
    for t in tasks:
        succ.setdefault(t.task_id, [])
        for p in t.predecessors:
            succ.setdefault(p, []).append(t.task_id)
    return {k: tuple(sorted(v)) for k, v in succ.items()}


def energy_per_cycle(busy: int, idle: int, active_w: float, idle_w: float, dt: float) -> float:
    """Watt-hours drawn in one cycle of ``dt`` seconds."""
    return (busy * active_w + idle * idle_w) * dt / 3600.0


__all__ = [
    "Tier", "TaskSpec", "ApplicationSpec", "CoreState", "DeviceSpec", "Assignment",
    "AppProgress", "SimState", "CycleError", "ValidationError", "InvariantError",
    "validate_application", "topological_order", "check_invariants", "exec_cycles",
    "critical_path_cycles", "successor_map", "energy_per_cycle",
]
