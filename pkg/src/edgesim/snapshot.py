"""Immutable, self-contained views of ``SimState`` handed to schedulers."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import islice
from typing import Dict, FrozenSet, Optional, Tuple

from .model import SimState, TaskSpec, Tier, exec_cycles


@dataclass(frozen=True)
class CoreView:
    index: int
    speed: int
    queue_capacity: Optional[int]
    queued_loads: Tuple[int, ...]
    running_remaining: int

    @property
    def queue_len(self) -> int:
        return len(self.queued_loads)

    @property
    def queue_full(self) -> bool:
        return self.queue_capacity is not None and len(self.queued_loads) >= self.queue_capacity

    @property
    def backlog(self) -> int:
        """Cycles of work ahead of a task committed to this core now.

        A running task with ``r`` cycles left completes ``r - 1`` cycles
        after the current one, and the next queued task starts right then.
        """
        ahead = self.running_remaining - 1 if self.running_remaining else 0
        return ahead + sum(exec_cycles(l, self.speed) for l in self.queued_loads)


@dataclass(frozen=True)
class DeviceView:
    device_id: str
    tier: Tier
    battery_wh: Optional[float]
    active_power_w: float
    idle_power_w: float
    safety_capability: int
    cores: Tuple[CoreView, ...]
    # Indices of cores holding a queued or running task.
    busy_cores: FrozenSet[int] = frozenset()
    # Core indices grouped by (speed, queue_capacity), in first-seen order.
    core_groups: Tuple[Tuple[Tuple[int, Optional[int]], Tuple[int, ...]], ...] = ()
    # Cloud devices can grow new cores up to ``core_cap``.
    elastic: bool = False
    core_cap: int = 0

    @property
    def schedulable(self) -> bool:
        return self.battery_wh is None or self.battery_wh > 0

    def accepts(self, task: TaskSpec) -> bool:
        return self.schedulable and task.safety_level <= self.safety_capability

    @property
    def can_grow(self) -> bool:
        return self.elastic and len(self.cores) < self.core_cap


class _Ledgers:
    """Remaining and finished task ids as of snapshot time, built on first use.

    ``delivered`` and the finished log only ever grow, so their prefixes up
    to the lengths recorded here stay exactly what they were when the
    snapshot was taken. Copying 20k ids every cycle for agents that rarely
    look at them was the largest single cost of taking a snapshot.
    """

    __slots__ = ("_delivered", "_n_delivered", "_log", "_n_finished", "_running", "_sets", "_lock")

    def __init__(self, delivered=None, n_delivered=0, log=None, n_finished=0, running=(), sets=None):
        self._delivered = delivered
        self._n_delivered = n_delivered
        self._log = log
        self._n_finished = n_finished
        self._running = running
        self._sets = sets
        self._lock = threading.Lock()

    @classmethod
    def of(cls, state: SimState, running_ids: FrozenSet[str]) -> "_Ledgers":
        n_fin = len(state.finished_tasks)
        consistent = (len(state.finished_log) == n_fin and len(state.delivered)
                      == len(state.remaining_tasks) + len(state.running_tasks) + n_fin)
        if not consistent:
            # Hand-built or damaged state: copy now rather than trust the prefixes.
            return cls(sets=(frozenset(state.remaining_tasks), frozenset(state.finished_tasks)))
        return cls(state.delivered, len(state.delivered), state.finished_log, n_fin, running_ids)

    def sets(self) -> Tuple[FrozenSet[str], FrozenSet[str]]:
        # Agents may share a snapshot across threads.
        with self._lock:
            if self._sets is None:
                finished = frozenset(self._log[:self._n_finished])
                delivered = frozenset(islice(self._delivered, self._n_delivered))
                self._sets = (delivered - finished - self._running, finished)
                self._delivered = self._log = None
            return self._sets

    def __eq__(self, other):
        return isinstance(other, _Ledgers) and self.sets() == other.sets()

    def __repr__(self):
        rem, fin = self.sets()
        return f"_Ledgers(remaining={len(rem)}, finished={len(fin)})"


@dataclass(frozen=True)
class Snapshot:
    cycle: int
    cycle_duration_s: float
    devices: Tuple[DeviceView, ...]
    running: Tuple[Tuple[str, str, int], ...]
    ledgers: _Ledgers = field(default_factory=_Ledgers, repr=False)
    _by_id: Dict[str, DeviceView] = field(default=None, compare=False, hash=False, repr=False)
    # Derived structures shared by the agents reading this snapshot.
    cache: dict = field(default=None, compare=False, hash=False, repr=False)

    @property
    def remaining(self) -> FrozenSet[str]:
        return self.ledgers.sets()[0]

    @property
    def finished(self) -> FrozenSet[str]:
        return self.ledgers.sets()[1]

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {d.device_id: d for d in self.devices})
        object.__setattr__(self, "cache", {})

    def device(self, device_id: str) -> Optional[DeviceView]:
        return self._by_id.get(device_id)

    @property
    def device_ids(self) -> FrozenSet[str]:
        return frozenset(self._by_id)

    def size(self) -> int:
        """Number of leaf records held: cores plus ledger entries."""
        return (
            len(self.devices)
            + sum(len(d.cores) for d in self.devices)
            + len(self.remaining)
            + len(self.running)
            + len(self.finished)
        )


@lru_cache(maxsize=65536)
def _idle_core(index: int, speed: int, capacity: Optional[int]) -> CoreView:
    return CoreView(index, speed, capacity, (), 0)


def _static_views(dev):
    """Idle core views and core groups of ``dev``, rebuilt when its core list grows."""
    cache = dev.view_cache
    if cache.get("n") != len(dev.cores):
        groups: Dict[Tuple[int, Optional[int]], list] = {}
        for i, c in enumerate(dev.cores):
            groups.setdefault((c.speed, c.queue_capacity), []).append(i)
        cache["n"] = len(dev.cores)
        cache["idle"] = tuple(_idle_core(i, c.speed, c.queue_capacity) for i, c in enumerate(dev.cores))
        cache["groups"] = tuple((k, tuple(v)) for k, v in groups.items())
    return cache["idle"], cache["groups"]


def snapshot(state: SimState, cycle_duration_s: float = 0.001, cloud_core_cap: int = 10_000) -> Snapshot:
    delivered = state.delivered
    views = []
    for dev in state.devices.values():
        idle, groups = _static_views(dev)
        active = dev.active_cores
        if active:
            cores = list(idle)
            for i in active:
                c = dev.cores[i]
                cores[i] = CoreView(
                    index=i,
                    speed=c.speed,
                    queue_capacity=c.queue_capacity,
                    queued_loads=tuple([delivered[t].compute_load for t in c.queue]),
                    running_remaining=c.running[1] if c.running else 0,
                )
            cores = tuple(cores)
        else:
            cores = idle
        views.append(DeviceView(
            device_id=dev.device_id,
            tier=dev.tier,
            battery_wh=dev.battery_wh,
            active_power_w=dev.active_power_w,
            idle_power_w=dev.idle_power_w,
            safety_capability=dev.safety_capability,
            cores=cores,
            busy_cores=frozenset(active),
            core_groups=groups,
            elastic=dev.is_cloud,
            core_cap=cloud_core_cap if dev.is_cloud else len(dev.cores),
        ))
    return Snapshot(
        cycle=state.cycle,
        cycle_duration_s=cycle_duration_s,
        devices=tuple(views),
        running=tuple((t, d, c) for t, (d, c) in state.running_tasks.items()),
        ledgers=_Ledgers.of(state, frozenset(state.running_tasks)),
    )
