"""Scheduler contract, the multi-agent runner, and baseline policies.

A scheduler receives an immutable :class:`~edgesim.snapshot.Snapshot` and
the ready tasks of the applications it owns this cycle, and returns
:class:`~edgesim.model.Assignment` proposals. The engine commits them and
reports back through :meth:`Scheduler.feedback`.
"""

from __future__ import annotations

import heapq
import logging
from concurrent.futures import Executor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import Assignment, TaskSpec, exec_cycles
from .snapshot import DeviceView, Snapshot

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Outcome:
    assignment: Assignment
    accepted: bool
    reason: Optional[str] = None


class Scheduler:
    """Base class for scheduling agents.

    Subclasses override :meth:`propose`; learning agents also override
    :meth:`feedback`. ``propose`` must not mutate the snapshot and may only
    reference the tasks it was handed.
    """

    name = "base"

    def __init__(self, agent_id: int = 0, rng: Optional[np.random.Generator] = None):
        self.agent_id = agent_id
        self.rng = rng if rng is not None else np.random.default_rng(agent_id)

    def propose(self, snap: Snapshot, tasks: Sequence[TaskSpec]) -> List[Assignment]:
        raise NotImplementedError

    def feedback(self, cycle: int, outcomes: Sequence[Outcome], reward: float) -> None:
        pass


SCHEDULERS: Dict[str, Callable[..., Scheduler]] = {}


def register(name: str):
    def deco(cls):
        SCHEDULERS[name] = cls
        cls.name = name
        return cls
    return deco


class UnknownSchedulerError(KeyError):
    def __str__(self):
        return f"unknown scheduler {self.args[0]!r}; valid names: {', '.join(sorted(SCHEDULERS))}"


def make_scheduler(name: str, agent_id: int = 0, rng: Optional[np.random.Generator] = None) -> Scheduler:
    try:
        factory = SCHEDULERS[name]
    except KeyError:
        raise UnknownSchedulerError(name) from None
    return factory(agent_id=agent_id, rng=rng)


class AgentPool:
    """Scheduler instances with agent ids ``0..N-1``."""

    def __init__(self, agents: Sequence[Scheduler]):
        if not agents:
            raise ValueError("an agent pool needs at least one agent")
        self.agents = list(agents)
        for i, a in enumerate(self.agents):
            a.agent_id = i

    def __len__(self):
        return len(self.agents)

    def __getitem__(self, i):
        return self.agents[i]

    @classmethod
    def build(cls, name: str, num_agents: int = 24, seed: int = 0) -> "AgentPool":
        seqs = np.random.SeedSequence(seed).spawn(num_agents)
        return cls([make_scheduler(name, i, np.random.default_rng(s)) for i, s in enumerate(seqs)])


def partition_by_app(ready: Sequence[TaskSpec], num_agents: int) -> Dict[int, List[TaskSpec]]:
    """Deal whole applications to agents round-robin in ascending app id order."""
    if num_agents < 1:
        raise ValueError("num_agents must be at least 1")
    by_app: Dict[str, List[TaskSpec]] = {}
    for t in ready:
        by_app.setdefault(t.app_id, []).append(t)
    out: Dict[int, List[TaskSpec]] = {}
    for k, app_id in enumerate(sorted(by_app)):
        out.setdefault(k % num_agents, []).extend(by_app[app_id])
    return out


def _safe_propose(agent: Scheduler, snap: Snapshot, tasks: Sequence[TaskSpec]) -> List[Assignment]:
    try:
        return list(agent.propose(snap, tasks))
    except Exception:
        log.warning("agent %d raised during propose; dropping its proposals", agent.agent_id,
                    exc_info=True)
        return []


def run_agents(pool: AgentPool, snap: Snapshot, partition: Dict[int, List[TaskSpec]],
               executor: Optional[Executor] = None) -> List[Assignment]:
    """Collect proposals from every agent with work, merged by agent id.

    With an ``executor`` the agents run concurrently; the merge order is the
    same either way.
    """
    ids = sorted(a for a, tasks in partition.items() if tasks)
    if executor is None:
        results = {a: _safe_propose(pool[a], snap, partition[a]) for a in ids}
    else:
        futures = {a: executor.submit(_safe_propose, pool[a], snap, partition[a]) for a in ids}
        results = {a: f.result() for a, f in futures.items()}
    merged = []
    for a in ids:
        for prop in results[a]:
            merged.append(prop if prop.agent_id == a else replace(prop, agent_id=a))
    return merged


@dataclass(frozen=True)
class RewardWeights:
    scheduled: float = 1.0
    rejected: float = 1.0
    energy: float = 1.0
    deadline: float = 1.0

    def __post_init__(self):
        if min(self.scheduled, self.rejected, self.energy, self.deadline) < 0:
            raise ValueError("reward weights must be non-negative")


@dataclass(frozen=True)
class CycleOutcomes:
    accepted: int = 0
    rejected: int = 0
    energy_wh: float = 0.0
    deadline_misses: int = 0


def reward_signal(outcomes: CycleOutcomes, weights: RewardWeights = RewardWeights()) -> float:
    return (
        weights.scheduled * outcomes.accepted
        - weights.rejected * outcomes.rejected
        - weights.energy * outcomes.energy_wh
        - weights.deadline * outcomes.deadline_misses
    )


# --- baselines ---------------------------------------------------------------

class _Group:
    """Cores of one device sharing a speed and queue capacity.

    Busy cores with room sit in a heap of ``(backlog, core_index, queue_len)``;
    idle cores are a sorted index tuple consumed from ``pos``. Elastic groups
    also hand out fresh core indices past the end of the device.
    """

    __slots__ = ("device", "speed", "capacity", "heap", "idle", "pos", "fresh", "fresh_limit")

    def __init__(self, device: DeviceView, speed: int, capacity, heap, idle=(), pos=0,
                 fresh=None, fresh_limit=0):
        self.device = device
        self.speed = speed
        self.capacity = capacity
        self.heap = heap
        self.idle = idle
        self.pos = pos
        self.fresh = fresh
        self.fresh_limit = fresh_limit

    def clone(self) -> "_Group":
        return _Group(self.device, self.speed, self.capacity, list(self.heap), self.idle, self.pos,
                      self.fresh, self.fresh_limit)

    def best(self) -> Optional[Tuple[int, int]]:
        """(backlog, core_index) of the earliest-free open core, lowest index on ties."""
        best = self.heap[0][:2] if self.heap else None
        if self.pos < len(self.idle):
            cand = (0, self.idle[self.pos])
            if best is None or cand < best:
                best = cand
        elif self.fresh is not None and self.fresh < self.fresh_limit:
            # Fresh indices exceed every existing one, so they only win on backlog.
            if best is None or best[0] > 0:
                best = (0, self.fresh)
        return best

    def take(self, core_index: int, cycles: int) -> None:
        if self.heap and self.heap[0][1] == core_index:
            backlog, _, qlen = heapq.heappop(self.heap)
        elif self.pos < len(self.idle) and self.idle[self.pos] == core_index:
            backlog, qlen = 0, 0
            self.pos += 1
        else:
            backlog, qlen = 0, 0
            self.fresh += 1
        qlen += 1
        if self.capacity is None or qlen < self.capacity:
            heapq.heappush(self.heap, (backlog + cycles, core_index, qlen))


def _board_template(snap: Snapshot) -> List[_Group]:
    groups = []
    for dev in snap.devices:
        if not dev.schedulable or not dev.cores:
            continue
        busy = dev.busy_cores
        for k, ((speed, cap), indices) in enumerate(dev.core_groups):
            if busy:
                idle = tuple([i for i in indices if i not in busy])
                heap = []
                for i in indices:
                    if i in busy:
                        c = dev.cores[i]
                        if not c.queue_full:
                            heap.append((c.backlog, i, c.queue_len))
                heapq.heapify(heap)
            else:
                idle, heap = indices, []
            if k == 0 and dev.can_grow:
                groups.append(_Group(dev, speed, cap, heap, idle, 0, len(dev.cores), dev.core_cap))
            elif heap or idle:
                groups.append(_Group(dev, speed, cap, heap, idle))
    return groups


class _Board:
    """Agent-private view of the open-slot board for one snapshot.

    Groups are shared with the snapshot's template and copied on first write.
    """

    def __init__(self, template: List[_Group], by_safety: Dict[int, Tuple[int, ...]]):
        self.groups = list(template)
        self.by_safety = by_safety
        self._owned = set()

    def candidates(self, task: TaskSpec) -> Tuple[int, ...]:
        return self.by_safety.get(task.safety_level, ())

    def take(self, i: int, core_index: int, cycles: int) -> None:
        if i not in self._owned:
            self.groups[i] = self.groups[i].clone()
            self._owned.add(i)
        self.groups[i].take(core_index, cycles)


def _board(snap: Snapshot) -> _Board:
    """Fresh, agent-private board for ``snap``; the template is built once per snapshot."""
    cached = snap.cache.get("board")
    if cached is None:
        template = _board_template(snap)
        levels = {t for g in template for t in range(g.device.safety_capability + 1)}
        by_safety = {lvl: tuple(i for i, g in enumerate(template)
                                if g.device.safety_capability >= lvl) for lvl in levels}
        cached = snap.cache["board"] = (template, by_safety)
    return _Board(*cached)


class _GroupScheduler(Scheduler):
    """Scores every feasible device group and takes the best open core."""

    def score(self, group: _Group, task: TaskSpec, finish: int, dt: float) -> tuple:
        raise NotImplementedError

    def propose(self, snap, tasks):
        board = _board(snap)
        groups = board.groups
        dt = snap.cycle_duration_s
        out = []
        for task in tasks:
            best_key, best = None, None
            for i in board.candidates(task):
                g = groups[i]
                slot = g.best()
                if slot is None:
                    continue
                cycles = exec_cycles(task.compute_load, g.speed)
                key = self.score(g, task, slot[0] + cycles, dt) + (g.device.device_id, slot[1])
                if best_key is None or key < best_key:
                    best_key, best = key, (i, slot[1], cycles)
            if best is None:
                continue
            i, core, cycles = best
            board.take(i, core, cycles)
            out.append(Assignment(task.task_id, groups[i].device.device_id, core, self.agent_id))
        return out


@register("greedy_eft")
class GreedyEFTScheduler(_GroupScheduler):
    """Earliest estimated finish: queue backlog plus own execution cycles."""

    def score(self, group, task, finish, dt):
        return (finish,)


@register("min_energy")
class MinEnergyScheduler(_GroupScheduler):
    """Cheapest active energy for the task; earliest finish breaks ties."""

    def score(self, group, task, finish, dt):
        cycles = exec_cycles(task.compute_load, group.speed)
        return (group.device.active_power_w * cycles * dt, finish)


@register("random")
class RandomScheduler(Scheduler):
    """Uniform choice among the (device, core) slots that would be accepted."""

    def propose(self, snap, tasks):
        slots = []
        fresh = {}
        for dev in snap.devices:
            if not dev.schedulable:
                continue
            for c in dev.cores:
                if not c.queue_full:
                    slots.append([dev, c.index, c.queue_len, c.queue_capacity])
            if dev.can_grow:
                fresh[dev.device_id] = len(dev.cores)
        out = []
        for task in tasks:
            options = [s for s in slots if s[0].accepts(task)
                       and (s[3] is None or s[2] < s[3])]
            options += [(dev, None) for dev in snap.devices
                        if dev.device_id in fresh and fresh[dev.device_id] < dev.core_cap
                        and dev.accepts(task)]
            if not options:
                continue
            pick = options[int(self.rng.integers(len(options)))]
            dev = pick[0]
            if len(pick) == 2:
                core = fresh[dev.device_id]
                fresh[dev.device_id] += 1
                src = dev.cores[0]
                slots.append([dev, core, 1, src.queue_capacity])
            else:
                pick[2] += 1
                core = pick[1]
            out.append(Assignment(task.task_id, dev.device_id, core, self.agent_id))
        return out
