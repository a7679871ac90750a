"""The simulation environment and its cycle loop.

Each call to :meth:`Environment.step` runs one cycle:

1. deliver the window due this cycle into the remaining ledger,
2. filter ready tasks and sort them by priority,
3. deal applications to agents and collect their proposals,
4. commit proposals one by one, in agent id order,
5. advance execution, meter energy and finalize completed applications,
6. apply device churn,
7. monitor and record metrics.
"""

from __future__ import annotations

import copy
import logging
import time
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .churn import ChurnConfig, ChurnEvent, ChurnHistory, maybe_churn, release_device_tasks
from .dataflow import GraphIndex, WindowConfig, WorkloadCursor, filter_ready, next_window, prioritize
from .datagen import GenConfig, generate
from .metrics import MetricsStore, record_cycle
from .model import (
    AppProgress,
    ApplicationSpec,
    Assignment,
    CoreState,
    DeviceSpec,
    InvariantError,
    SimState,
    TaskSpec,
    check_invariants,
    energy_per_cycle,
    exec_cycles,
)
from .scheduling import (
    AgentPool,
    CycleOutcomes,
    Outcome,
    RewardWeights,
    partition_by_app,
    reward_signal,
    run_agents,
)
from .snapshot import Snapshot
from .snapshot import snapshot as take_snapshot

log = logging.getLogger(__name__)

REJECT_REASONS = ("queue_full", "battery_depleted", "safety_violation", "unknown_device", "unready")


@dataclass
class EngineConfig:
    total_cycles: int = 10_000
    cycle_duration_s: float = 0.001
    window: WindowConfig = field(default_factory=WindowConfig)
    churn: ChurnConfig = field(default_factory=ChurnConfig)
    monitor_interval_cycles: int = 100
    seed: int = 1
    cloud_core_cap: int = 10_000
    # What happens to a task executing on a device whose battery dies.
    lost_task_policy: str = "requeue"
    # "out_degree" or "descendants".
    priority_rule: str = "out_degree"
    reward_weights: RewardWeights = field(default_factory=RewardWeights)
    # Ledger partition check after every cycle, with the O(|finished|) deep
    # pass on monitor cycles.
    check_invariants: bool = False

    def __post_init__(self):
        if self.total_cycles < 1:
            raise ValueError("total_cycles must be at least 1")
        if self.cycle_duration_s <= 0:
            raise ValueError("cycle_duration_s must be positive")
        if self.monitor_interval_cycles < 1:
            raise ValueError("monitor_interval_cycles must be at least 1")
        if self.cloud_core_cap < 1:
            raise ValueError("cloud_core_cap must be at least 1")
        if self.lost_task_policy not in ("requeue", "drop"):
            raise ValueError("lost_task_policy must be 'requeue' or 'drop'")
        if self.priority_rule not in ("out_degree", "descendants"):
            raise ValueError("priority_rule must be 'out_degree' or 'descendants'")


@dataclass
class CycleReport:
    cycle: int
    tasks_delivered: int = 0
    tasks_scheduled: int = 0
    tasks_rejected: int = 0
    tasks_completed: int = 0
    apps_completed: int = 0
    churn_event: Optional[ChurnEvent] = None
    wall_time_s: float = 0.0
    energy_wh: float = 0.0
    deadline_misses: int = 0


@dataclass(frozen=True)
class CommitResult:
    accepted: bool
    reason: Optional[str] = None
    core_index: Optional[int] = None


class EventLog:
    """Append-only ``cycle,event_kind,subject_id,detail`` records.

    Records are kept in memory when ``keep`` is true and streamed to
    ``path`` when one is given.
    """

    HEADER = "cycle,event_kind,subject_id,detail"

    def __init__(self, path=None, keep: bool = True):
        self.records: List[Tuple[int, str, str, str]] = []
        self.keep = keep
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", encoding="utf-8", newline="")
            self._fh.write(self.HEADER + "\n")

    def emit(self, cycle: int, kind: str, subject: str, detail: str = "") -> None:
        if self.keep:
            self.records.append((cycle, kind, subject, detail))
        if self._fh is not None:
            self._fh.write(f"{cycle},{kind},{subject},{detail}\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    @staticmethod
    def read(path) -> List[Tuple[int, str, str, str]]:
        out = []
        with open(path, encoding="utf-8") as fh:
            if fh.readline().strip() != EventLog.HEADER:
                raise ValueError(f"{path}: not an event log")
            for line in fh:
                cycle, kind, subject, detail = line.rstrip("\n").split(",", 3)
                out.append((int(cycle), kind, subject, detail))
        return out


# --- state transitions ---------------------------------------------------------

def deliver(state: SimState, tasks: Sequence[TaskSpec], apps: Dict[str, ApplicationSpec]) -> None:
    for t in tasks:
        if t.task_id in state.delivered:
            raise InvariantError(f"task {t.task_id} delivered twice")
        state.delivered[t.task_id] = t
        state.remaining_tasks[t.task_id] = t
        prog = state.active_apps.get(t.app_id)
        if prog is None:
            app = apps[t.app_id]
            prog = AppProgress(t.app_id, app.num_tasks, app.deadline_cycles, state.cycle)
            state.active_apps[t.app_id] = prog
        prog.delivered += 1


def commit_assignment(state: SimState, a: Assignment, cloud_core_cap: int = 10_000) -> CommitResult:
    """Enqueue a proposal if the target accepts it; otherwise leave the task in place."""
    task = state.remaining_tasks.get(a.task_id)
    if task is None or not task.predecessors <= state.finished_tasks:
        return CommitResult(False, "unready")
    dev = state.devices.get(a.device_id)
    if dev is None or a.core_index < 0:
        return CommitResult(False, "unknown_device")
    if not dev.schedulable:
        return CommitResult(False, "battery_depleted")
    if task.safety_level > dev.safety_capability:
        return CommitResult(False, "safety_violation")
    idx = a.core_index
    if idx >= len(dev.cores):
        if not (dev.is_cloud and dev.cores and len(dev.cores) < cloud_core_cap):
            return CommitResult(False, "unknown_device")
        # Elastic pool: any index past the end asks for a fresh core.
        proto = dev.cores[0]
        dev.cores.append(CoreState(proto.speed, proto.queue_capacity))
        idx = len(dev.cores) - 1
    core = dev.cores[idx]
    if core.queue_full:
        return CommitResult(False, "queue_full")
    core.queue.append(task.task_id)
    dev.active_cores.add(idx)
    del state.remaining_tasks[task.task_id]
    state.running_tasks[task.task_id] = (dev.device_id, idx)
    return CommitResult(True, None, idx)


def _complete(state: SimState, tid: str) -> None:
    del state.running_tasks[tid]
    state.finished_tasks.add(tid)
    state.finished_log.append(tid)
    state.active_apps[state.delivered[tid].app_id].finished += 1


def _advance(state: SimState, dt: float, events: Optional[EventLog] = None,
             lost_task_policy: str = "requeue",
             on_finish: Optional[Callable[[str], None]] = None,
             on_requeue: Optional[Callable[[str], None]] = None) -> Tuple[List[str], float]:
    completed: List[str] = []
    total_energy = 0.0
    cycle = state.cycle
    delivered = state.delivered
    idle_energy: Dict[Tuple[int, float], float] = {}
    for dev in list(state.devices.values()):
        busy = 0
        if not dev.active_cores:
            # Fully idle devices draw the same energy every cycle.
            key = (len(dev.cores), dev.idle_power_w)
            energy = idle_energy.get(key)
            if energy is None:
                energy = idle_energy[key] = energy_per_cycle(0, key[0], dev.active_power_w, key[1], dt)
        else:
            drained = []
            for i in sorted(dev.active_cores):
                core = dev.cores[i]
                if core.running is not None:
                    busy += 1
                    tid, left = core.running
                    if left <= 1:
                        core.running = None
                        _complete(state, tid)
                        completed.append(tid)
                        if on_finish is not None:
                            on_finish(tid)
                        if events is not None:
                            events.emit(cycle, "complete", tid, f"{dev.device_id}:{i}")
                    else:
                        core.running = (tid, left - 1)
                if core.running is None:
                    if core.queue:
                        tid = core.queue.popleft()
                        core.running = (tid, exec_cycles(delivered[tid].compute_load, core.speed))
                        if events is not None:
                            events.emit(cycle, "start", tid, f"{dev.device_id}:{i}")
                    else:
                        drained.append(i)
            dev.active_cores.difference_update(drained)
            energy = energy_per_cycle(busy, len(dev.cores) - busy, dev.active_power_w,
                                      dev.idle_power_w, dt)
        if dev.battery_wh is None:
            dev.energy_wh += energy
            total_energy += energy
            continue
        if dev.battery_wh <= 0:
            continue
        if energy >= dev.battery_wh:
            energy = dev.battery_wh
            dev.battery_wh = 0.0
        else:
            dev.battery_wh -= energy
        dev.energy_wh += energy
        total_energy += energy
        if dev.battery_wh <= 0:
            _battery_died(state, dev, events, lost_task_policy, on_finish, on_requeue)
    return completed, total_energy


def _battery_died(state: SimState, dev: DeviceSpec, events: Optional[EventLog], policy: str,
                  on_finish=None, on_requeue=None) -> None:
    cycle = state.cycle
    if events is not None:
        events.emit(cycle, "battery_depleted", dev.device_id, "")
    if policy == "drop":
        for i in sorted(dev.active_cores):
            core = dev.cores[i]
            if core.running is not None:
                tid = core.running[0]
                core.running = None
                _complete(state, tid)
                if on_finish is not None:
                    on_finish(tid)
                if events is not None:
                    events.emit(cycle, "drop", tid, dev.device_id)

    def requeued(tid):
        if on_requeue is not None:
            on_requeue(tid)
        if events is not None:
            events.emit(cycle, "requeue", tid, "battery_depleted")

    release_device_tasks(state, dev, requeued)


def advance_execution(state: SimState, cycle_duration_s: float, events: Optional[EventLog] = None,
                      lost_task_policy: str = "requeue") -> List[str]:
    """Run one cycle of execution on every core and drain batteries.

    A running task loses one remaining cycle and finishes when it reaches
    zero; a core left without a running task then starts its queue head.
    Returns the ids of tasks that finished this cycle.
    """
    return _advance(state, cycle_duration_s, events, lost_task_policy)[0]


def _finalize(state: SimState) -> List[AppProgress]:
    done = [p for p in state.active_apps.values() if p.finished == p.num_tasks]
    for p in done:
        state.finished_apps.append((p.app_id, state.cycle))
        del state.active_apps[p.app_id]
    return done


def finalize_applications(state: SimState) -> List[str]:
    """Archive every application whose tasks have all finished."""
    return [p.app_id for p in _finalize(state)]


def _check_deadlines(state: SimState) -> int:
    missed = 0
    for p in state.active_apps.values():
        if not p.deadline_missed and state.cycle - p.first_delivery_cycle > p.deadline_cycles:
            p.deadline_missed = True
            missed += 1
    return missed


# --- environment ---------------------------------------------------------------------

class Environment:
    """Owns the state and wires the dataflow, agents, churn and metrics together."""

    def __init__(self, apps: Sequence[ApplicationSpec], devices: Iterable[DeviceSpec],
                 cfg: Optional[EngineConfig] = None, pool: Optional[AgentPool] = None,
                 gen_cfg: Optional[GenConfig] = None, event_log: Optional[EventLog] = None,
                 executor: Optional[Executor] = None,
                 monitors: Sequence[Callable[["Environment", CycleReport], None]] = ()):
        self.cfg = cfg or EngineConfig()
        self.gen_cfg = gen_cfg or GenConfig()
        self.apps = {a.app_id: a for a in apps}
        self.cursor = WorkloadCursor(apps)
        self.index = GraphIndex(apps, transitive=self.cfg.priority_rule == "descendants")
        self.state = SimState()
        for dev in devices:
            self.state.add_device(copy.deepcopy(dev))
        window_seq, churn_seq, agent_seq = np.random.SeedSequence(self.cfg.seed).spawn(3)
        self.window_rng = np.random.default_rng(window_seq)
        self.churn_rng = np.random.default_rng(churn_seq)
        if pool is None:
            pool = AgentPool.build("greedy_eft", 24, int(agent_seq.generate_state(1)[0]))
        self.pool = pool
        self.events = event_log
        self.executor = executor
        self.monitors = list(monitors)
        self.churn_history = ChurnHistory()
        self.metrics = MetricsStore()
        for dev in self.state.devices.values():
            self.metrics.register_device(dev, 0)
        self.reports: List[CycleReport] = []
        # Readiness bookkeeping: tasks in the remaining ledger whose
        # predecessors have all finished, and unfinished-predecessor counts
        # for the others.
        self._ready: Dict[str, TaskSpec] = {}
        self._blocked: Dict[str, int] = {}
        self._waiters: Dict[str, List[str]] = {}

    def _track(self, tasks: Sequence[TaskSpec]) -> None:
        finished = self.state.finished_tasks
        for t in tasks:
            open_preds = [p for p in t.predecessors if p not in finished]
            if open_preds:
                self._blocked[t.task_id] = len(open_preds)
                for p in open_preds:
                    self._waiters.setdefault(p, []).append(t.task_id)
            else:
                self._ready[t.task_id] = t

    def _on_finish(self, tid: str) -> None:
        for s in self._waiters.pop(tid, ()):
            n = self._blocked[s] - 1
            if n:
                self._blocked[s] = n
            else:
                del self._blocked[s]
                self._ready[s] = self.state.delivered[s]

    def _ready_again(self, tid: str) -> None:
        self._ready[tid] = self.state.delivered[tid]

    def _on_requeue(self, tid: str) -> None:
        self._ready[tid] = self.state.delivered[tid]
        if self.events is not None:
            self._emit("requeue", tid, "device_removed")

    def ready_tasks(self) -> List[TaskSpec]:
        """Ready tasks in the remaining ledger, checked by :func:`filter_ready`."""
        return filter_ready(self.state, list(self._ready.values()))

    @classmethod
    def from_config(cls, gen_cfg: GenConfig, cfg: Optional[EngineConfig] = None,
                    scheduler: str = "greedy_eft", num_agents: int = 24, **kwargs) -> "Environment":
        apps, devices = generate(gen_cfg)
        cfg = cfg or EngineConfig()
        pool = kwargs.pop("pool", None) or AgentPool.build(scheduler, num_agents, cfg.seed)
        return cls(apps, devices, cfg, pool=pool, gen_cfg=gen_cfg, **kwargs)

    @property
    def done(self) -> bool:
        """True once every application has been delivered and finished."""
        return self.cursor.exhausted and not self.state.active_apps

    def snapshot(self) -> Snapshot:
        return take_snapshot(self.state, self.cfg.cycle_duration_s, self.cfg.cloud_core_cap)

    def _emit(self, kind, subject, detail=""):
        if self.events is not None:
            self.events.emit(self.state.cycle, kind, subject, detail)

    def step(self) -> CycleReport:
        started = time.perf_counter()
        state = self.state
        cfg = self.cfg
        report = CycleReport(cycle=state.cycle)

        window = next_window(self.cursor, cfg.window, state.cycle, self.window_rng)
        if window:
            deliver(state, window, self.apps)
            self._track(window)
            if self.events is not None:
                for t in window:
                    self._emit("deliver", t.task_id, t.app_id)
        report.tasks_delivered = len(window)

        ready = self.ready_tasks()
        ordered = prioritize(ready, self.index)

        per_agent: Dict[int, List[Outcome]] = {}
        if ordered:
            snap = self.snapshot()
            partition = partition_by_app(ordered, len(self.pool))
            proposals = run_agents(self.pool, snap, partition, self.executor)
            for a in proposals:
                res = commit_assignment(state, a, cfg.cloud_core_cap)
                per_agent.setdefault(a.agent_id, []).append(Outcome(a, res.accepted, res.reason))
                if res.accepted:
                    del self._ready[a.task_id]
                    report.tasks_scheduled += 1
                    self._emit("commit", a.task_id, f"{a.device_id}:{res.core_index}")
                else:
                    report.tasks_rejected += 1
                    self._emit("reject", a.task_id, res.reason)

        completed, energy = _advance(state, cfg.cycle_duration_s, self.events, cfg.lost_task_policy,
                                     self._on_finish, self._ready_again)
        report.tasks_completed = len(completed)
        report.energy_wh = energy
        for prog in _finalize(state):
            self.metrics.record_app(prog, state.cycle)
            self._emit("app_done", prog.app_id, str(state.cycle - prog.first_delivery_cycle))
            report.apps_completed += 1
        report.deadline_misses = _check_deadlines(state)

        for agent_id, outs in per_agent.items():
            accepted = sum(o.accepted for o in outs)
            outcome = CycleOutcomes(accepted, len(outs) - accepted, energy, report.deadline_misses)
            self.pool[agent_id].feedback(state.cycle, outs, reward_signal(outcome, cfg.reward_weights))

        event = maybe_churn(state, cfg.churn, self.churn_history, self.churn_rng, self.gen_cfg,
                            self._on_requeue)
        if event is not None:
            report.churn_event = event
            self.metrics.record_churn(event.cycle, event.direction, event.device_id, event.tier.value)
            if event.direction == "add":
                self.metrics.register_device(state.devices[event.device_id], state.cycle + 1)
            self._emit(f"churn_{event.direction}", event.device_id, event.tier.value)

        total = len(state.remaining_tasks) + len(state.running_tasks) + len(state.finished_tasks)
        if total != len(state.delivered):
            raise InvariantError(f"cycle {state.cycle}: {total} tasks in ledgers, "
                                 f"{len(state.delivered)} delivered")
        if cfg.check_invariants:
            check_invariants(state, deep=state.cycle % cfg.monitor_interval_cycles == 0)

        report.wall_time_s = time.perf_counter() - started
        if state.cycle % cfg.monitor_interval_cycles == 0:
            self._monitor(report)
        record_cycle(self.metrics, report, state)
        self.reports.append(report)
        state.cycle += 1
        return report

    def _monitor(self, report: CycleReport) -> None:
        s = self.state
        log.info("cycle %d: remaining=%d running=%d finished=%d apps_active=%d apps_done=%d devices=%d",
                 report.cycle, len(s.remaining_tasks), len(s.running_tasks), len(s.finished_tasks),
                 len(s.active_apps), len(s.finished_apps), len(s.devices))
        for fn in self.monitors:
            fn(self, report)

    def run(self, cycles: Optional[int] = None, early_stop: bool = True) -> List[CycleReport]:
        """Step up to ``cycles`` times (default ``total_cycles``).

        With ``early_stop`` the loop ends as soon as the workload is
        exhausted and every application has finished.
        """
        n = self.cfg.total_cycles if cycles is None else cycles
        out = []
        for _ in range(n):
            if early_stop and self.done and self.state.cycle > 0:
                break
            out.append(self.step())
        return out


def init(gen_cfg: GenConfig, engine_cfg: Optional[EngineConfig] = None, scheduler: str = "greedy_eft",
         num_agents: int = 24, **kwargs) -> Environment:
    """Generate a workload and fleet from ``gen_cfg`` and build an environment around it."""
    return Environment.from_config(gen_cfg, engine_cfg, scheduler, num_agents, **kwargs)
