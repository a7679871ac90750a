"""Device churn: devices joining and leaving the fleet while a run is in progress."""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .datagen import GenConfig, device_id_for, make_device
from .model import DeviceSpec, SimState, Tier

ADD = "add"
REMOVE = "remove"
SCRIPT_HEADER = ["cycle", "action", "tier"]
SWEEP_HEADER = ["probability", "mean_added", "mean_removed", "stddev_added", "stddev_removed"]


class NoRemovableDeviceError(RuntimeError):
    pass


class ChurnScriptError(ValueError):
    pass


@dataclass(frozen=True)
class ChurnDirective:
    cycle: int
    action: str
    tier: Optional[Tier] = None

    def __post_init__(self):
        if self.action not in (ADD, REMOVE):
            raise ChurnScriptError(f"unknown churn action {self.action!r}")
        if self.action == ADD and self.tier not in (Tier.IOT, Tier.MEC):
            raise ChurnScriptError("add directives need tier IoT or MEC")
        if self.cycle < 0:
            raise ChurnScriptError("directive cycle must be non-negative")


def _default_mix():
    return {Tier.MEC: 1 / 3, Tier.IOT: 2 / 3}


@dataclass
class ChurnConfig:
    event_probability: float = 0.0075
    max_consecutive: int = 3
    add_mix: Dict[Tier, float] = field(default_factory=_default_mix)
    enabled: bool = True
    manual_script: Tuple[ChurnDirective, ...] = ()
    # "flip" turns a capped draw around; "suppress" drops it.
    cap_mode: str = "flip"

    def __post_init__(self):
        if not 0.0 <= self.event_probability <= 1.0:
            raise ValueError("event_probability must be in [0, 1]")
        if self.max_consecutive < 1:
            raise ValueError("max_consecutive must be at least 1")
        if Tier.CLOUD in self.add_mix:
            raise ValueError("Cloud devices are never added by churn")
        if abs(sum(self.add_mix.values()) - 1.0) > 1e-9 or min(self.add_mix.values()) < 0:
            raise ValueError("add_mix must be a probability distribution")
        if self.cap_mode not in ("flip", "suppress"):
            raise ValueError("cap_mode must be 'flip' or 'suppress'")
        self.manual_script = tuple(self.manual_script)
        cycles = [d.cycle for d in self.manual_script]
        if len(cycles) != len(set(cycles)):
            raise ChurnScriptError("at most one churn directive per cycle")
        self._script = {d.cycle: d for d in self.manual_script}

    def directive_at(self, cycle: int) -> Optional[ChurnDirective]:
        return self._script.get(cycle)


@dataclass(frozen=True)
class ChurnEvent:
    cycle: int
    direction: str
    device_id: str
    tier: Tier
    manual: bool = False


@dataclass
class ChurnHistory:
    consecutive_count: int = 0
    last_direction: Optional[str] = None
    total_added: int = 0
    total_removed: int = 0
    events: List[ChurnEvent] = field(default_factory=list)

    def record(self, event: ChurnEvent) -> None:
        if event.direction == self.last_direction:
            self.consecutive_count += 1
        else:
            self.last_direction = event.direction
            self.consecutive_count = 1
        if event.direction == ADD:
            self.total_added += 1
        else:
            self.total_removed += 1
        self.events.append(event)


def add_device(state: SimState, tier: Tier, rng: np.random.Generator,
               gen_cfg: Optional[GenConfig] = None) -> DeviceSpec:
    """Generate a fresh ``tier`` device with generation defaults and register it."""
    if tier not in (Tier.IOT, Tier.MEC):
        raise ValueError("only IoT and MEC devices can join")
    gen_cfg = gen_cfg or GenConfig()
    index = state.device_counters.get(tier, 0)
    device = make_device(tier, index, gen_cfg.profile(tier), rng)
    while device.device_id in state.devices:
        index += 1
        device.device_id = device_id_for(tier, index)
    state.add_device(device)
    return device


def release_device_tasks(state: SimState, device: DeviceSpec,
                         on_requeue: Optional[Callable[[str], None]] = None) -> List[str]:
    """Return every task placed on ``device`` to the remaining ledger."""
    freed = []
    for i in sorted(device.active_cores):
        core = device.cores[i]
        if core.running is not None:
            freed.append(core.running[0])
            core.running = None
        freed.extend(core.queue)
        core.queue.clear()
    device.active_cores.clear()
    for tid in freed:
        del state.running_tasks[tid]
        state.remaining_tasks[tid] = state.delivered[tid]
        if on_requeue is not None:
            on_requeue(tid)
    return freed


def _pop_random_device(state, rng, on_requeue) -> DeviceSpec:
    candidates = [d for d in state.devices.values() if not d.is_cloud]
    if not candidates:
        raise NoRemovableDeviceError("only Cloud devices remain")
    victim = candidates[int(rng.integers(len(candidates)))]
    release_device_tasks(state, victim, on_requeue)
    del state.devices[victim.device_id]
    return victim


def remove_device(state: SimState, rng: np.random.Generator,
                  on_requeue: Optional[Callable[[str], None]] = None) -> str:
    """Deregister a uniformly chosen non-Cloud device, carrying its tasks forward."""
    return _pop_random_device(state, rng, on_requeue).device_id


def _removable(state: SimState) -> bool:
    return any(not d.is_cloud for d in state.devices.values())


def _draw_tier(mix: Dict[Tier, float], rng: np.random.Generator) -> Tier:
    u = rng.random()
    acc = 0.0
    tiers = sorted(mix, key=lambda t: t.value)
    for t in tiers:
        acc += mix[t]
        if u < acc:
            return t
    return tiers[-1]


def maybe_churn(state: SimState, cfg: ChurnConfig, history: ChurnHistory,
                rng: np.random.Generator, gen_cfg: Optional[GenConfig] = None,
                on_requeue: Optional[Callable[[str], None]] = None) -> Optional[ChurnEvent]:
    """Apply at most one add/remove event for the current cycle.

    A scripted directive for this cycle replaces the random draw. Otherwise
    an event fires with ``event_probability``, its direction a fair coin,
    turned around (or dropped, under ``cap_mode="suppress"``) when it would
    extend a run of ``max_consecutive`` same-direction events.
    """
    cycle = state.cycle
    directive = cfg.directive_at(cycle)
    if directive is not None:
        direction, tier, manual = directive.action, directive.tier, True
        if direction == REMOVE and not _removable(state):
            return None
    else:
        if not cfg.enabled or cfg.event_probability <= 0:
            return None
        if rng.random() >= cfg.event_probability:
            return None
        direction = ADD if rng.random() < 0.5 else REMOVE
        if direction == history.last_direction and history.consecutive_count >= cfg.max_consecutive:
            if cfg.cap_mode == "suppress":
                return None
            direction = REMOVE if direction == ADD else ADD
        if direction == REMOVE and not _removable(state):
            return None
        tier, manual = None, False
        if direction == ADD:
            tier = _draw_tier(cfg.add_mix, rng)
    if direction == ADD:
        device = add_device(state, tier, rng, gen_cfg)
    else:
        device = _pop_random_device(state, rng, on_requeue)
    event = ChurnEvent(cycle, direction, device.device_id, device.tier, manual)
    history.record(event)
    return event


def load_script(path) -> Tuple[ChurnDirective, ...]:
    """Read a ``cycle,action,tier`` churn script."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCRIPT_HEADER:
            raise ChurnScriptError(f"{path}: expected header {','.join(SCRIPT_HEADER)}")
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ChurnScriptError(f"{path}:{reader.line_num}: expected 3 fields")
            try:
                cycle = int(row[0])
                tier = Tier(row[2]) if row[2] else None
            except ValueError as exc:
                raise ChurnScriptError(f"{path}:{reader.line_num}: {exc}") from None
            out.append(ChurnDirective(cycle, row[1], tier))
    return tuple(out)


@dataclass(frozen=True)
class SweepRow:
    probability: float
    mean_added: float
    mean_removed: float
    stddev_added: float
    stddev_removed: float


def churn_sweep(engine_factory: Callable[[float, int], "object"], probabilities: Sequence[float],
                cycles: int, seeds: Iterable[int]) -> List[SweepRow]:
    """Run ``cycles`` steps per (probability, seed) and average churn counts.

    ``engine_factory(p, seed)`` must return a fresh environment whose churn
    probability is ``p``.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("churn_sweep needs at least one seed")
    for p in probabilities:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
    rows = []
    for p in probabilities:
        added, removed = [], []
        for seed in seeds:
            env = engine_factory(p, seed)
            env.run(cycles, early_stop=False)
            added.append(env.churn_history.total_added)
            removed.append(env.churn_history.total_removed)
        rows.append(SweepRow(
            probability=p,
            mean_added=statistics.fmean(added),
            mean_removed=statistics.fmean(removed),
            stddev_added=statistics.pstdev(added),
            stddev_removed=statistics.pstdev(removed),
        ))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([repr(float(r.probability)), repr(r.mean_added), repr(r.mean_removed),
                        repr(r.stddev_added), repr(r.stddev_removed)])
