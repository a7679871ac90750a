"""Per-cycle, per-application and per-device metrics with CSV export."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import AppProgress, DeviceSpec, SimState

CYCLES_HEADER = [
    "cycle", "delivered", "scheduled", "rejected", "completed", "apps_completed",
    "fleet_size", "total_battery_wh", "wall_time_s",
]
APPS_HEADER = ["app_id", "arrival_cycle", "completion_cycle", "makespan_cycles", "deadline_met"]
DEVICES_HEADER = ["device_id", "tier", "energy_wh", "lifetime_cycles"]
LIVE_HEADER = ["cycle", "live_objects"]
CHURN_HEADER = ["cycle", "direction", "device_id", "tier"]

PLOT_KINDS = ("iteration_time", "memory_proxy", "churn", "makespan_hist")


class MetricsError(ValueError):
    pass


class UnfinishedAppError(KeyError):
    pass


class UnknownDeviceError(KeyError):
    pass


@dataclass
class CycleRecord:
    cycle: int
    delivered: int
    scheduled: int
    rejected: int
    completed: int
    apps_completed: int
    fleet_size: int
    total_battery_wh: float
    wall_time_s: Optional[float]
    live_objects: int = 0


@dataclass
class AppRecord:
    app_id: str
    arrival_cycle: int
    completion_cycle: int
    deadline_cycles: int

    @property
    def makespan(self) -> int:
        return self.completion_cycle - self.arrival_cycle

    @property
    def deadline_met(self) -> bool:
        return self.makespan <= self.deadline_cycles


@dataclass
class DeviceRecord:
    device_id: str
    tier: str
    first_cycle: int
    last_cycle: int
    energy_wh: float = 0.0
    initial_battery_wh: Optional[float] = None
    final_battery_wh: Optional[float] = None
    device: Optional[DeviceSpec] = field(default=None, repr=False, compare=False)

    @property
    def lifetime_cycles(self) -> int:
        return max(self.last_cycle - self.first_cycle + 1, 0)

    def refresh(self) -> None:
        if self.device is not None:
            self.energy_wh = self.device.energy_wh
            self.final_battery_wh = self.device.battery_wh


@dataclass
class MetricsStore:
    cycles: List[CycleRecord] = field(default_factory=list)
    apps: Dict[str, AppRecord] = field(default_factory=dict)
    devices: Dict[str, DeviceRecord] = field(default_factory=dict)
    churn: List[Tuple[int, str, str, str]] = field(default_factory=list)

    def register_device(self, device: DeviceSpec, first_cycle: int) -> None:
        """Start metering ``device``; ``first_cycle`` is its first executing cycle."""
        if device.device_id in self.devices:
            return
        self.devices[device.device_id] = DeviceRecord(
            device_id=device.device_id,
            tier=device.tier.value,
            first_cycle=first_cycle,
            last_cycle=first_cycle - 1,
            energy_wh=device.energy_wh,
            initial_battery_wh=device.battery_wh,
            final_battery_wh=device.battery_wh,
            device=device,
        )

    def record_app(self, progress: AppProgress, completion_cycle: int) -> None:
        if progress.app_id in self.apps:
            raise MetricsError(f"app {progress.app_id} already recorded")
        self.apps[progress.app_id] = AppRecord(
            progress.app_id, progress.first_delivery_cycle, completion_cycle, progress.deadline_cycles)

    def record_churn(self, cycle: int, direction: str, device_id: str, tier: str) -> None:
        self.churn.append((cycle, direction, device_id, tier))
        rec = self.devices.get(device_id)
        if rec is not None and direction == "remove":
            rec.refresh()
            rec.last_cycle = cycle
            rec.device = None


def record_cycle(store: MetricsStore, report, state: SimState) -> None:
    """Append one per-cycle record and refresh device meters."""
    if store.cycles and report.cycle <= store.cycles[-1].cycle:
        raise MetricsError(f"cycle {report.cycle} recorded after {store.cycles[-1].cycle}")
    battery = 0.0
    for dev in state.devices.values():
        rec = store.devices.get(dev.device_id)
        if rec is None:
            store.register_device(dev, report.cycle + 1)
        else:
            rec.energy_wh = dev.energy_wh
            rec.final_battery_wh = dev.battery_wh
            rec.last_cycle = report.cycle
        if dev.battery_wh is not None:
            battery += dev.battery_wh
    store.cycles.append(CycleRecord(
        cycle=report.cycle,
        delivered=report.tasks_delivered,
        scheduled=report.tasks_scheduled,
        rejected=report.tasks_rejected,
        completed=report.tasks_completed,
        apps_completed=report.apps_completed,
        fleet_size=len(state.devices),
        total_battery_wh=battery,
        wall_time_s=report.wall_time_s,
        live_objects=state.live_objects(),
    ))


def makespan(store: MetricsStore, app_id: str) -> int:
    try:
        return store.apps[app_id].makespan
    except KeyError:
        raise UnfinishedAppError(app_id) from None


def energy_total(store: MetricsStore, device_id: Optional[str] = None) -> float:
    """Energy drawn in Wh by one device, or by the whole fleet if ``device_id`` is None."""
    if device_id is None:
        return float(sum(r.energy_wh for r in store.devices.values()))
    try:
        return store.devices[device_id].energy_wh
    except KeyError:
        raise UnknownDeviceError(device_id) from None


def _f(x) -> str:
    return "" if x is None else repr(float(x))


def _write(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def export_metrics(store: MetricsStore, dir_path, wall_time: bool = True) -> Dict[str, Tuple[str, int]]:
    """Write the metric CSVs into ``dir_path``.

    ``wall_time=False`` leaves the ``wall_time_s`` column empty so that
    identically seeded runs export byte-identical files.
    """
    os.makedirs(dir_path, exist_ok=True)
    files = {
        "cycles.csv": (CYCLES_HEADER, [
            [r.cycle, r.delivered, r.scheduled, r.rejected, r.completed, r.apps_completed,
             r.fleet_size, _f(r.total_battery_wh), _f(r.wall_time_s) if wall_time else ""]
            for r in store.cycles]),
        "apps.csv": (APPS_HEADER, [
            [a.app_id, a.arrival_cycle, a.completion_cycle, a.makespan, int(a.deadline_met)]
            for a in store.apps.values()]),
        "devices.csv": (DEVICES_HEADER, [
            [d.device_id, d.tier, _f(d.energy_wh), d.lifetime_cycles]
            for d in store.devices.values()]),
        "live_objects.csv": (LIVE_HEADER, [[r.cycle, r.live_objects] for r in store.cycles]),
        "churn.csv": (CHURN_HEADER, [list(e) for e in store.churn]),
    }
    manifest = {}
    for name, (header, rows) in files.items():
        path = os.path.join(dir_path, name)
        _write(path, header, rows)
        manifest[name] = (path, len(rows))
    return manifest


def _read(path, header):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != header:
            raise MetricsError(f"{path}: unexpected header")
        return [row for row in reader if row]


def load_metrics(dir_path) -> MetricsStore:
    """Rebuild a store from exported files (device meters become plain numbers)."""
    store = MetricsStore()
    live = {}
    live_path = os.path.join(dir_path, "live_objects.csv")
    if os.path.exists(live_path):
        live = {int(r[0]): int(r[1]) for r in _read(live_path, LIVE_HEADER)}
    for r in _read(os.path.join(dir_path, "cycles.csv"), CYCLES_HEADER):
        c = int(r[0])
        store.cycles.append(CycleRecord(
            c, int(r[1]), int(r[2]), int(r[3]), int(r[4]), int(r[5]), int(r[6]), float(r[7]),
            float(r[8]) if r[8] else None, live.get(c, 0)))
    for r in _read(os.path.join(dir_path, "apps.csv"), APPS_HEADER):
        arrival, completion, span = int(r[1]), int(r[2]), int(r[3])
        met = r[4] == "1"
        # The deadline itself is not exported; keep a value consistent with the flag.
        store.apps[r[0]] = AppRecord(r[0], arrival, completion, span if met else span - 1)
    for r in _read(os.path.join(dir_path, "devices.csv"), DEVICES_HEADER):
        store.devices[r[0]] = DeviceRecord(r[0], r[1], 0, int(r[3]) - 1, float(r[2]))
    churn_path = os.path.join(dir_path, "churn.csv")
    if os.path.exists(churn_path):
        store.churn = [(int(r[0]), r[1], r[2], r[3]) for r in _read(churn_path, CHURN_HEADER)]
    return store


def plot_data(store: MetricsStore, kind: str) -> Tuple[List[str], List[list]]:
    """Header and rows of a plot-ready series."""
    if kind == "iteration_time":
        return ["cycle", "wall_time_s"], [[r.cycle, _f(r.wall_time_s)] for r in store.cycles]
    if kind == "memory_proxy":
        return ["cycle", "live_objects"], [[r.cycle, r.live_objects] for r in store.cycles]
    if kind == "churn":
        by_cycle: Dict[int, List[int]] = {}
        for cycle, direction, _, _ in store.churn:
            slot = by_cycle.setdefault(cycle, [0, 0])
            slot[0 if direction == "add" else 1] += 1
        added = removed = 0
        rows = []
        for r in store.cycles:
            a, d = by_cycle.get(r.cycle, (0, 0))
            added += a
            removed += d
            rows.append([r.cycle, added, removed])
        return ["cycle", "added", "removed"], rows
    if kind == "makespan_hist":
        spans = np.array([a.makespan for a in store.apps.values()], dtype=float)
        if spans.size == 0:
            return ["bin_left", "bin_right", "count"], []
        lo, hi = spans.min(), spans.max()
        counts, edges = np.histogram(spans, bins=10, range=(lo, hi) if hi > lo else (lo - 0.5, lo + 0.5))
        return ["bin_left", "bin_right", "count"], [
            [_f(edges[i]), _f(edges[i + 1]), int(counts[i])] for i in range(len(counts))]
    raise MetricsError(f"unknown plot kind {kind!r}; valid kinds: {', '.join(PLOT_KINDS)}")


def write_series(header: Sequence[str], rows: Sequence[list], path) -> None:
    _write(path, header, rows)
