"""Workload and fleet generation, plus CSV persistence.

All randomness flows through an explicit ``numpy.random.Generator`` so a
(config, seed) pair always yields the same corpus.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .model import (
    MAX_SAFETY,
    ApplicationSpec,
    CoreState,
    DeviceSpec,
    TaskSpec,
    Tier,
    ValidationError,
    topological_order,
    validate_application,
)

APPLICATIONS_HEADER = ["app_id", "deadline_cycles", "num_tasks"]
TASKS_HEADER = [
    "task_id", "app_id", "compute_load", "input_size_mb", "output_size_mb",
    "safety_level", "predecessors",
]
DEVICES_HEADER = [
    "device_id", "tier", "num_cores", "core_speed", "queue_capacity", "battery_wh",
    "active_power_w", "idle_power_w", "safety_capability",
]


class InvalidConfigError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class TierProfile:
    """Generation defaults for one device tier."""

    core_choices: Tuple[int, ...]
    speed_choices: Tuple[int, ...]
    queue_capacity: Optional[int]
    battery_wh_range: Optional[Tuple[float, float]]
    active_power_w: float
    idle_power_w: float
    safety_range: Tuple[int, int]


def _iot_profile():
    return TierProfile((4, 8, 16), (1, 2), 5, (36.0, 41.0), 2.0, 0.2, (0, 2))


def _mec_profile():
    return TierProfile((16, 32, 64), (4, 8), 20, (500.0, 1000.0), 8.0, 0.8, (1, 3))


def _cloud_profile():
    return TierProfile((8,), (4,), None, None, 10.0, 0.0, (3, 3))


@dataclass
class GenConfig:
    num_apps: int = 10_000
    tasks_per_app: Tuple[int, int] = (20, 60)
    dependency_density: float = 0.3
    compute_load_range: Tuple[int, int] = (1, 100)
    size_range_mb: Tuple[float, float] = (1.0, 1024.0)
    safety_level_range: Tuple[int, int] = (0, 3)
    deadline_range_cycles: Tuple[int, int] = (200, 2000)
    num_iot: int = 100
    num_mec: int = 50
    cloud: bool = True
    iot: TierProfile = field(default_factory=_iot_profile)
    mec: TierProfile = field(default_factory=_mec_profile)
    cloud_profile: TierProfile = field(default_factory=_cloud_profile)
    seed: int = 1

    @property
    def iot_core_choices(self):
        return self.iot.core_choices

    @property
    def mec_core_choices(self):
        return self.mec.core_choices

    @property
    def iot_battery_wh_range(self):
        return self.iot.battery_wh_range

    def profile(self, tier: Tier) -> TierProfile:
        return {Tier.IOT: self.iot, Tier.MEC: self.mec, Tier.CLOUD: self.cloud_profile}[tier]

    def validate(self) -> None:
        if self.num_apps < 0 or self.num_iot < 0 or self.num_mec < 0:
            raise InvalidConfigError("counts must be non-negative")
        for name in ("tasks_per_app", "compute_load_range", "size_range_mb",
                     "safety_level_range", "deadline_range_cycles"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidConfigError(f"{name} is empty: [{lo}, {hi}]")
        if self.tasks_per_app[0] < 1:
            raise InvalidConfigError("tasks_per_app must start at 1 or more")
        if self.compute_load_range[0] < 1:
            raise InvalidConfigError("compute loads must be at least 1")
        if self.deadline_range_cycles[0] < 1:
            raise InvalidConfigError("deadlines must be at least 1 cycle")
        lo, hi = self.size_range_mb
        if lo < 1 or hi > 1024:
            raise InvalidConfigError("size_range_mb must lie within [1, 1024]")
        lo, hi = self.safety_level_range
        if lo < 0 or hi > MAX_SAFETY:
            raise InvalidConfigError("safety levels must lie within [0, 3]")
        if not 0.0 <= self.dependency_density <= 1.0:
            raise InvalidConfigError("dependency_density must be a probability")
        for tier in Tier:
            p = self.profile(tier)
            if not p.core_choices or not p.speed_choices:
                raise InvalidConfigError(f"{tier.value}: core and speed choices must be non-empty")
            if min(p.core_choices) < 1 or min(p.speed_choices) < 1:
                raise InvalidConfigError(f"{tier.value}: cores and speeds must be positive")
            if p.queue_capacity is not None and p.queue_capacity < 1:
                raise InvalidConfigError(f"{tier.value}: queue_capacity must be positive")
            if p.battery_wh_range is not None and p.battery_wh_range[0] > p.battery_wh_range[1]:
                raise InvalidConfigError(f"{tier.value}: battery range is empty")
            if (p.battery_wh_range is None) != (tier is Tier.CLOUD):
                raise InvalidConfigError("only the Cloud tier goes without a battery")
            lo, hi = p.safety_range
            if lo > hi or lo < 0 or hi > MAX_SAFETY:
                raise InvalidConfigError(f"{tier.value}: bad safety range")


def generate_dag(num_tasks: int, density: float, rng: np.random.Generator) -> Set[Tuple[int, int]]:
    """Random DAG over task indices ``0..num_tasks-1``.

    Tasks are placed in a random order and every forward pair becomes an
    edge with probability ``density``. When ``density > 0`` any task other
    than the first in that order that received no predecessor gets one,
    chosen uniformly among the tasks before it.
    """
    if num_tasks < 1:
        raise ValueError("num_tasks must be at least 1")
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must be in [0, 1]")
    perm = rng.permutation(num_tasks)
    draws = rng.random((num_tasks, num_tasks)) < density
    edges = set()
    for j in range(1, num_tasks):
        preds = np.flatnonzero(draws[:j, j])
        if preds.size == 0 and density > 0:
            preds = [int(rng.integers(j))]
        for i in preds:
            edges.add((int(perm[i]), int(perm[j])))
    return edges


def expected_edge_count(num_tasks: int, density: float) -> float:
    """Mean size of :func:`generate_dag`'s edge set, connectivity floor included."""
    if density <= 0:
        return 0.0
    pairs = num_tasks * (num_tasks - 1) / 2
    floor = sum((1 - density) ** k for k in range(1, num_tasks))
    return density * pairs + floor


def _id_width(count: int, minimum: int) -> int:
    return max(minimum, len(str(max(count - 1, 0))))


def generate_applications(cfg: GenConfig, rng: np.random.Generator) -> List[ApplicationSpec]:
    cfg.validate()
    app_w = _id_width(cfg.num_apps, 5)
    task_w = _id_width(cfg.tasks_per_app[1], 2)
    lo_sz, hi_sz = cfg.size_range_mb
    apps = []
    for k in range(cfg.num_apps):
        app_id = f"a{k:0{app_w}d}"
        n = int(rng.integers(cfg.tasks_per_app[0], cfg.tasks_per_app[1] + 1))
        edges = generate_dag(n, cfg.dependency_density, rng)
        preds: Dict[int, Set[int]] = {}
        for u, v in edges:
            preds.setdefault(v, set()).add(u)
        loads = rng.integers(cfg.compute_load_range[0], cfg.compute_load_range[1] + 1, size=n)
        sizes = np.round(rng.uniform(lo_sz, hi_sz, size=(n, 2)), 3)
        sizes = np.clip(sizes, lo_sz, hi_sz)
        safety = rng.integers(cfg.safety_level_range[0], cfg.safety_level_range[1] + 1, size=n)
        deadline = int(rng.integers(cfg.deadline_range_cycles[0], cfg.deadline_range_cycles[1] + 1))
        ids = [f"{app_id}t{i:0{task_w}d}" for i in range(n)]
        tasks = tuple(
            TaskSpec(
                task_id=ids[i],
                app_id=app_id,
                compute_load=int(loads[i]),
                input_size_mb=float(sizes[i, 0]),
                output_size_mb=float(sizes[i, 1]),
                safety_level=int(safety[i]),
                predecessors=frozenset(ids[p] for p in preds.get(i, ())),
            )
            for i in range(n)
        )
        apps.append(ApplicationSpec(app_id, tasks, deadline))
    return apps


def device_id_for(tier: Tier, index: int) -> str:
    if tier is Tier.CLOUD:
        return f"cloud{index}"
    return f"{tier.value.lower()}{index:04d}"


def make_device(tier: Tier, index: int, profile: TierProfile, rng: np.random.Generator) -> DeviceSpec:
    """One device drawn from ``profile``; ``index`` fixes its id."""
    num_cores = int(rng.choice(profile.core_choices))
    speed = int(rng.choice(profile.speed_choices))
    battery = None
    if profile.battery_wh_range is not None:
        battery = round(float(rng.uniform(*profile.battery_wh_range)), 6)
    safety = int(rng.integers(profile.safety_range[0], profile.safety_range[1] + 1))
    return DeviceSpec(
        device_id=device_id_for(tier, index),
        tier=tier,
        cores=[CoreState(speed, profile.queue_capacity) for _ in range(num_cores)],
        battery_wh=battery,
        active_power_w=profile.active_power_w,
        idle_power_w=profile.idle_power_w,
        safety_capability=safety,
    )


def generate_devices(cfg: GenConfig, rng: np.random.Generator) -> List[DeviceSpec]:
    cfg.validate()
    devices = [make_device(Tier.IOT, i, cfg.iot, rng) for i in range(cfg.num_iot)]
    devices += [make_device(Tier.MEC, i, cfg.mec, rng) for i in range(cfg.num_mec)]
    if cfg.cloud:
        devices.append(make_device(Tier.CLOUD, 0, cfg.cloud_profile, rng))
    return devices


def generate(cfg: GenConfig) -> Tuple[List[ApplicationSpec], List[DeviceSpec]]:
    """Applications and devices from ``cfg.seed``, devices on their own stream."""
    app_seq, dev_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    apps = generate_applications(cfg, np.random.default_rng(app_seq))
    devices = generate_devices(cfg, np.random.default_rng(dev_seq))
    return apps, devices


# --- CSV persistence -------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(x) if isinstance(x, float) else str(x)


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def export_csv(apps: Sequence[ApplicationSpec], devices: Sequence[DeviceSpec], dir_path) -> Dict[str, Tuple[str, int]]:
    """Write ``applications.csv``, ``tasks.csv`` and ``devices.csv``.

    Returns ``{file name: (path, data row count)}``. Invalid applications or
    devices with mixed core specs are refused before anything is written.
    """
    for app in apps:
        problems = validate_application(app)
        if problems:
            raise ValidationError(f"refusing to export {app.app_id}: {problems}")
    for dev in devices:
        specs = {(c.speed, c.queue_capacity) for c in dev.cores}
        if len(specs) > 1:
            raise ValidationError(f"{dev.device_id} mixes core specs, not representable in CSV")
        if not dev.cores:
            raise ValidationError(f"{dev.device_id} has no cores")
    os.makedirs(dir_path, exist_ok=True)
    manifest = {}

    path = os.path.join(dir_path, "applications.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(APPLICATIONS_HEADER)
        for app in apps:
            w.writerow([app.app_id, app.deadline_cycles, app.num_tasks])
    manifest["applications.csv"] = (path, len(apps))

    path = os.path.join(dir_path, "tasks.csv")
    rows = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(TASKS_HEADER)
        for app in apps:
            for t in app.tasks:
                w.writerow([
                    t.task_id, t.app_id, t.compute_load, _fmt(t.input_size_mb),
                    _fmt(t.output_size_mb), t.safety_level, ";".join(sorted(t.predecessors)),
                ])
                rows += 1
    manifest["tasks.csv"] = (path, rows)

    path = os.path.join(dir_path, "devices.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(DEVICES_HEADER)
        for d in devices:
            c = d.cores[0]
            w.writerow([
                d.device_id, d.tier.value, len(d.cores), c.speed, _fmt(c.queue_capacity),
                _fmt(d.battery_wh), _fmt(d.active_power_w), _fmt(d.idle_power_w),
                d.safety_capability,
            ])
    manifest["devices.csv"] = (path, len(devices))
    return manifest


def _read_rows(path, header):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: missing header")
        if first != header:
            raise SchemaError(f"{path}: expected header {','.join(header)}, got {','.join(first)}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(path, reader.line_num, f"expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, row


def _parse(path, line, conv, value, name):
    try:
        return conv(value)
    except (TypeError, ValueError):
        raise ParseError(path, line, f"bad {name}: {value!r}") from None


def _opt(conv):
    return lambda v: None if v == "" else conv(v)


def load_csv(dir_path) -> Tuple[List[ApplicationSpec], List[DeviceSpec]]:
    app_path = os.path.join(dir_path, "applications.csv")
    task_path = os.path.join(dir_path, "tasks.csv")
    dev_path = os.path.join(dir_path, "devices.csv")

    app_meta = {}
    for line, row in _read_rows(app_path, APPLICATIONS_HEADER):
        app_id = row[0]
        if app_id in app_meta:
            raise ParseError(app_path, line, f"duplicate app_id {app_id}")
        app_meta[app_id] = (
            _parse(app_path, line, int, row[1], "deadline_cycles"),
            _parse(app_path, line, int, row[2], "num_tasks"),
        )

    tasks: Dict[str, List[TaskSpec]] = {a: [] for a in app_meta}
    for line, row in _read_rows(task_path, TASKS_HEADER):
        app_id = row[1]
        if app_id not in tasks:
            raise ValidationError(f"{task_path}:{line}: task {row[0]} references unknown app {app_id}")
        preds = frozenset(p for p in row[6].split(";") if p)
        tasks[app_id].append(TaskSpec(
            task_id=row[0],
            app_id=app_id,
            compute_load=_parse(task_path, line, int, row[2], "compute_load"),
            input_size_mb=_parse(task_path, line, float, row[3], "input_size_mb"),
            output_size_mb=_parse(task_path, line, float, row[4], "output_size_mb"),
            safety_level=_parse(task_path, line, int, row[5], "safety_level"),
            predecessors=preds,
        ))

    apps = []
    for app_id, (deadline, n) in app_meta.items():
        app = ApplicationSpec(app_id, tuple(tasks[app_id]), deadline)
        if app.num_tasks != n:
            raise ValidationError(f"{app_id}: applications.csv says {n} tasks, tasks.csv has {app.num_tasks}")
        problems = validate_application(app)
        if problems:
            raise ValidationError(f"{app_id}: {'; '.join(problems)}")
        apps.append(app)

    devices = []
    seen = set()
    for line, row in _read_rows(dev_path, DEVICES_HEADER):
        try:
            tier = Tier(row[1])
        except ValueError:
            raise ParseError(dev_path, line, f"unknown tier {row[1]!r}") from None
        n = _parse(dev_path, line, int, row[2], "num_cores")
        speed = _parse(dev_path, line, int, row[3], "core_speed")
        cap = _parse(dev_path, line, _opt(int), row[4], "queue_capacity")
        battery = _parse(dev_path, line, _opt(float), row[5], "battery_wh")
        if n < 1 or speed < 1 or (cap is not None and cap < 1):
            raise ValidationError(f"{dev_path}:{line}: cores, speed and capacity must be positive")
        if (battery is None) != (tier is Tier.CLOUD):
            raise ValidationError(f"{dev_path}:{line}: battery_wh must be empty exactly for Cloud")
        if battery is not None and battery < 0:
            raise ValidationError(f"{dev_path}:{line}: negative battery")
        if row[0] in seen:
            raise ValidationError(f"{dev_path}:{line}: duplicate device_id {row[0]}")
        seen.add(row[0])
        devices.append(DeviceSpec(
            device_id=row[0],
            tier=tier,
            cores=[CoreState(speed, cap) for _ in range(n)],
            battery_wh=battery,
            active_power_w=_parse(dev_path, line, float, row[6], "active_power_w"),
            idle_power_w=_parse(dev_path, line, float, row[7], "idle_power_w"),
            safety_capability=_parse(dev_path, line, int, row[8], "safety_capability"),
        ))
    return apps, devices


# --- distribution report ---------------------------------------------------

@dataclass(frozen=True)
class AttributeSummary:
    minimum: float
    maximum: float
    mean: float
    stddev: float
    bin_edges: Tuple[float, ...]
    counts: Tuple[int, ...]


def _summarize(values) -> AttributeSummary:
    arr = np.asarray(values, dtype=float)
    lo, hi = float(arr.min()), float(arr.max())
    counts, edges = np.histogram(arr, bins=10, range=(lo, hi) if hi > lo else (lo - 0.5, lo + 0.5))
    return AttributeSummary(lo, hi, float(arr.mean()), float(arr.std()),
                            tuple(float(e) for e in edges), tuple(int(c) for c in counts))


def distribution_report(apps: Sequence[ApplicationSpec]) -> Dict[str, AttributeSummary]:
    """Min/max/mean/stddev and a 10-bin histogram for each workload attribute."""
    if not apps:
        raise ValueError("distribution_report needs at least one application")
    cols: Dict[str, list] = {
        "tasks_per_app": [], "deadline_cycles": [], "compute_load": [],
        "input_size_mb": [], "output_size_mb": [], "safety_level": [], "num_predecessors": [],
    }
    for app in apps:
        cols["tasks_per_app"].append(app.num_tasks)
        cols["deadline_cycles"].append(app.deadline_cycles)
        for t in app.tasks:
            cols["compute_load"].append(t.compute_load)
            cols["input_size_mb"].append(t.input_size_mb)
            cols["output_size_mb"].append(t.output_size_mb)
            cols["safety_level"].append(t.safety_level)
            cols["num_predecessors"].append(len(t.predecessors))
    return {k: _summarize(v) for k, v in cols.items()}


def app_topological_tasks(app: ApplicationSpec) -> List[TaskSpec]:
    by_id = {t.task_id: t for t in app.tasks}
    return [by_id[i] for i in topological_order(app)]


def config_fields(cls) -> List[str]:
    return [f.name for f in fields(cls)]
