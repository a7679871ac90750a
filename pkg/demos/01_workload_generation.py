"""
Generating a workload
=====================

A workload is a set of applications, each a DAG of tasks, plus a fleet of
IoT, MEC and Cloud devices. Everything is drawn from one seed.
"""

import tempfile

import numpy as np

from edgesim import GenConfig, export_csv, generate, load_csv, topological_order
from edgesim.datagen import distribution_report

# %%
# A small corpus: 200 applications and a 20 + 5 + 1 device fleet.
cfg = GenConfig(num_apps=200, num_iot=20, num_mec=5, seed=7)
apps, devices = generate(cfg)
print(len(apps), "applications,", sum(a.num_tasks for a in apps), "tasks,", len(devices), "devices")

# %%
# Each application is a DAG. Its canonical order is the topological order
# that breaks ties by task id.
first = apps[0]
print(first.app_id, "deadline", first.deadline_cycles, "cycles")
for tid in topological_order(first)[:6]:
    t = next(t for t in first.tasks if t.task_id == tid)
    print(f"  {tid} load={t.compute_load:3d} safety={t.safety_level} after {sorted(t.predecessors)}")

# %%
# Summary statistics for every task attribute.
report = distribution_report(apps)
for name, s in report.items():
    print(f"{name:>16}: mean {s.mean:8.2f}  std {s.stddev:7.2f}  range [{s.minimum:g}, {s.maximum:g}]")

# %%
# The fleet: cores, speeds and batteries by tier.
for tier in ("IoT", "MEC", "Cloud"):
    group = [d for d in devices if d.tier.value == tier]
    cores = np.array([len(d.cores) for d in group])
    print(f"{tier:>5}: {len(group):3d} devices, cores {cores.min()}-{cores.max()}")

# %%
# CSV round trip. Loading validates every application again.
with tempfile.TemporaryDirectory() as out:
    files = export_csv(apps, devices, out)
    for name, (_, rows) in sorted(files.items()):
        print(f"{name}: {rows} rows")
    apps2, devices2 = load_csv(out)
    print("round trip identical:", apps2 == apps)
