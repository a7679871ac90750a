"""
Metrics and plot-ready series
=============================

Every run keeps per-cycle, per-application and per-device records. They
export as CSV, and ``plot_data`` turns them into two- or three-column series
for any plotting tool.
"""

import os
import tempfile

import numpy as np

from edgesim import ChurnConfig, EngineConfig, Environment, GenConfig, export_metrics, generate, plot_data
from edgesim.metrics import load_metrics
from edgesim.scheduling import AgentPool

gen = GenConfig(num_apps=80, num_iot=12, num_mec=4, seed=9)
apps, devices = generate(gen)
env = Environment(apps, devices, EngineConfig(seed=9, churn=ChurnConfig(event_probability=0.02)),
                  pool=AgentPool.build("greedy_eft", 24, 9), gen_cfg=gen)
env.run(3000, early_stop=False)

# %%
# Per-cycle wall time: busy while work flows, near zero once the workload drains.
_, rows = plot_data(env.metrics, "iteration_time")
times = np.array([float(r[1]) for r in rows])
q = len(times) // 4
print("median cycle time by quarter (ms):",
      [round(float(np.median(times[i * q:(i + 1) * q])) * 1e3, 3) for i in range(4)])

# %%
# Live objects held by the simulator, a proxy for memory use.
_, rows = plot_data(env.metrics, "memory_proxy")
live = np.array([r[1] for r in rows])
print("live objects min/max:", live.min(), live.max())

# %%
# Makespan histogram.
header, rows = plot_data(env.metrics, "makespan_hist")
for left, right, count in rows:
    print(f"[{float(left):7.1f}, {float(right):7.1f}) {'#' * count}")

# %%
# Export and reload. Pass wall_time=False for byte-identical reruns.
with tempfile.TemporaryDirectory() as out:
    files = export_metrics(env.metrics, out, wall_time=False)
    print(sorted(os.path.basename(p) for p, _ in files.values()))
    back = load_metrics(out)
    print("cycles reloaded:", len(back.cycles), "apps reloaded:", len(back.apps))
