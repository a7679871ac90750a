"""
Windows, readiness and priority
===============================

Tasks reach the scheduler in windows: every 15 cycles at most 1,000 tasks
from at most 40 applications. A delivered task can only be placed once all
of its predecessors have finished, and ready tasks are ordered by how many
successors they unlock.
"""

import numpy as np

from edgesim import GenConfig, GraphIndex, WindowConfig, WorkloadCursor, filter_ready, next_window, prioritize
from edgesim import generate_applications
from edgesim.engine import deliver
from edgesim.model import SimState

apps = generate_applications(GenConfig(num_apps=60, seed=3), np.random.default_rng(3))
cursor = WorkloadCursor(apps)
cfg = WindowConfig(interval_cycles=15, max_tasks=1000, max_apps=40)
rng = np.random.default_rng(0)

# %%
# Off-interval cycles deliver nothing; the backlog drains window by window.
for cycle in range(0, 61):
    batch = next_window(cursor, cfg, cycle, rng)
    if batch:
        print(f"cycle {cycle:3d}: {len(batch):4d} tasks from {len({t.app_id for t in batch}):2d} apps,"
              f" {cursor.pending_tasks()} still pending")

# %%
# Readiness on a fresh state: only roots can be placed.
cursor = WorkloadCursor(apps[:3])
state = SimState()
batch = next_window(cursor, cfg, 0, rng)
deliver(state, batch, {a.app_id: a for a in apps})
ready = filter_ready(state, list(state.remaining_tasks.values()))
print(len(state.remaining_tasks), "delivered,", len(ready), "ready")

# %%
# Priority: out-degree first, then task id.
index = GraphIndex(apps[:3])
for t in prioritize(ready, index)[:5]:
    print(f"  {t.task_id} unlocks {index.score(t.task_id)} tasks")
