"""
A single simulation run
=======================

The environment advances in discrete cycles: deliver a window, let the
agents propose placements against a frozen snapshot, commit what fits,
execute one cycle, and apply churn.
"""

from edgesim import ChurnConfig, EngineConfig, Environment, EventLog, GenConfig, generate
from edgesim import energy_total, makespan
from edgesim.scheduling import AgentPool

gen = GenConfig(num_apps=40, num_iot=8, num_mec=3, seed=11)
apps, devices = generate(gen)
log = EventLog()
env = Environment(apps, devices, EngineConfig(seed=11, churn=ChurnConfig(event_probability=0.01)),
                  pool=AgentPool.build("greedy_eft", 24, 11), gen_cfg=gen, event_log=log)

# %%
# Run until every application has finished.
reports = env.run(5000)
print("cycles:", len(reports))
print("applications finished:", len(env.metrics.apps))
print("tasks scheduled:", sum(r.tasks_scheduled for r in reports),
      "rejected proposals:", sum(r.tasks_rejected for r in reports))

# %%
# Makespan runs from an application's first delivery to its last completion.
spans = sorted(makespan(env.metrics, a) for a in env.metrics.apps)
print("makespan min/median/max:", spans[0], spans[len(spans) // 2], spans[-1])
print("deadlines met:", sum(r.deadline_met for r in env.metrics.apps.values()), "of", len(spans))

# %%
# Energy by tier, in watt-hours.
by_tier = {}
for rec in env.metrics.devices.values():
    by_tier[rec.tier] = by_tier.get(rec.tier, 0.0) + rec.energy_wh
print({k: round(v, 6) for k, v in by_tier.items()}, "total", round(energy_total(env.metrics), 6))

# %%
# The event log traces every delivery, commit, start and completion.
first_app = apps[0].app_id
for cycle, kind, subject, detail in log.records:
    if subject.startswith(first_app) and kind in ("commit", "complete", "app_done"):
        print(cycle, kind, subject, detail)
