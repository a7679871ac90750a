"""
Writing a scheduler
===================

A scheduler receives an immutable snapshot and the ready tasks of the
applications it owns this cycle, and returns placement proposals. The engine
commits what fits and reports the outcome through ``feedback``.
"""

from edgesim import Assignment, ChurnConfig, EngineConfig, Environment, GenConfig, Scheduler, generate, register
from edgesim.scheduling import AgentPool


@register("mec_first")
class MecFirst(Scheduler):
    """Prefer the least loaded MEC core; fall back to anything that fits."""

    def propose(self, snap, tasks):
        taken = {}
        out = []
        for task in tasks:
            best = None
            for dev in snap.devices:
                if not dev.accepts(task):
                    continue
                for core in dev.cores:
                    used = taken.get((dev.device_id, core.index), 0)
                    if core.queue_capacity is not None and core.queue_len + used >= core.queue_capacity:
                        continue
                    key = (dev.tier.value != "MEC", core.backlog + used, dev.device_id, core.index)
                    if best is None or key < best:
                        best = key
            if best is not None:
                slot = (best[2], best[3])
                taken[slot] = taken.get(slot, 0) + 1
                out.append(Assignment(task.task_id, *slot))
        return out

    def feedback(self, cycle, outcomes, reward):
        self.last_reward = reward


gen = GenConfig(num_apps=30, num_iot=6, num_mec=2, seed=4)
apps, devices = generate(gen)
env = Environment(apps, devices, EngineConfig(seed=4, churn=ChurnConfig(enabled=False)),
                  pool=AgentPool.build("mec_first", 4, 4), gen_cfg=gen)
reports = env.run(10_000)
print("cycles:", len(reports), "apps finished:", len(env.metrics.apps))
print("rejected proposals:", sum(r.tasks_rejected for r in reports))
print("reward seen by agent 0 on its last cycle:", getattr(env.pool[0], "last_reward", None))
