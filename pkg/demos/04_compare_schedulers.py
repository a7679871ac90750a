"""
Comparing the baseline schedulers
=================================

Three policies ship with the package: earliest estimated finish, minimum
active energy, and a uniform random choice among slots that would accept the
task. They all see the same workload and seeds here.
"""

from edgesim import ChurnConfig, EngineConfig, Environment, GenConfig, energy_total, generate
from edgesim.scheduling import AgentPool

gen = GenConfig(num_apps=60, num_iot=10, num_mec=3, seed=5)

print(f"{'scheduler':>11} {'cycles':>7} {'mean makespan':>14} {'energy Wh':>10} {'deadlines met':>14}")
for name in ("greedy_eft", "min_energy", "random"):
    # Devices carry mutable state, so each run regenerates its own copy.
    apps, devices = generate(gen)
    env = Environment(apps, devices, EngineConfig(seed=5, churn=ChurnConfig(enabled=False)),
                      pool=AgentPool.build(name, 24, 5), gen_cfg=gen)
    reports = env.run(20_000)
    spans = [a.makespan for a in env.metrics.apps.values()]
    met = sum(a.deadline_met for a in env.metrics.apps.values())
    print(f"{name:>11} {len(reports):7d} {sum(spans) / len(spans):14.1f} "
          f"{energy_total(env.metrics):10.5f} {met:8d}/{len(spans)}")
