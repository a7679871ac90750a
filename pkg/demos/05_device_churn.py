"""
Device churn
============

Devices join and leave while the simulation runs. Each cycle an event fires
with a fixed probability; its direction is a fair coin, turned around when it
would make a fourth same-direction event in a row. Work on a departing
device goes back to the remaining ledger.
"""

from collections import Counter

from edgesim import ChurnConfig, ChurnDirective, EngineConfig, Environment, GenConfig, churn_sweep, generate
from edgesim.model import Tier
from edgesim.scheduling import AgentPool


def environment(p, seed, script=()):
    gen = GenConfig(num_apps=0, seed=seed)
    apps, devices = generate(gen)
    churn = ChurnConfig(event_probability=p, manual_script=script)
    return Environment(apps, devices, EngineConfig(seed=seed, churn=churn),
                       pool=AgentPool.build("greedy_eft", 1, seed), gen_cfg=gen)


# %%
# 10,000 cycles at the default probability, starting from 151 devices.
env = environment(0.0075, 1)
env.run(10_000, early_stop=False)
h = env.churn_history
print("events:", len(h.events), "added:", h.total_added, "removed:", h.total_removed)
print("tiers added:", Counter(e.tier.value for e in h.events if e.direction == "add"))
print("fleet size at the end:", len(env.state.devices))

# %%
# Scripted events replace the random draw on their cycle.
script = (ChurnDirective(5, "add", Tier.MEC), ChurnDirective(9, "remove"))
env = environment(0.0, 2, script)
env.run(12, early_stop=False)
print([(e.cycle, e.direction, e.device_id, e.manual) for e in env.churn_history.events])

# %%
# Average churn over a few probabilities and seeds.
for row in churn_sweep(environment, [0.01, 0.05, 0.10], 2000, range(1, 4)):
    print(f"p={row.probability:.2f}: +{row.mean_added:.1f} / -{row.mean_removed:.1f}")
