"""Small builders shared by the test modules."""

from edgesim.model import AppProgress, ApplicationSpec, CoreState, DeviceSpec, SimState, TaskSpec, Tier


def task(tid, app="a0", load=1, preds=(), safety=0, size=1.0):
    return TaskSpec(tid, app, load, size, size, safety, frozenset(preds))


def app(app_id, tasks, deadline=1000):
    return ApplicationSpec(app_id, tuple(tasks), deadline)


def chain_app(app_id, n, load=1):
    ids = [f"{app_id}t{i:02d}" for i in range(n)]
    return app(app_id, [task(ids[i], app_id, load, [ids[i - 1]] if i else []) for i in range(n)])


def device(device_id="iot0000", tier=Tier.IOT, cores=1, speed=1, capacity=5, battery=40.0,
           active=2.0, idle=0.2, safety=3, speeds=None):
    speeds = speeds or [speed] * cores
    return DeviceSpec(device_id, tier, [CoreState(s, capacity) for s in speeds],
                      battery, active, idle, safety)


def cloud(cores=2, speed=4, active=10.0, safety=3):
    return DeviceSpec("cloud0", Tier.CLOUD, [CoreState(speed, None) for _ in range(cores)],
                      None, active, 0.0, safety)


def state_with(devices=(), remaining=(), finished=(), track_apps=False):
    """A state with tasks already delivered; ``track_apps`` also opens their app records."""
    s = SimState()
    for d in devices:
        s.add_device(d)
    for t in remaining:
        s.delivered[t.task_id] = t
        s.remaining_tasks[t.task_id] = t
    for t in finished:
        s.delivered[t.task_id] = t
        s.finished_tasks.add(t.task_id)
    if track_apps:
        for t in list(remaining) + list(finished):
            prog = s.active_apps.setdefault(t.app_id, AppProgress(t.app_id, 0, 1000, 0))
            prog.num_tasks += 1
            prog.delivered += 1
        for t in finished:
            s.active_apps[t.app_id].finished += 1
    return s
