"""
The fault-free reference run
============================

Boot the simulated kernel with its five workloads, let it run to a clean
shutdown, and look at what the golden profile records.
"""

import numpy as np

from rtosfi import build_system, golden_run, injection_window

# a fresh system: idle task, timer daemon and the five workloads, not started
k = build_system()
print("tasks created:", k.read("uxCurrentNumberOfTasks"))

# the golden profile drives everything else: timing, outputs and instants
golden = golden_run()
print("golden run lasted", golden.total_ticks, "ticks")
for wid, (digest, tick) in golden.per_task.items():
    print(f"  {wid:10} done at tick {tick:3d}  digest {digest:016x}")

# events per tick; the busy early ticks are where the tasks first run
per_tick = np.array([n for _, n in golden.timeline])
print("events per tick:", per_tick[:12], "...")
print("mean %.2f, max %d" % (per_tick.mean(), per_tick.max()))

# faults are placed at the leading 10% of the golden instants
window = injection_window(golden)
print("injection window:", window)
