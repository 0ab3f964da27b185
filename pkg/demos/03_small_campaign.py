"""
A small campaign
================

Sample faults over a handful of targets, run them in parallel and summarise
the outcomes per target.  The full campaign is the same call with the
default configuration (``rtosfi campaign``).
"""

import numpy as np

from rtosfi import (
    CampaignConfig, build_system, gather_targets, golden_run, plan_campaign, run_campaign,
)
from rtosfi.harness import OUTCOMES

golden = golden_run()
catalog = gather_targets(build_system())

cfg = CampaignConfig(
    n_per_location=60,
    seed=11,
    workers=2,
    targets=("pxCurrentTCB", "pxDelayedTaskList", "xTickCount", "uxTopReadyPriority",
             "pxReadyTasksLists[1]", "currentTCB.uxPriority"),
    out_dir="demo_out",
)
plan = plan_campaign(cfg, catalog, golden)
print(len(plan), "runs planned")
report = run_campaign(plan, golden, cfg, catalog)
print("finished in %.1f s, results in demo_out/" % report.duration_s)

# outcome shares as a target x outcome matrix
for ft in report.fault_types:
    names = report.targets(ft)
    m = np.array([[report.counts(ft, t)[o] for o in OUTCOMES] for t in names], dtype=float)
    m /= m.sum(axis=1, keepdims=True)
    print(f"\n{ft}: " + " ".join(f"{o[:7]:>8}" for o in OUTCOMES))
    for name, row in zip(names, m):
        print(f"  {name:24}" + " ".join(f"{100 * v:8.1f}" for v in row))
