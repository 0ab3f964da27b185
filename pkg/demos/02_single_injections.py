"""
One fault at a time
===================

Flip single bits in a few scheduler objects and see how each run ends.
"""

import io

from rtosfi import FaultSpec, build_system, emit_run_log, execute_run, gather_targets, golden_run

golden = golden_run()
catalog = gather_targets(build_system())

# corrupting the pointer to the running task is fatal at the next switch
run = execute_run(FaultSpec("pxCurrentTCB", 3, 7, "transient", (1, 0)), golden, catalog=catalog)
print("pxCurrentTCB      ->", run.outcome, run.panic_reason)

# an empty list is not live state: the hit is discarded as INVALID
run = execute_run(FaultSpec("xSuspendedTaskList", 0, 0, "transient", (0, 1)), golden,
                  catalog=catalog)
print("xSuspendedTaskList ->", run.outcome, run.injection.validity.reason)

# a wrong top-priority hint sends the scheduler looking at empty lists
run = execute_run(FaultSpec("uxTopReadyPriority", 0, 0, "transient", (1, 0)), golden,
                  catalog=catalog)
print("uxTopReadyPriority ->", run.outcome, "after", run.run_ticks, "ticks")

# a stuck bit in the running task's priority, forced to 1
spec = FaultSpec("currentTCB.uxPriority", 0, 6, "permanent", (2, 0), stuck_value=1)
run = execute_run(spec, golden, catalog=catalog, keep_events=True)
print("uxPriority bit 6   ->", run.outcome, run.panic_reason)

# every run can be written as a log and classified again from it
buf = io.StringIO()
emit_run_log(run, buf, spec)
print("\n".join(buf.getvalue().splitlines()[:3]))
