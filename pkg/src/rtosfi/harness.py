"""Golden runs, faulted runs and outcome classification."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

from .injector import FaultSpec, InjectionRecord, arm
from .kernel import KernelConfig, KernelEvent, KernelPanic, kernel_init
from .targets import InjectionTarget, ValidityVerdict, find_target, gather_targets
from .workloads import (
    DEFAULT_WORKLOADS, MissingOutput, WorkloadOutput, WorkloadOverrun, WorkloadSpec,
    task_entry, verify_outputs,
)

__all__ = [
    "OUTCOMES",
    "Thresholds",
    "GoldenProfile",
    "GoldenFailure",
    "RunResult",
    "build_system",
    "golden_run",
    "execute_run",
    "classify",
    "injection_window",
    "emit_run_log",
    "parse_run_log",
    "replay_run_log",
]

OUTCOMES = ("BENIGN", "DELAY", "SDC", "SDC_DELAY", "HANG", "CRASH", "INVALID")


class GoldenFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Thresholds:
    delay_fraction: float = 0.05
    hang_multiplier: float = 3.0

    def __post_init__(self):
        if not 0 < self.delay_fraction < self.hang_multiplier:
            raise ValueError("need 0 < delay_fraction < hang_multiplier")

    def hang_limit(self, golden_ticks: int) -> int:
        return int(self.hang_multiplier * golden_ticks)

    def is_late(self, run_ticks: int, golden_ticks: int) -> bool:
        return run_ticks > (1 + self.delay_fraction) * golden_ticks


@dataclass(frozen=True)
class GoldenProfile:
    total_ticks: int
    per_task: dict  # id -> (digest, completion_tick)
    event_digest: str
    timeline: tuple  # (tick, events emitted in that tick) for every tick
    instants: tuple  # (tick, k) points where a fault may fire, in time order
    kernel_config: KernelConfig = KernelConfig()
    workloads: tuple = DEFAULT_WORKLOADS
    live: bool = False

    @property
    def outputs(self) -> dict:
        return {i: WorkloadOutput(i, d, c) for i, (d, c) in self.per_task.items()}

    def to_text(self) -> str:
        """Stable serialization; identical profiles give identical bytes."""
        doc = {
            "total_ticks": self.total_ticks,
            "event_digest": self.event_digest,
            "per_task": {i: {"digest": f"{d:016x}", "completion_tick": c}
                         for i, (d, c) in sorted(self.per_task.items())},
            "timeline": [list(p) for p in self.timeline],
            "instants": [list(p) for p in self.instants],
            "kernel": {
                "tick_rate_hz": self.kernel_config.tick_rate_hz,
                "max_priorities": self.kernel_config.max_priorities,
                "image_capacity": self.kernel_config.image_capacity,
                "traversal_budget_factor": self.kernel_config.traversal_budget_factor,
            },
            "workloads": [[w.id, w.priority, w.yield_stride, w.stack_words]
                          for w in self.workloads],
            "live": self.live,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GoldenProfile":
        doc = json.loads(text)
        per_task = {i: (int(v["digest"], 16), v["completion_tick"])
                    for i, v in doc["per_task"].items()}
        return cls(
            total_ticks=doc["total_ticks"],
            per_task=per_task,
            event_digest=doc["event_digest"],
            timeline=tuple(tuple(p) for p in doc["timeline"]),
            instants=tuple(tuple(p) for p in doc["instants"]),
            kernel_config=KernelConfig(**doc["kernel"]),
            workloads=tuple(WorkloadSpec(*w) for w in doc["workloads"]),
            live=doc["live"],
        )


@dataclass
class RunResult:
    outcome: str
    run_ticks: int
    outputs: dict
    panic: Optional[KernelPanic]
    injection: Optional[InjectionRecord]
    golden_ticks: int
    timed_out: bool = False
    outputs_match: Optional[bool] = None
    missing: tuple = ()
    events: list = field(default_factory=list)

    @property
    def panic_reason(self) -> str:
        return self.panic.reason if self.panic else ""

    @property
    def valid(self) -> bool:
        return self.injection is None or self.injection.validity.valid


def build_system(kernel_config: KernelConfig = KernelConfig(),
                 workloads: Sequence[WorkloadSpec] = DEFAULT_WORKLOADS, live: bool = False):
    """Kernel with the mutex and the workload tasks created, scheduler not started."""
    k = kernel_init(kernel_config)
    k.mutex = k.create_mutex()
    for spec in workloads:
        k.task_create(spec.id, spec.priority, task_entry(spec, live), spec.stack_words)
    return k


def _event_digest(events) -> str:
    h = hashlib.sha256()
    for e in events:
        h.update(KernelEvent(*e).format().encode())
        h.update(b"\n")
    return h.hexdigest()


def golden_run(kernel_config: KernelConfig = KernelConfig(),
               workloads: Sequence[WorkloadSpec] = DEFAULT_WORKLOADS,
               live: bool = False, max_ticks: int = 100_000) -> GoldenProfile:
    """Fault-free run establishing timing, outputs and the event timeline."""
    workloads = tuple(workloads)
    k = build_system(kernel_config, workloads, live)
    try:
        finished = k.run(max_ticks)
    except KernelPanic as exc:
        raise GoldenFailure(f"golden run panicked: {exc}") from exc
    if not finished:
        raise GoldenFailure(f"golden run did not shut down within {max_ticks} ticks")
    missing = [w.id for w in workloads if w.id not in k.outputs]
    if missing:
        raise GoldenFailure(f"golden run lost outputs of {missing}")
    counts = [0] * k.now
    instants = []
    for tick, kind, _, _ in k.events:
        counts[tick] += 1
        if kind != "task_switch_out":
            instants.append((tick, counts[tick]))
    instants.extend((t, 0) for t in range(1, k.now))
    instants.sort()
    per_task = {w.id: (k.outputs[w.id].digest, k.outputs[w.id].completion_tick)
                for w in workloads}
    return GoldenProfile(
        total_ticks=k.now,
        per_task=per_task,
        event_digest=_event_digest(k.events),
        timeline=tuple(enumerate(counts)),
        instants=tuple(instants),
        kernel_config=kernel_config,
        workloads=workloads,
        live=live,
    )


def injection_window(golden: GoldenProfile, fraction: float = 0.1) -> list[tuple[int, int]]:
    """Leading ``fraction`` of the golden injection instants ``(tick, k)``.

    An instant is a tick start (after the scheduler has started) or the
    moment after the ``k``-th event of a tick.  Instants that fall between a
    ``task_switch_out`` and the following selection are left out: that gap
    is part of one indivisible context switch.
    """
    if not 0 < fraction <= 1:
        raise ValueError("window fraction must lie in (0, 1]")
    points = list(golden.instants)
    cut = max(1, int(round(fraction * len(points))))
    return points[:cut]


def classify(run_ticks: int, outputs_match: Optional[bool], panicked: bool, timed_out: bool,
             validity, golden, thresholds: Thresholds = Thresholds()) -> str:
    """Map one finished run to exactly one outcome.

    ``validity`` may be a ValidityVerdict, a bool or None (no injection).
    ``golden`` is a GoldenProfile or the golden tick count.
    """
    valid = validity if isinstance(validity, bool) or validity is None else validity.valid
    if valid is False:
        return "INVALID"
    if panicked:
        return "CRASH"
    if timed_out:
        return "HANG"
    golden_ticks = golden if isinstance(golden, int) else golden.total_ticks
    late = thresholds.is_late(run_ticks, golden_ticks)
    if outputs_match:
        return "DELAY" if late else "BENIGN"
    return "SDC_DELAY" if late else "SDC"


def execute_run(fault: Optional[FaultSpec], golden: GoldenProfile,
                thresholds: Thresholds = Thresholds(),
                catalog: Optional[Sequence[InjectionTarget]] = None,
                keep_events: bool = False) -> RunResult:
    """Run the system once with ``fault`` armed and classify the result.

    A panic ends the run as CRASH.  Exceeding the hang limit forces a stop
    (HANG); so does a shutdown that leaves a workload without output.
    """
    k = build_system(golden.kernel_config, golden.workloads, golden.live)
    trigger = None
    if fault is not None and not fault.is_null:
        if catalog is None:
            catalog = gather_targets(k)
        trigger = arm(fault, find_target(catalog, fault.target))
        trigger.install(k)
    limit = thresholds.hang_limit(golden.total_ticks)
    panic = None
    timed_out = False
    try:
        finished = k.run(limit)
        timed_out = not finished
    except KernelPanic as exc:
        panic = exc
    except WorkloadOverrun:
        timed_out = True
    run_ticks = k.now
    match = None
    missing = ()
    if panic is None and not timed_out:
        try:
            verdict, _ = verify_outputs(k.outputs, golden.outputs)
            match = verdict == "match"
        except MissingOutput as exc:
            missing = tuple(exc.ids)
            timed_out = True
    record = trigger.record if trigger is not None else None
    outcome = classify(run_ticks, match, panic is not None, timed_out,
                       record.validity if record else None, golden, thresholds)
    return RunResult(outcome, run_ticks, dict(k.outputs), panic, record, golden.total_ticks,
                     timed_out, match, missing, k.events if keep_events else [])


# -- run logs -----------------------------------------------------------------

def _kv(pairs) -> str:
    return " ".join(f"{key}={val}" for key, val in pairs)


def emit_run_log(run: RunResult, out: TextIO, spec: Optional[FaultSpec] = None,
                 seed: int = 0) -> None:
    """Write header, injection, result, the event lines, and a panic trailer."""
    if spec is None and run.injection is not None:
        spec = run.injection.spec
    if spec is None:
        spec = FaultSpec.null()
    out.write("fault " + _kv([
        ("target", spec.target), ("byte", spec.byte_off), ("bit", spec.bit_off),
        ("type", spec.fault_type), ("at", f"{spec.t_inject[0]}:{spec.t_inject[1]}"),
        ("stuck", "" if spec.stuck_value is None else spec.stuck_value), ("seed", seed),
    ]) + "\n")
    rec = run.injection
    if rec is not None:
        out.write("injection " + _kv([
            ("applied_at", f"{rec.applied_at[0]}:{rec.applied_at[1]}"),
            ("offset", f"{rec.offset:#x}"), ("bit", rec.bit),
            ("pre_bit", rec.pre_bit), ("post_bit", rec.post_bit),
            ("valid", int(rec.validity.valid)),
            ("reason", rec.validity.reason.replace(" ", "_")),
        ]) + "\n")
    match = "" if run.outputs_match is None else int(run.outputs_match)
    out.write("result " + _kv([
        ("outcome", run.outcome), ("run_ticks", run.run_ticks),
        ("golden_ticks", run.golden_ticks), ("panicked", int(run.panic is not None)),
        ("timed_out", int(run.timed_out)), ("outputs_match", match),
        ("valid", int(run.valid)), ("missing", ",".join(run.missing)),
    ]) + "\n")
    for e in run.events:
        out.write(KernelEvent(*e).format() + "\n")
    if run.panic is not None:
        out.write("panic " + _kv([("reason", run.panic.reason), ("tick", run.panic.tick)])
                  + f" detail={run.panic.detail}\n")


def _parse_kv(rest: str) -> dict:
    return dict(part.split("=", 1) for part in rest.split())


def parse_run_log(lines: Iterable[str]) -> dict:
    """Inverse of :func:`emit_run_log` (events are returned as KernelEvent)."""
    doc = {"events": [], "panic": None, "injection": None}
    for line in lines:
        line = line.rstrip("\n")
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head in ("fault", "injection", "result"):
            doc[head] = _parse_kv(rest)
        elif head == "panic":
            fields, _, detail = rest.partition(" detail=")
            doc["panic"] = dict(_parse_kv(fields), detail=detail)
        else:
            doc["events"].append(KernelEvent.parse(line))
    return doc


def replay_run_log(lines: Iterable[str], thresholds: Thresholds = Thresholds()) -> str:
    """Re-classify a stored run from its log."""
    doc = parse_run_log(lines)
    res = doc["result"]
    match = None if res["outputs_match"] == "" else res["outputs_match"] == "1"
    return classify(int(res["run_ticks"]), match, res["panicked"] == "1",
                    res["timed_out"] == "1", ValidityVerdict(res["valid"] == "1"),
                    int(res["golden_ticks"]), thresholds)
