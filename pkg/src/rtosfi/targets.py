"""Injectable kernel objects and the rules that decide when a hit counts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

from .layout import L_NUM, SCHEDULER_LISTS, SCHEDULER_POINTERS, SCHEDULER_VARIABLES, TCB_FIELDS

__all__ = [
    "CATEGORIES",
    "FAULT_TYPES",
    "InjectionTarget",
    "ValidityVerdict",
    "OffsetOutOfRange",
    "UnknownTarget",
    "gather_targets",
    "check_validity",
    "resolve_injection_point",
    "find_target",
    "fault_space_size",
    "enumerate_fault_space",
]

CATEGORIES = ("variable", "pointer", "list", "tcb_field")
FAULT_TYPES = ("transient", "permanent")

MUTEX_FIELDS = frozenset({"uxMutexesHeld", "uxBasePriority"})
NOTIFY_FIELDS = frozenset({"ucNotifyState", "ulNotifiedValue"})


class OffsetOutOfRange(ValueError):
    pass


class UnknownTarget(KeyError):
    def __init__(self, name, valid):
        super().__init__(name)
        self.name = name
        self.valid = list(valid)

    def __str__(self):
        return f"unknown target {self.name!r}; valid targets: {', '.join(self.valid)}"


@dataclass(frozen=True)
class InjectionTarget:
    """One entry of the catalog.

    TCB fields carry ``field_offset``; their address is taken from
    ``pxCurrentTCB`` when the fault fires, and ``base`` only records where
    the field sat at gathering time.
    """

    name: str
    category: str
    base: int
    size: int
    hierarchy: str
    validity: str = "always"
    field_offset: Optional[int] = None


@dataclass(frozen=True)
class ValidityVerdict:
    valid: bool
    reason: str = ""


def gather_targets(kernel) -> list[InjectionTarget]:
    """Walk the scheduler objects of ``kernel`` and return the 47-entry catalog."""
    img = kernel.image
    out = []
    for name in SCHEDULER_VARIABLES:
        rec = img.objects[name]
        out.append(InjectionTarget(name, "variable", rec.base, rec.size,
                                   "SchedulerState/variables"))
    for name in SCHEDULER_POINTERS:
        rec = img.objects[name]
        out.append(InjectionTarget(name, "pointer", rec.base, rec.size,
                                   "SchedulerState/pointers"))
    for p in range(kernel.config.max_priorities):
        rec = img.objects[f"pxReadyTasksLists[{p}]"]
        out.append(InjectionTarget(rec.name, "list", rec.base, rec.size,
                                   "SchedulerState/lists/pxReadyTasksLists", "nonempty_list"))
    for name in SCHEDULER_LISTS:
        rec = img.objects[name]
        out.append(InjectionTarget(name, "list", rec.base, rec.size,
                                   "SchedulerState/lists", "nonempty_list"))
    cur = kernel.read("pxCurrentTCB")
    for fname, off, size in TCB_FIELDS:
        if fname in MUTEX_FIELDS:
            rule = "used_mutex"
        elif fname in NOTIFY_FIELDS:
            rule = "used_notify"
        else:
            rule = "always"
        out.append(InjectionTarget(f"currentTCB.{fname}", "tcb_field", cur + off, size,
                                   f"pxCurrentTCB/{fname}", rule, off))
    return out


def find_target(catalog: Sequence[InjectionTarget], name: str) -> InjectionTarget:
    for t in catalog:
        if t.name == name:
            return t
    raise UnknownTarget(name, [t.name for t in catalog])


def _current_tcb(kernel) -> int:
    return kernel.read("pxCurrentTCB")


def check_validity(target: InjectionTarget, kernel) -> ValidityVerdict:
    """Evaluate the target's predicate against the kernel as it is right now."""
    rule = target.validity
    if rule == "always":
        return ValidityVerdict(True, "always live")
    if rule == "nonempty_list":
        n = kernel.image.read32(target.base + L_NUM)
        if n == 0:
            return ValidityVerdict(False, "list empty")
        return ValidityVerdict(True, f"{n} items")
    tcb = _current_tcb(kernel)
    if rule == "used_mutex":
        if tcb in kernel.used_mutex:
            return ValidityVerdict(True, "task has used a mutex")
        return ValidityVerdict(False, "task never used a mutex")
    if rule == "used_notify":
        if tcb in kernel.used_notify:
            return ValidityVerdict(True, "task has used notifications")
        return ValidityVerdict(False, "task never used notifications")
    raise ValueError(f"unknown validity rule {rule!r}")


def resolve_injection_point(target: InjectionTarget, byte_off: int, bit_off: int,
                            kernel=None) -> tuple[int, int]:
    """Absolute (image offset, bit) for a byte/bit inside ``target``."""
    if not 0 <= byte_off < target.size:
        raise OffsetOutOfRange(f"byte {byte_off} outside {target.name} (size {target.size})")
    if not 0 <= bit_off < 8:
        raise OffsetOutOfRange(f"bit {bit_off} outside 0..7")
    base = target.base
    if target.field_offset is not None and kernel is not None:
        tcb = _current_tcb(kernel)
        if kernel.image.is_valid(tcb, "tcb"):
            base = tcb + target.field_offset
    return base + byte_off, bit_off


def fault_space_size(catalog: Sequence[InjectionTarget],
                     fault_types: Sequence[str] = FAULT_TYPES) -> int:
    return sum(t.size * 8 for t in catalog) * len(fault_types)


def enumerate_fault_space(catalog: Sequence[InjectionTarget],
                          fault_types: Sequence[str] = FAULT_TYPES
                          ) -> Iterator[tuple[str, int, int, str]]:
    """Every (target, byte, bit, fault type) location, time excluded."""
    for t in catalog:
        for byte in range(t.size):
            for bit in range(8):
                for ft in fault_types:
                    yield t.name, byte, bit, ft
