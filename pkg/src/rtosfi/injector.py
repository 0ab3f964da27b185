"""Fault planning and application.

A fault is armed on a kernel as a trigger at a simulated instant
``(tick, k)``: it fires once ``k`` kernel events have been emitted during
``tick`` (``k = 0`` is the start of the tick).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .targets import (
    FAULT_TYPES, InjectionTarget, ValidityVerdict, check_validity, resolve_injection_point,
)

__all__ = [
    "FaultSpec",
    "InjectionRecord",
    "Trigger",
    "EmptyWindow",
    "sample_fault_space",
    "arm",
    "fire",
]


class EmptyWindow(ValueError):
    pass


@dataclass(frozen=True)
class FaultSpec:
    target: str
    byte_off: int
    bit_off: int
    fault_type: str
    t_inject: tuple[int, int]
    stuck_value: Optional[int] = None  # permanent only; None means "complement of the bit at fire time"

    def __post_init__(self):
        if self.fault_type not in FAULT_TYPES + ("none",):
            raise ValueError(f"unknown fault type {self.fault_type!r}")
        if self.stuck_value not in (None, 0, 1):
            raise ValueError("stuck_value must be 0, 1 or None")

    @classmethod
    def null(cls, t_inject=(0, 0)) -> "FaultSpec":
        """A spec that injects nothing (soundness checks)."""
        return cls("none", 0, 0, "none", tuple(t_inject))

    @property
    def is_null(self) -> bool:
        return self.fault_type == "none"


@dataclass(frozen=True)
class InjectionRecord:
    spec: FaultSpec
    applied_at: tuple[int, int]
    offset: int
    bit: int
    pre_bit: int
    post_bit: int
    validity: ValidityVerdict


def sample_fault_space(catalog: Sequence[InjectionTarget], n_per_location: int,
                       window: Sequence[tuple[int, int]], seed: int,
                       fault_type: str = "transient",
                       stuck_value: Optional[int] = None) -> list[FaultSpec]:
    """``n_per_location`` specs per target with uniform byte, bit and instant.

    Each fault type draws from its own stream so the two campaigns of a seed
    do not share samples.
    """
    if n_per_location < 1:
        raise ValueError("n_per_location must be at least 1")
    if fault_type not in FAULT_TYPES:
        raise ValueError(f"unknown fault type {fault_type!r}")
    points = [tuple(p) for p in window]
    if not points:
        raise EmptyWindow("injection window contains no instants")
    rng = np.random.default_rng([seed, FAULT_TYPES.index(fault_type)])
    specs = []
    for target in catalog:
        byte = rng.integers(0, target.size, n_per_location)
        bit = rng.integers(0, 8, n_per_location)
        when = rng.integers(0, len(points), n_per_location)
        for b, k, w in zip(byte.tolist(), bit.tolist(), when.tolist()):
            specs.append(FaultSpec(target.name, b, k, fault_type, points[w], stuck_value))
    return specs


class Trigger:
    """A fault waiting for its instant; holds the record once fired."""

    def __init__(self, spec: FaultSpec, target: InjectionTarget):
        self.spec = spec
        self.target = target
        self.record: Optional[InjectionRecord] = None

    def install(self, kernel) -> None:
        tick, k = self.spec.t_inject
        kernel.trigger = (tick, k, self._callback)

    def _callback(self, kernel):
        fire(self, kernel)


def arm(spec: FaultSpec, target: InjectionTarget) -> Trigger:
    if spec.target != target.name:
        raise ValueError(f"spec for {spec.target!r} armed on {target.name!r}")
    # reject bad offsets now rather than mid-run
    resolve_injection_point(target, spec.byte_off, spec.bit_off)
    return Trigger(spec, target)


def fire(trigger: Trigger, kernel) -> InjectionRecord:
    """Apply the fault to the kernel image at the current instant."""
    spec = trigger.spec
    validity = check_validity(trigger.target, kernel)
    offset, bit = resolve_injection_point(trigger.target, spec.byte_off, spec.bit_off, kernel)
    img = kernel.image
    pre = (img.read8(offset) >> bit) & 1
    if spec.fault_type == "transient":
        img.flip_bit(offset, bit)
    else:
        value = 1 - pre if spec.stuck_value is None else spec.stuck_value
        img.install_stuck_mask(offset, bit, value)
    post = (img.read8(offset) >> bit) & 1
    record = InjectionRecord(spec, (spec.t_inject[0], kernel.tick_events), offset, bit,
                             pre, post, validity)
    trigger.record = record
    return record
