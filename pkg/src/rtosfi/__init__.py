"""Fault injection into the scheduler state of a simulated FreeRTOS-style kernel."""

from .image import KernelImage, ObjectRecord, StuckMask
from .kernel import KernelConfig, KernelEvent, KernelPanic, kernel_init
from .harness import (
    OUTCOMES, GoldenProfile, RunResult, Thresholds, build_system, classify, emit_run_log,
    execute_run, golden_run, injection_window,
)
from .injector import FaultSpec, InjectionRecord, sample_fault_space
from .targets import InjectionTarget, gather_targets
from .campaign import (
    CampaignConfig, CampaignReport, compute_sample_size, plan_campaign, run_campaign,
)

__all__ = [
    "KernelImage", "ObjectRecord", "StuckMask",
    "KernelConfig", "KernelEvent", "KernelPanic", "kernel_init",
    "OUTCOMES", "GoldenProfile", "RunResult", "Thresholds", "build_system", "classify",
    "emit_run_log", "execute_run", "golden_run", "injection_window",
    "FaultSpec", "InjectionRecord", "sample_fault_space",
    "InjectionTarget", "gather_targets",
    "CampaignConfig", "CampaignReport", "compute_sample_size", "plan_campaign", "run_campaign",
]

__version__ = "0.1.0"
