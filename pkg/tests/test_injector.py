from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from rtosfi.harness import build_system
from rtosfi.image import KernelImage
from rtosfi.injector import EmptyWindow, FaultSpec, arm, fire, sample_fault_space
from rtosfi.targets import OffsetOutOfRange, find_target


def bit_diff(a, b):
    return len(KernelImage.diff(a, b))


def started(system):
    system.run(0)
    return system


def test_transient_scheduler_running(system, catalog):
    k = started(system)
    assert k.read("xSchedulerRunning") == 1
    t = find_target(catalog, "xSchedulerRunning")
    rec = fire(arm(FaultSpec(t.name, 0, 0, "transient", (1, 0)), t), k)
    assert k.read("xSchedulerRunning") == 0
    assert (rec.pre_bit, rec.post_bit) == (1, 0)
    # transient: a later write replaces the corrupted value
    k.write("xSchedulerRunning", 1)
    assert k.read("xSchedulerRunning") == 1


def test_permanent_priority_bit(system, catalog):
    k = started(system)
    t = find_target(catalog, "currentTCB.uxPriority")
    cur = k.read("pxCurrentTCB")
    before = k.image.read32(cur + t.field_offset)
    rec = fire(arm(FaultSpec(t.name, 0, 6, "permanent", (1, 0)), t), k)
    assert rec.offset == cur + t.field_offset
    assert k.image.read32(rec.offset) == before | 0x40
    k.image.write32(rec.offset, 2)
    assert k.image.read32(rec.offset) == 2 | 0x40


def test_permanent_explicit_stuck_value(system, catalog):
    k = started(system)
    t = find_target(catalog, "xSchedulerRunning")
    snap = k.image.snapshot()
    rec = fire(arm(FaultSpec(t.name, 0, 0, "permanent", (1, 0), stuck_value=1), t), k)
    assert (rec.pre_bit, rec.post_bit) == (1, 1)
    assert bit_diff(snap, k.image.snapshot()) == 0
    k.write("xSchedulerRunning", 0)
    assert k.read("xSchedulerRunning") == 1


@given(st.data())
@settings(max_examples=60, deadline=None)
def test_exactly_one_bit_changes(catalog, data):
    k = started(build_system())
    t = data.draw(st.sampled_from(catalog))
    ft = data.draw(st.sampled_from(["transient", "permanent"]))
    spec = FaultSpec(t.name, data.draw(st.integers(0, t.size - 1)),
                     data.draw(st.integers(0, 7)), ft, (1, 0))
    snap = k.image.snapshot()
    rec = fire(arm(spec, t), k)
    assert bit_diff(snap, k.image.snapshot()) == 1
    assert rec.pre_bit != rec.post_bit


def test_arm_checks(catalog):
    t = find_target(catalog, "xTickCount")
    with pytest.raises(OffsetOutOfRange):
        arm(FaultSpec(t.name, 4, 0, "transient", (1, 0)), t)
    with pytest.raises(ValueError):
        arm(FaultSpec("xNumOfOverflows", 0, 0, "transient", (1, 0)), t)


def test_spec_validation():
    with pytest.raises(ValueError):
        FaultSpec("x", 0, 0, "intermittent", (1, 0))
    with pytest.raises(ValueError):
        FaultSpec("x", 0, 0, "permanent", (1, 0), stuck_value=2)
    assert FaultSpec.null().is_null


def test_trigger_fires_during_run(catalog, golden):
    k = build_system()
    t = find_target(catalog, "xTickCount")
    trig = arm(FaultSpec(t.name, 0, 3, "transient", (2, 2)), t)
    trig.install(k)
    k.run(1000)
    assert trig.record is not None
    assert trig.record.applied_at == (2, 2)


WINDOW = [(0, 1), (1, 0), (1, 2), (2, 0)]


def test_sampling_sizes(catalog):
    specs = sample_fault_space(catalog, 666, WINDOW, seed=1)
    assert len(specs) == 31302
    assert Counter(s.target for s in specs) == {t.name: 666 for t in catalog}


def test_sampling_deterministic(catalog):
    a = sample_fault_space(catalog, 20, WINDOW, seed=5, fault_type="permanent")
    b = sample_fault_space(catalog, 20, WINDOW, seed=5, fault_type="permanent")
    c = sample_fault_space(catalog, 20, WINDOW, seed=6, fault_type="permanent")
    assert a == b and a != c
    d = sample_fault_space(catalog, 20, WINDOW, seed=5, fault_type="transient")
    assert [(s.byte_off, s.bit_off, s.t_inject) for s in a] != \
        [(s.byte_off, s.bit_off, s.t_inject) for s in d]


@given(st.integers(0, 2**32), st.integers(1, 5))
@settings(max_examples=30)
def test_sampled_specs_in_range(catalog, seed, n):
    by_name = {t.name: t for t in catalog}
    for s in sample_fault_space(catalog, n, WINDOW, seed):
        assert 0 <= s.byte_off < by_name[s.target].size
        assert 0 <= s.bit_off < 8
        assert s.t_inject in WINDOW


def test_sampling_uniform_bits(catalog):
    t = find_target(catalog, "xTickCount")
    specs = sample_fault_space([t], 100_000, WINDOW, seed=3)
    counts = Counter((s.byte_off, s.bit_off) for s in specs)
    assert len(counts) == 32
    for c in counts.values():
        assert 0.025 <= c / 100_000 <= 0.0375
    when = Counter(s.t_inject for s in specs)
    for c in when.values():
        assert abs(c / 100_000 - 0.25) < 0.01


def test_sampling_errors(catalog):
    with pytest.raises(EmptyWindow):
        sample_fault_space(catalog, 3, [], seed=0)
    with pytest.raises(ValueError):
        sample_fault_space(catalog, 0, WINDOW, seed=0)
