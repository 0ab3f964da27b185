import dataclasses
import io

import pytest
from hypothesis import given, strategies as st

from rtosfi.harness import (
    OUTCOMES, GoldenFailure, GoldenProfile, Thresholds, build_system, classify, emit_run_log,
    execute_run, golden_run, injection_window, parse_run_log, replay_run_log,
)
from rtosfi.injector import FaultSpec
from rtosfi.targets import ValidityVerdict

GOLDEN_TICKS = 47
WINDOW = [(0, 1), (0, 3), (1, 0), (1, 2), (2, 0), (2, 2), (3, 0), (3, 2), (4, 0), (4, 2)]


# -- classification ---------------------------------------------------------------

@pytest.mark.parametrize("ticks,match,expected", [
    (1000, True, "BENIGN"),
    (1040, True, "BENIGN"),
    (1050, True, "BENIGN"),
    (1051, True, "DELAY"),
    (1060, True, "DELAY"),
    (1040, False, "SDC"),
    (1060, False, "SDC_DELAY"),
])
def test_classify_matrix(ticks, match, expected):
    assert classify(ticks, match, False, False, None, 1000) == expected


def test_classify_precedence():
    bad = ValidityVerdict(False, "list empty")
    assert classify(10, None, True, True, bad, 1000) == "INVALID"
    assert classify(10, None, True, True, True, 1000) == "CRASH"
    assert classify(3001, None, False, True, True, 1000) == "HANG"
    assert classify(1000, True, False, False, ValidityVerdict(True), 1000) == "BENIGN"


def test_classify_accepts_profile(golden):
    assert classify(GOLDEN_TICKS, True, False, False, None, golden) == "BENIGN"


@given(st.integers(0, 10_000), st.sampled_from([True, False, None]), st.booleans(),
       st.booleans(), st.sampled_from([True, False, None]), st.integers(1, 5000))
def test_classify_total(ticks, match, panicked, timed_out, valid, golden_ticks):
    out = classify(ticks, match, panicked, timed_out, valid, golden_ticks)
    assert out in OUTCOMES
    if valid is False:
        assert out == "INVALID"
    elif panicked:
        assert out == "CRASH"


@given(st.integers(1, 5000), st.integers(0, 20_000), st.integers(0, 20_000), st.booleans())
def test_lateness_monotone(golden_ticks, a, b, match):
    lo, hi = sorted((a, b))
    late = {"DELAY", "SDC_DELAY"}
    if classify(lo, match, False, False, True, golden_ticks) in late:
        assert classify(hi, match, False, False, True, golden_ticks) in late


def test_thresholds():
    th = Thresholds()
    assert th.hang_limit(GOLDEN_TICKS) == 141
    assert not th.is_late(1050, 1000) and th.is_late(1051, 1000)
    with pytest.raises(ValueError):
        Thresholds(delay_fraction=0.0)
    with pytest.raises(ValueError):
        Thresholds(delay_fraction=4.0, hang_multiplier=3.0)


# -- golden profile -------------------------------------------------------------

def test_golden_profile(golden):
    assert golden.total_ticks == GOLDEN_TICKS
    assert set(golden.per_task) == {"SHA", "FFT", "CUBIC", "HUFF_DEC", "ADPCM_ENC"}
    assert [t for t, _ in golden.timeline] == list(range(GOLDEN_TICKS))
    tick_starts = [i for i in golden.instants if i[1] == 0]
    assert tick_starts == [(t, 0) for t in range(1, GOLDEN_TICKS)]
    for tick, k in golden.instants:
        assert k <= dict(golden.timeline)[tick]
    assert list(golden.instants) == sorted(set(golden.instants))


def test_golden_deterministic(golden):
    assert golden_run().to_text() == golden.to_text()


def test_golden_text_round_trip(golden):
    text = golden.to_text()
    again = GoldenProfile.from_text(text)
    assert again == golden
    assert again.to_text() == text


def test_golden_failure():
    with pytest.raises(GoldenFailure):
        golden_run(max_ticks=10)


def test_window(golden):
    assert injection_window(golden) == WINDOW
    assert injection_window(golden, 1.0) == list(golden.instants)
    assert len(injection_window(golden, 1e-9)) == 1
    with pytest.raises(ValueError):
        injection_window(golden, 0)


def test_window_skips_context_switch(golden):
    # no instant may sit right after a switch-out event
    k = build_system()
    k.run(1000)
    counts = {}
    after_out = set()
    for tick, kind, _, _ in k.events:
        counts[tick] = counts.get(tick, 0) + 1
        if kind == "task_switch_out":
            after_out.add((tick, counts[tick]))
    assert not after_out & set(golden.instants)


# -- runs -------------------------------------------------------------------------

def test_null_fault_is_benign(golden):
    for fault in (None, FaultSpec.null()):
        run = execute_run(fault, golden)
        assert run.outcome == "BENIGN"
        assert run.run_ticks == golden.total_ticks
        assert run.outputs_match and run.injection is None


def test_crash_on_current_tcb(golden, catalog):
    run = execute_run(FaultSpec("pxCurrentTCB", 3, 7, "transient", (1, 0)), golden, catalog=catalog)
    assert run.outcome == "CRASH"
    assert run.panic_reason == "invalid_handle"
    assert run.injection.applied_at == (1, 0)


def test_invalid_on_empty_list(golden, catalog):
    run = execute_run(FaultSpec("xSuspendedTaskList", 0, 0, "transient", (0, 1)), golden,
                      catalog=catalog)
    assert run.outcome == "INVALID" and not run.valid


def test_forced_stop(golden, catalog):
    th = Thresholds()
    run = execute_run(FaultSpec("uxTopReadyPriority", 0, 0, "transient", (1, 0)), golden, th,
                      catalog=catalog)
    assert run.outcome == "HANG" and run.timed_out
    assert run.run_ticks == th.hang_limit(golden.total_ticks) + 1


def test_missing_output_is_hang(golden):
    ghost = dataclasses.replace(golden, per_task={**golden.per_task, "GHOST": (1, 5)})
    run = execute_run(None, ghost)
    assert run.outcome == "HANG"
    assert run.missing == ("GHOST",)


# -- logs -------------------------------------------------------------------------

def log_of(run, spec=None):
    buf = io.StringIO()
    emit_run_log(run, buf, spec, seed=7)
    return buf.getvalue().splitlines()


@pytest.mark.parametrize("spec", [
    FaultSpec("pxCurrentTCB", 3, 7, "transient", (1, 0)),
    FaultSpec("xSuspendedTaskList", 0, 0, "transient", (0, 1)),
    FaultSpec("uxTopReadyPriority", 0, 0, "transient", (1, 0)),
    FaultSpec("currentTCB.uxPriority", 0, 6, "permanent", (2, 0), stuck_value=1),
    FaultSpec.null(),
], ids=lambda s: s.target)
def test_log_round_trip(golden, catalog, spec):
    run = execute_run(spec, golden, catalog=catalog, keep_events=True)
    lines = log_of(run, spec)
    assert lines[0].startswith("fault ") and "seed=7" in lines[0]
    result = [ln for ln in lines if ln.startswith("result ")]
    assert len(result) == 1
    doc = parse_run_log(lines)
    assert doc["fault"]["target"] == spec.target
    assert len(doc["events"]) == len(run.events)
    assert [e.format() for e in doc["events"]] == lines[len(lines) - len(run.events)
                                                       - (run.panic is not None):
                                                       len(lines) - (run.panic is not None)]
    assert replay_run_log(lines) == run.outcome
    if run.outcome == "CRASH":
        assert lines[-1].startswith("panic reason=")
        assert doc["panic"]["reason"] == run.panic_reason
    else:
        assert doc["panic"] is None


def test_log_injection_line(golden, catalog):
    spec = FaultSpec("xTickCount", 1, 2, "transient", (2, 0))
    run = execute_run(spec, golden, catalog=catalog)
    doc = parse_run_log(log_of(run))
    assert doc["injection"]["applied_at"] == "2:0"
    assert int(doc["injection"]["offset"], 16) == run.injection.offset
    assert doc["injection"]["pre_bit"] != doc["injection"]["post_bit"]
