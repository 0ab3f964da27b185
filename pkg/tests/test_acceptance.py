"""End-to-end acceptance checks, one test per criterion.

Each test is tagged with its criterion number; conftest prints a pass/fail
line per criterion at the end of the session.  The full default campaign is
run once per session (one to two minutes on a single core) and shared
by criteria 4, 5, 6, 9 and 10.
"""

import bisect
import math
import random
import time
from statistics import NormalDist

import pytest

from rtosfi.campaign import (
    CampaignConfig, compute_sample_size, percentages, plan_campaign, run_campaign,
)
from rtosfi.harness import OUTCOMES, build_system, injection_window
from rtosfi.image import KernelImage
from rtosfi.injector import FaultSpec, arm, fire
from rtosfi.kernel import kernel_init
from rtosfi.layout import ITEM_SIZE

FULL_SEED = 1


def criterion(number):
    def mark(fn):
        fn.criterion = number
        return fn
    return mark


def note(record_property, text):
    record_property("detail", text)
    print(text)


@pytest.fixture(scope="session")
def full_campaign(golden, catalog, tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    cfg = CampaignConfig(seed=FULL_SEED, workers=4, out_dir=str(out))
    plan = plan_campaign(cfg, catalog, golden)
    started = time.perf_counter()
    report = run_campaign(plan, golden, cfg, catalog)
    return plan, report, time.perf_counter() - started, out


@criterion(1)
def test_criterion_01_sample_size(record_property):
    # independent evaluation: exact normal quantile and the plain formula
    def numeric(conf, margin, p):
        z = NormalDist().inv_cdf((1 + conf) / 2)
        return z * z * p * (1 - p) / margin ** 2

    n99 = compute_sample_size(0.99, 0.05, 0.5, math.inf)
    n95 = compute_sample_size(0.95, 0.05, 0.5, math.inf)
    ref95 = numeric(0.95, 0.05, 0.5)
    note(record_property, f"n(0.99)={n99} n(0.95)={n95} (numeric {ref95:.2f})")
    assert n99 == 666
    assert n95 == 385 == math.ceil(ref95)


@criterion(2)
def test_criterion_02_null_soundness(golden, catalog, tmp_path, record_property):
    bytes_out = []
    started = time.perf_counter()
    window = injection_window(golden)
    plan = [FaultSpec.null(window[i % len(window)]) for i in range(1000)]
    for name in ("a", "b"):
        cfg = CampaignConfig(seed=5, workers=4, out_dir=str(tmp_path / name))
        report = run_campaign(plan, golden, cfg, catalog)
        pct = percentages(report.totals("none"))
        bytes_out.append((tmp_path / name / "runs.csv").read_bytes())
    elapsed = time.perf_counter() - started
    note(record_property, f"BENIGN {pct['BENIGN']:.2f}% over {len(report.rows)} runs, "
                          f"identical csv={bytes_out[0] == bytes_out[1]}, {elapsed:.1f} s for two")
    assert pct["BENIGN"] == 100.0
    assert bytes_out[0] == bytes_out[1]
    assert elapsed / 2 < 60


@criterion(3)
def test_criterion_03_current_tcb_crashes(golden, catalog, record_property):
    cfg = CampaignConfig(seed=3, workers=4, targets=("pxCurrentTCB",))
    plan = plan_campaign(cfg, catalog, golden)
    assert len(plan) == 2 * 666
    report = run_campaign(plan, golden, cfg, catalog)
    rates = {ft: report.rate(ft, "pxCurrentTCB", "CRASH") for ft in report.fault_types}
    note(record_property, " ".join(f"{ft} CRASH {100 * r:.2f}%" for ft, r in rates.items()))
    assert set(rates) == {"transient", "permanent"}
    assert all(r >= 0.90 for r in rates.values())


@criterion(4)
def test_criterion_04_category_order(full_campaign, record_property):
    _, report, _, _ = full_campaign
    parts = []
    ok = True
    for ft in ("transient", "permanent"):
        valid = {c: report.category_mean_rate(ft, c, exclude_invalid=True)
                 for c in ("pointer", "list", "tcb_field")}
        every = {c: report.category_mean_rate(ft, c) for c in ("pointer", "list", "tcb_field")}
        parts.append(f"{ft}: valid-run means " + "/".join(f"{100 * v:.2f}" for v in valid.values())
                     + " (all-run means " + "/".join(f"{100 * v:.2f}" for v in every.values())
                     + ")")
        ok &= valid["pointer"] > valid["list"] >= valid["tcb_field"]
    note(record_property, "pointer/list/tcb_field CRASH " + "; ".join(parts))
    assert ok


@criterion(5)
def test_criterion_05_no_sdc(full_campaign, record_property):
    _, report, _, _ = full_campaign
    sdc = sum(1 for r in report.rows if r.category in ("pointer", "list", "tcb_field")
              and r.outcome in ("SDC", "SDC_DELAY"))
    note(record_property, f"{sdc} SDC/SDC_DELAY runs in pointer, list and tcb_field")
    assert sdc == 0


@criterion(6)
def test_criterion_06_empty_delayed_lists(full_campaign, golden, record_property):
    _, report, _, _ = full_campaign
    # the delayed lists hold nothing at any instant of the window
    for tick, k in injection_window(golden):
        probe = build_system()
        seen = {}

        def look(kernel, seen=seen):
            for name in ("xDelayedTaskList1", "xDelayedTaskList2"):
                seen[name] = kernel.image.read32(kernel.addr[name])

        probe.trigger = (tick, k, look)
        probe.run(1000)
        assert seen == {"xDelayedTaskList1": 0, "xDelayedTaskList2": 0}
    rows = [r for r in report.rows if r.target in ("xDelayedTaskList1", "xDelayedTaskList2")]
    invalid = sum(r.outcome == "INVALID" for r in rows)
    note(record_property, f"{invalid}/{len(rows)} delayed-list injections INVALID")
    assert rows and invalid == len(rows)


@criterion(7)
def test_criterion_07_fault_model(catalog, record_property):
    started = time.perf_counter()
    rng = random.Random(7)
    # (a) one transient injection changes exactly one bit
    for _ in range(300):
        t = rng.choice(catalog)
        k = build_system()
        k.run(0)
        spec = FaultSpec(t.name, rng.randrange(t.size), rng.randrange(8), "transient", (1, 0))
        before = k.image.snapshot()
        fire(arm(spec, t), k)
        assert len(KernelImage.diff(before, k.image.snapshot())) == 1
    # (b) a stuck bit survives 10,000 overlapping writes
    img = KernelImage(0x100)
    img.write_bytes(0x40, bytes(rng.randrange(256) for _ in range(64)))
    off, bit = 0x52, 5
    img.install_stuck_mask(off, bit, 0)
    for _ in range(10_000):
        width = rng.choice((1, 2, 4))
        start = rng.randrange(off - width + 1, off + 1)
        img.write_field(start, width, rng.randrange(1 << (8 * width)))
        assert (img.read8(off) >> bit) & 1 == 0
    # (c) two identical flips restore the image
    k = build_system()
    k.run(0)
    for _ in range(1000):
        t = rng.choice(catalog)
        off, bit = t.base + rng.randrange(t.size), rng.randrange(8)
        before = k.image.snapshot()
        k.image.flip_bit(off, bit)
        k.image.flip_bit(off, bit)
        assert k.image.snapshot() == before
    elapsed = time.perf_counter() - started
    note(record_property, f"single-bit diff, stuck-at persistence, involution; {elapsed:.1f} s")
    assert elapsed < 10


@criterion(8)
def test_criterion_08_list_oracle(record_property):
    started = time.perf_counter()
    k = kernel_init()
    lst = k.addr["xDelayedTaskList1"]
    pool = [k.image.allocate(f"probe{i}", ITEM_SIZE, "list_item").base for i in range(32)]
    rng = random.Random(8)
    steps = 0
    for _ in range(10_000):
        keys, items = [], []
        for _ in range(rng.randrange(1, 48)):
            free = [it for it in pool if it not in items]
            if free and (not items or rng.random() < 0.65):
                it, value = rng.choice(free), rng.randrange(24)
                k.image.write32(it, value)
                k.list_insert_ordered(lst, it)
                i = bisect.bisect_right(keys, value)
                keys.insert(i, value)
                items.insert(i, it)
            else:
                i = rng.randrange(len(items))
                k.list_remove(items[i])
                del keys[i], items[i]
            assert list(k.list_items(lst)) == items
            steps += 1
        for it in items:
            k.list_remove(it)
    elapsed = time.perf_counter() - started
    note(record_property, f"10000 sequences, {steps} operations matched; {elapsed:.1f} s")
    assert elapsed < 30


@criterion(9)
def test_criterion_09_scale_and_workers(full_campaign, golden, catalog, record_property):
    plan, report, elapsed, _ = full_campaign
    cfg1 = CampaignConfig(seed=FULL_SEED, workers=1)
    single = run_campaign(plan, golden, cfg1, catalog)
    same = [r.outcome for r in single.rows] == [r.outcome for r in report.rows]
    note(record_property, f"{len(plan)} runs in {elapsed:.1f} s on 4 workers; "
                          f"1 worker {single.duration_s:.1f} s, identical outcomes={same}")
    assert len(plan) == 62_604
    assert elapsed <= 600
    assert same and single.rows == report.rows


@criterion(10)
def test_criterion_10_conservation(full_campaign, record_property):
    plan, report, _, _ = full_campaign
    worst = 0.0
    counted = 0
    for ft in report.fault_types:
        dists = [report.counts(ft, t) for t in report.targets(ft)] + [report.totals(ft)]
        for c in dists:
            worst = max(worst, abs(sum(percentages(c).values()) - 100.0))
        counted += sum(report.totals(ft).values())
    assert all(r.outcome in OUTCOMES for r in report.rows)
    note(record_property, f"max deviation {worst:.4f} points, {counted} counted of {len(plan)}")
    assert worst <= 0.01 + 1e-9
    assert counted == len(plan) == len(report.rows)
