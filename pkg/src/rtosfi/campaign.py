"""Campaign planning, parallel execution, aggregation and report files."""

from __future__ import annotations

import csv
import math
import multiprocessing
import os
import time
from collections import Counter, defaultdict
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from concurrent.futures.process import BrokenProcessPool
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .harness import OUTCOMES, GoldenProfile, Thresholds, execute_run, injection_window
from .injector import FaultSpec, sample_fault_space
from .targets import CATEGORIES, FAULT_TYPES, InjectionTarget

__all__ = [
    "DEFAULT_CUTOFFS",
    "RUNS_HEADER",
    "CampaignConfig",
    "CampaignReport",
    "RunRow",
    "InvalidParameter",
    "WorkerFailure",
    "compute_sample_size",
    "plan_campaign",
    "run_campaign",
    "emit_report",
    "load_runs",
    "regenerate_report",
    "percentages",
]

# Conventional two-decimal normal cutoffs; 2.58 for 99% gives 666 per location.
DEFAULT_CUTOFFS = {0.90: 1.645, 0.95: 1.96, 0.98: 2.33, 0.99: 2.58, 0.995: 2.81, 0.999: 3.29}

RUNS_HEADER = ("run_id", "target", "category", "fault_type", "byte", "bit", "t_tick",
               "t_event", "outcome", "run_ticks", "golden_ticks", "panic_reason", "seed")


class InvalidParameter(ValueError):
    pass


class WorkerFailure(RuntimeError):
    """A run could not be executed; ``partial`` keeps every finished row."""

    def __init__(self, index: int, message: str, partial=None):
        super().__init__(f"run {index} failed: {message}")
        self.index = index
        self.partial = partial or {}


def compute_sample_size(confidence: float = 0.99, margin: float = 0.05, p: float = 0.5,
                        population: Optional[float] = None,
                        cutoffs: Optional[Mapping[float, float]] = None) -> int:
    """Runs needed to estimate a binomial proportion within ``margin``.

    ``population`` None (or inf) means an unbounded fault space; otherwise the
    finite-population correction is applied.
    """
    if not 0 < margin < 1:
        raise InvalidParameter(f"margin {margin} outside (0, 1)")
    if not 0.5 <= confidence < 1:
        raise InvalidParameter(f"confidence {confidence} outside [0.5, 1)")
    if not 0 <= p <= 1:
        raise InvalidParameter(f"p {p} outside [0, 1]")
    if population is not None and not math.isinf(population) and population < 1:
        raise InvalidParameter(f"population {population} must be at least 1")
    table = DEFAULT_CUTOFFS if cutoffs is None else cutoffs
    t = table.get(round(confidence, 6))
    if t is None:
        t = NormalDist().inv_cdf((1 + confidence) / 2)
    var = p * (1 - p)
    if var == 0:
        return 1
    n0 = t * t * var / (margin * margin)
    if population is None or math.isinf(population):
        n = n0
    else:
        n = population / (1 + (population - 1) / n0)
    # round away float noise such as 665.6400000000001 before the ceiling
    n = math.ceil(round(n, 9))
    if population is not None and not math.isinf(population):
        n = min(n, int(population))
    return max(1, n)


@dataclass(frozen=True)
class CampaignConfig:
    fault_types: tuple = FAULT_TYPES
    confidence: float = 0.99
    margin: float = 0.05
    p: float = 0.5
    population: Optional[float] = None
    n_per_location: Optional[int] = None
    window_fraction: float = 0.1
    thresholds: Thresholds = Thresholds()
    seed: int = 0
    workers: int = 4
    out_dir: Optional[str] = None
    targets: Optional[tuple] = None  # restrict the catalog to these names
    stuck_value: Optional[int] = None
    cutoffs: Optional[Mapping[float, float]] = None

    def __post_init__(self):
        if not 0 < self.margin < 1:
            raise InvalidParameter("margin must lie in (0, 1)")
        if not 0.5 <= self.confidence < 1:
            raise InvalidParameter("confidence must lie in [0.5, 1)")
        if self.workers < 1:
            raise InvalidParameter("workers must be at least 1")
        if self.n_per_location is not None and self.n_per_location < 1:
            raise InvalidParameter("n_per_location must be at least 1")
        for ft in self.fault_types:
            if ft not in FAULT_TYPES:
                raise InvalidParameter(f"unknown fault type {ft!r}")

    @property
    def per_location(self) -> int:
        if self.n_per_location is not None:
            return self.n_per_location
        return compute_sample_size(self.confidence, self.margin, self.p, self.population,
                                   self.cutoffs)

    def select(self, catalog: Sequence[InjectionTarget]) -> list[InjectionTarget]:
        if self.targets is None:
            return list(catalog)
        known = {t.name for t in catalog}
        unknown = [n for n in self.targets if n not in known]
        if unknown:
            raise InvalidParameter(f"unknown targets {unknown}")
        wanted = set(self.targets)
        return [t for t in catalog if t.name in wanted]


def plan_campaign(config: CampaignConfig, catalog: Sequence[InjectionTarget],
                  golden: GoldenProfile) -> list[FaultSpec]:
    """Ordered plan: one block per fault type, targets in catalog order."""
    window = injection_window(golden, config.window_fraction)
    chosen = config.select(catalog)
    plan = []
    for ft in config.fault_types:
        plan.extend(sample_fault_space(chosen, config.per_location, window, config.seed, ft,
                                       config.stuck_value if ft == "permanent" else None))
    return plan


@dataclass(frozen=True)
class RunRow:
    run_id: int
    target: str
    category: str
    fault_type: str
    byte: int
    bit: int
    t_tick: int
    t_event: int
    outcome: str
    run_ticks: int
    golden_ticks: int
    panic_reason: str
    seed: int

    def as_csv(self) -> list:
        return [getattr(self, name) for name in RUNS_HEADER]

    @classmethod
    def from_csv(cls, rec: Mapping[str, str]) -> "RunRow":
        ints = {"run_id", "byte", "bit", "t_tick", "t_event", "run_ticks", "golden_ticks", "seed"}
        return cls(**{k: int(rec[k]) if k in ints else rec[k] for k in RUNS_HEADER})


# -- execution ------------------------------------------------------------------

_CTX: dict = {}


def _init_worker(golden, catalog, thresholds, seed):
    _CTX.update(golden=golden, catalog=catalog, thresholds=thresholds, seed=seed,
                categories={t.name: t.category for t in catalog})


def _run_one(index: int, spec: FaultSpec) -> RunRow:
    golden = _CTX["golden"]
    res = execute_run(spec, golden, _CTX["thresholds"], _CTX["catalog"])
    category = "none" if spec.is_null else _CTX["categories"][spec.target]
    return RunRow(index, spec.target, category, spec.fault_type, spec.byte_off, spec.bit_off,
                  spec.t_inject[0], spec.t_inject[1], res.outcome, res.run_ticks,
                  golden.total_ticks, res.panic_reason, _CTX["seed"])


def _run_chunk(start: int, specs: Sequence[FaultSpec]):
    """Rows for ``specs``; on error returns the failing index and message."""
    rows = []
    for i, spec in enumerate(specs, start):
        try:
            rows.append(_run_one(i, spec))
        except Exception as exc:  # isolation: report, never kill the pool
            return rows, (i, f"{type(exc).__name__}: {exc}")
    return rows, None


def _context():
    methods = multiprocessing.get_all_start_methods()
    return multiprocessing.get_context("fork" if "fork" in methods else "spawn")


def run_campaign(plan: Sequence[FaultSpec], golden: GoldenProfile, config: CampaignConfig,
                 catalog: Sequence[InjectionTarget],
                 progress: Optional[Callable[[int, int], None]] = None) -> "CampaignReport":
    """Execute every spec of ``plan``; rows come back ordered by plan index."""
    if not plan:
        raise InvalidParameter("empty plan")
    started = time.perf_counter()
    done: dict[int, RunRow] = {}
    total = len(plan)
    if config.workers == 1:
        _init_worker(golden, list(catalog), config.thresholds, config.seed)
        rows, err = _run_chunk(0, plan)
        done.update((r.run_id, r) for r in rows)
        if err:
            raise WorkerFailure(err[0], err[1], done)
        if progress:
            progress(total, total)
    else:
        chunk = max(1, min(256, total // (config.workers * 8) or 1))
        with ProcessPoolExecutor(config.workers, mp_context=_context(),
                                 initializer=_init_worker,
                                 initargs=(golden, list(catalog), config.thresholds,
                                           config.seed)) as pool:
            pending = {}
            for start in range(0, total, chunk):
                fut = pool.submit(_run_chunk, start, list(plan[start:start + chunk]))
                pending[fut] = start
            failure = None
            while pending and failure is None:
                finished, _ = wait(pending, return_when=FIRST_COMPLETED)
                for fut in finished:
                    start = pending.pop(fut)
                    try:
                        rows, err = fut.result()
                    except BrokenProcessPool as exc:
                        failure = (start, f"worker process died: {exc}")
                        break
                    done.update((r.run_id, r) for r in rows)
                    if err:
                        failure = err
                        break
                if progress:
                    progress(len(done), total)
            if failure is not None:
                # chunks already running still finish; keep what they produce
                running = [f for f in pending if not f.cancel()]
                for fut in running:
                    try:
                        rows, _ = fut.result()
                    except BrokenProcessPool:
                        continue
                    done.update((r.run_id, r) for r in rows if r.run_id < failure[0])
                raise WorkerFailure(failure[0], failure[1], done)
    rows = [done[i] for i in range(total)]
    report = CampaignReport(rows, config.seed, time.perf_counter() - started,
                            golden.total_ticks)
    if config.out_dir:
        emit_report(report, config.out_dir, golden)
    return report


# -- aggregation ----------------------------------------------------------------

def percentages(counts: Mapping[str, int], digits: int = 2) -> dict[str, float]:
    """Largest-remainder rounding, so the shown values add up to exactly 100."""
    total = sum(counts.get(o, 0) for o in OUTCOMES)
    if total == 0:
        return {o: 0.0 for o in OUTCOMES}
    scale = 10 ** digits
    exact = {o: counts.get(o, 0) * 100 * scale / total for o in OUTCOMES}
    floor = {o: math.floor(v) for o, v in exact.items()}
    short = 100 * scale - sum(floor.values())
    order = sorted(OUTCOMES, key=lambda o: (-(exact[o] - floor[o]), OUTCOMES.index(o)))
    for o in order[:short]:
        floor[o] += 1
    return {o: floor[o] / scale for o in OUTCOMES}


@dataclass
class CampaignReport:
    rows: list
    seed: int
    duration_s: float
    golden_ticks: int
    _by_target: dict = field(default=None, repr=False)

    def __post_init__(self):
        by = defaultdict(Counter)
        for r in self.rows:
            by[(r.fault_type, r.target)][r.outcome] += 1
        self._by_target = by

    @property
    def fault_types(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.fault_type not in seen:
                seen.append(r.fault_type)
        return seen

    def targets(self, fault_type: str, category: Optional[str] = None) -> list[str]:
        seen = []
        for r in self.rows:
            if r.fault_type == fault_type and (category is None or r.category == category):
                if r.target not in seen:
                    seen.append(r.target)
        return seen

    def categories(self) -> list[str]:
        present = {r.category for r in self.rows}
        return [c for c in CATEGORIES if c in present] + sorted(present - set(CATEGORIES))

    def counts(self, fault_type: str, target: str) -> Counter:
        return self._by_target[(fault_type, target)]

    def category_counts(self, fault_type: str, category: str) -> Counter:
        total = Counter()
        for t in self.targets(fault_type, category):
            total.update(self.counts(fault_type, t))
        return total

    def totals(self, fault_type: str) -> Counter:
        return Counter(r.outcome for r in self.rows if r.fault_type == fault_type)

    def rate(self, fault_type: str, target: str, outcome: str,
             exclude_invalid: bool = False) -> Optional[float]:
        c = self.counts(fault_type, target)
        n = sum(c.values())
        if exclude_invalid:
            n -= c["INVALID"]
        return c[outcome] / n if n else None

    def category_mean_rate(self, fault_type: str, category: str, outcome: str = "CRASH",
                           exclude_invalid: bool = False) -> Optional[float]:
        """Unweighted mean of per-target rates.

        With ``exclude_invalid`` each rate is taken over the target's valid
        injections and targets that never had one are skipped.
        """
        rates = [self.rate(fault_type, t, outcome, exclude_invalid)
                 for t in self.targets(fault_type, category)]
        rates = [r for r in rates if r is not None]
        return sum(rates) / len(rates) if rates else None

    def summary_text(self) -> str:
        out = ["[campaign]",
               f"seed = {self.seed}",
               f"runs = {len(self.rows)}",
               f"golden_ticks = {self.golden_ticks}",
               f"duration_s = {self.duration_s:.3f}",
               ""]
        head = "  ".join(f"{o:>9}" for o in OUTCOMES)

        def table(title, rows):
            out.append(f"[{title}]")
            out.append(f"{'name':36} {'runs':>6}  {head}")
            for name, c in rows:
                pct = percentages(c)
                out.append(f"{name:36} {sum(c.values()):6d}  "
                           + "  ".join(f"{pct[o]:9.2f}" for o in OUTCOMES))
            out.append("")

        table("totals", [(ft, self.totals(ft)) for ft in self.fault_types])
        for ft in self.fault_types:
            table(f"categories.{ft}",
                  [(c, self.category_counts(ft, c)) for c in self.categories()
                   if self.targets(ft, c)])
            table(f"targets.{ft}", [(t, self.counts(ft, t)) for t in self.targets(ft)])
        out.append("[category_mean_crash]")
        for ft in self.fault_types:
            for c in self.categories():
                if not self.targets(ft, c):
                    continue
                all_runs = self.category_mean_rate(ft, c)
                valid = self.category_mean_rate(ft, c, exclude_invalid=True)
                valid_s = "n/a" if valid is None else f"{100 * valid:.2f}"
                out.append(f"{ft}.{c} = all_runs {100 * all_runs:.2f} valid_runs {valid_s}")
        return "\n".join(out) + "\n"


# -- files --------------------------------------------------------------------

def _write_runs(rows: Iterable[RunRow], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUNS_HEADER)
        for r in rows:
            w.writerow(r.as_csv())


def _write_plotdata(report: CampaignReport, directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for ft in report.fault_types:
        for cat in report.categories():
            names = report.targets(ft, cat)
            if not names:
                continue
            path = directory / f"{cat}_{ft}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("target",) + OUTCOMES)
                for t in names:
                    pct = percentages(report.counts(ft, t))
                    w.writerow([t] + [f"{pct[o]:.2f}" for o in OUTCOMES])
            written.append(path)
    return written


def emit_report(report: CampaignReport, out_dir, golden: Optional[GoldenProfile] = None,
                include_runs: bool = True, text: bool = True, plots: bool = True) -> list[Path]:
    """Write report.summary, runs.csv, plotdata/*.csv and golden.profile."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if include_runs:
        _write_runs(report.rows, out / "runs.csv")
        written.append(out / "runs.csv")
    if text:
        (out / "report.summary").write_text(report.summary_text())
        written.append(out / "report.summary")
    if plots:
        written += _write_plotdata(report, out / "plotdata")
    if golden is not None:
        (out / "golden.profile").write_text(golden.to_text())
        written.append(out / "golden.profile")
    return written


def load_runs(path) -> list[RunRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RUNS_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [RunRow.from_csv(rec) for rec in reader]


def _old_duration(summary: Path) -> float:
    if summary.exists():
        for line in summary.read_text().splitlines():
            if line.startswith("duration_s = "):
                return float(line.split("=", 1)[1])
    return 0.0


def regenerate_report(out_dir, text: bool = True, plots: bool = True) -> CampaignReport:
    """Rebuild summary and/or plot data from an existing runs.csv."""
    out = Path(out_dir)
    rows = load_runs(out / "runs.csv")
    if not rows:
        raise ValueError(f"{out / 'runs.csv'} holds no runs")
    report = CampaignReport(rows, rows[0].seed, _old_duration(out / "report.summary"),
                            rows[0].golden_ticks)
    emit_report(report, out, include_runs=False, text=text, plots=plots)
    return report


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))
