"""Seeded trial batches and the aggregate tables built from them."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .rng import trial_seed
from .scenario import Scenario, load_scenario
from .simulator import Metrics, run_loop

U64 = 2**64

METRIC_FIELDS = (
    "trial", "seed", "completed", "total_time",
    "L1_time", "L2_time", "L3_time", "L1_clearance", "L2_clearance", "L3_clearance",
    "removed", "abandoned", "present_at_end", "inserted", "retries", "faults",
)


@dataclass
class RunConfig:
    scenario_path: str
    trials: int = 1
    seed: int = 0
    mode: str = "fine"
    arms: int = 2
    output_dir: str | None = None
    faults: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= self.seed < U64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.mode not in ("coarse", "fine"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.arms not in (1, 2):
            raise ValueError("arms must be 1 or 2")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class TrialResult:
    index: int
    seed: int
    metrics: Metrics
    timeline_csv: str | None = None


def _mean(values) -> float:
    values = list(values)
    # fsum is exact, so the mean does not depend on the order trials finished in
    return math.fsum(values) / len(values) if values else 0.0


@dataclass
class AggregateReport:
    scenario: str
    family: str
    mode: str
    arms: int
    trials: int
    successes: int
    mean_layer_times: dict[str, float]  # seconds
    mean_total_time: float  # seconds
    mean_clearance: dict[str, float]  # fraction
    fault_counts: dict[str, int] = field(default_factory=dict)

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials

    def layer_minutes(self) -> dict[str, float]:
        return {k: round(v / 60.0, 1) for k, v in self.mean_layer_times.items()}

    @property
    def total_minutes(self) -> float:
        return round(self.mean_total_time / 60.0, 1)

    @classmethod
    def from_trials(cls, scenario: Scenario, config: RunConfig, results: Sequence[TrialResult]) -> AggregateReport:
        metrics = [r.metrics for r in results]
        layers = scenario.layer_names()
        faults: dict[str, int] = {}
        for m in metrics:
            for name in m.faults:
                faults[name] = faults.get(name, 0) + 1
        return cls(
            scenario=scenario.name,
            family=scenario.family,
            mode=config.mode,
            arms=config.arms,
            trials=len(metrics),
            successes=sum(1 for m in metrics if m.completed),
            mean_layer_times={l: _mean(m.layer_times.get(l, 0.0) for m in metrics) for l in layers},
            mean_total_time=_mean(m.total_time for m in metrics),
            mean_clearance={
                l: _mean(m.clearance_rate[l] for m in metrics)
                for l in layers if l in metrics[0].clearance_rate
            },
            fault_counts=dict(sorted(faults.items())),
        )


@dataclass
class BatchResult:
    report: AggregateReport
    trials: list[TrialResult]


def _run_one(args) -> TrialResult:
    scenario, config, index, keep = args
    seed = trial_seed(config.seed, index)
    timeline, metrics = run_loop(
        scenario, {"mode": config.mode, "arms": config.arms, "faults": config.faults}, seed=seed)
    return TrialResult(index, seed, metrics, timeline.to_csv() if keep else None)


def run_batch(config: RunConfig, scenario: Scenario | None = None, keep_timelines: bool = False) -> BatchResult:
    """Run ``config.trials`` independent seeded trials and aggregate them.

    Trial ``i`` uses seed ``config.seed ^ i``. With an ``output_dir`` the
    per-trial timelines, a metrics CSV and the summary are written there.
    """
    scenario = scenario if scenario is not None else load_scenario(config.scenario_path)
    keep = keep_timelines or config.output_dir is not None
    jobs = [(scenario, config, i, keep) for i in range(config.trials)]
    if config.workers > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=max(1, config.trials // (4 * config.workers))))
    else:
        results = [_run_one(job) for job in jobs]
    results.sort(key=lambda r: r.index)
    report = AggregateReport.from_trials(scenario, config, results)
    if config.output_dir is not None:
        write_outputs(Path(config.output_dir) / scenario.name, report, results)
    return BatchResult(report, results)


def metrics_csv(results: Sequence[TrialResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in results:
        m = r.metrics
        w.writerow([
            r.index, r.seed, int(m.completed), f"{m.total_time:.3f}",
            *(f"{m.layer_times.get(l, 0.0):.3f}" for l in ("L1", "L2", "L3")),
            *(f"{m.clearance_rate.get(l, 0.0):.6f}" for l in ("L1", "L2", "L3")),
            m.removed, m.abandoned, m.present_at_end, m.inserted, m.retries, ";".join(m.faults),
        ])
    return buf.getvalue()


def write_outputs(out: Path, report: AggregateReport, results: Sequence[TrialResult]) -> None:
    timelines = out / "timelines"
    timelines.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(results) - 1)))
    for r in results:
        if r.timeline_csv is not None:
            (timelines / f"trial_{r.index:0{width}d}.csv").write_text(r.timeline_csv)
    (out / "metrics.csv").write_text(metrics_csv(results))
    (out / "summary.txt").write_text(format_reports([report]))


# -- tables -----------------------------------------------------------------

def _table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def format_reports(reports: Sequence[AggregateReport]) -> str:
    """Layer times (minutes, 1 decimal) and completion counts per family."""
    rows = []
    for r in reports:
        mins = r.layer_minutes()
        rows.append([r.family, r.mode, r.arms, *(f"{mins.get(l, 0.0):.1f}" for l in ("L1", "L2", "L3")),
                     f"{r.total_minutes:.1f}", r.trials, r.successes, f"{100 * r.success_rate:.1f}"])
    if len(reports) > 1:
        trials = sum(r.trials for r in reports)
        ok = sum(r.successes for r in reports)
        rows.append(["Overall", "", "", "", "", "", "", trials, ok, f"{100 * ok / trials:.1f}"])
    header = ["Family", "Mode", "Arms", "L1", "L2", "L3", "Total", "Trials", "Success", "Rate (%)"]
    return _table(header, rows)


@dataclass
class ModeComparison:
    family: str
    coarse: AggregateReport
    fine: AggregateReport

    def row(self) -> list:
        return [
            self.family,
            f"{100 * self.coarse.mean_clearance.get('L1', 0.0):.1f}",
            f"{self.coarse.mean_layer_times['L1'] / 60:.1f}",
            f"{100 * self.fine.mean_clearance.get('L1', 0.0):.1f}",
            f"{self.fine.mean_layer_times['L1'] / 60:.1f}",
        ]


def compare_modes(scenario: Scenario, trials: int, seed: int, faults: bool = False) -> ModeComparison:
    """L1 clearance and time under coarse-only versus fine engagement."""
    out = {}
    for mode in ("coarse", "fine"):
        cfg = RunConfig(scenario.source or scenario.name, trials, seed, mode, 2, faults=faults)
        out[mode] = run_batch(cfg, scenario).report
    return ModeComparison(scenario.family, out["coarse"], out["fine"])


def format_mode_comparison(items: Sequence[ModeComparison]) -> str:
    header = ["Family", "Coarse clearance (%)", "Coarse time (min)", "Fine clearance (%)", "Fine time (min)"]
    return _table(header, [c.row() for c in items])


@dataclass
class ArmComparison:
    family: str
    single: list[float]  # per-trial makespans, seconds
    dual: list[float]

    @property
    def mean_single(self) -> float:
        return _mean(self.single)

    @property
    def mean_dual(self) -> float:
        return _mean(self.dual)

    @property
    def dominated(self) -> bool:
        """Dual-arm never slower than single-arm on any seed."""
        return all(d <= s for s, d in zip(self.single, self.dual))

    def row(self) -> list:
        return [self.family, f"{self.mean_single / 60:.1f}", f"{self.mean_dual / 60:.1f}",
                f"{100 * (1 - self.mean_dual / self.mean_single):.1f}" if self.mean_single else "0.0"]


def compare_arms(scenario: Scenario, trials: int, seed: int, mode: str = "fine",
                 faults: bool = False) -> ArmComparison:
    """Makespan with one arm owning every capability versus the two-arm cell."""
    spans = {}
    for arms in (1, 2):
        cfg = RunConfig(scenario.source or scenario.name, trials, seed, mode, arms, faults=faults)
        spans[arms] = [r.metrics.total_time for r in run_batch(cfg, scenario).trials]
    return ArmComparison(scenario.family, spans[1], spans[2])


def format_arm_comparison(items: Sequence[ArmComparison]) -> str:
    header = ["Family", "Single-arm (min)", "Dual-arm (min)", "Saving (%)"]
    return _table(header, [c.row() for c in items])
