"""Replication runner, metric binning, aggregation and delimited output.

One replication advances the world one second at a time. Within a tick:
period bookkeeping, arrivals, indications (masked by the meter), traffic
advance with crossing counts, budget enforcement, then the controller's
decision step. Metrics are binned in 5-minute windows; per-run audits
(conservation, signal safety, gating) are computed inline so full grids never
need to retain event logs.
"""

from __future__ import annotations

import json
import math
import os
import statistics
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, TextIO

import numpy as np

from . import __version__
from .auction import AuctionController
from .events import EventLog, NullLog
from .fixedtime import FixedTimeController
from .metering import BudgetMeter
from .model import IntersectionModel, ScenarioConfig, ScenarioError, scenario_to_dict
from .sim import GREEN, YELLOW, TrafficEngine

BIN_S = 300
CONTROLLERS = ("auction", "volume_fixed")


class SignalTracker:
    """Per-tick safety audit: single green phase, yellow gaps, run lengths."""

    def __init__(self, model: IntersectionModel, min_green: int, max_green: int,
                 green_ext: int, yellow: int):
        self.phase_of = {m: p for p, members in model.phases.items() for m in members}
        self.yellow = yellow
        self.run_lo = min_green
        self.run_hi = max_green + green_ext
        self.multi_green_ticks = 0
        self.missing_yellow = 0
        self.bad_yellow = 0
        self.short_runs = 0
        self.long_runs = 0
        self.min_run: Optional[int] = None
        self.max_run: Optional[int] = None
        self._run_phase: Optional[int] = None
        self._run_len = 0
        self._gap_yellow = 0
        self._gap_other = 0

    def observe(self, t: int, indications: dict[int, str]) -> None:  # noqa: ARG002
        greens = {self.phase_of[m] for m, s in indications.items() if s == GREEN}
        if len(greens) > 1:
            self.multi_green_ticks += 1
        if greens:
            phase = min(greens)
            if self._run_phase == phase and self._gap_yellow == 0 and self._gap_other == 0:
                self._run_len += 1
            else:
                if self._run_phase is not None:
                    self._close_run()
                    if self._run_phase == phase or (self._gap_yellow + self._gap_other) == 0:
                        # A phase must not yellow into itself, and two distinct
                        # phases need a yellow between their greens.
                        self.missing_yellow += 1
                    elif self._gap_yellow != self.yellow or self._gap_other != 0:
                        self.bad_yellow += 1
                self._run_phase = phase
                self._run_len = 1
                self._gap_yellow = 0
                self._gap_other = 0
        else:
            if any(s == YELLOW for s in indications.values()):
                self._gap_yellow += 1
            else:
                self._gap_other += 1

    def _close_run(self) -> None:
        length = self._run_len
        if self.min_run is None or length < self.min_run:
            self.min_run = length
        if self.max_run is None or length > self.max_run:
            self.max_run = length
        if length < self.run_lo:
            self.short_runs += 1
        if length > self.run_hi:
            self.long_runs += 1

    @property
    def violations(self) -> int:
        return self.multi_green_ticks + self.missing_yellow + self.bad_yellow \
            + self.short_runs + self.long_runs


@dataclass
class RunAudit:
    conservation_ok: bool
    arrivals_by_arm: dict[str, int]
    n_deferrals: int
    max_wait_s: float
    multi_green_ticks: int
    missing_yellow: int
    bad_yellow: int
    short_green_runs: int
    long_green_runs: int
    min_green_run: Optional[int]
    max_green_run: Optional[int]
    gated_green_violation_ticks: int
    max_period_overshoot: Optional[int]

    @property
    def signal_violations(self) -> int:
        return (self.multi_green_ticks + self.missing_yellow + self.bad_yellow
                + self.short_green_runs + self.long_green_runs)


@dataclass
class RunOutput:
    scenario: str
    controller: str
    limit_veh_hr: Optional[float]
    seed: int
    queue_series: list[float]  # time-mean stopped vehicles on the gated arm(s)
    inflow_series: list[int]  # gated-arm crossings per bin
    mean_delay_s: Optional[float]
    n_arrivals: int
    n_exited: int
    n_remaining: int
    period_rows: list[tuple[str, int, int, int]]  # arm, period, budget, delivered
    audit: RunAudit
    events: Optional[EventLog] = None


def replication_seed(base_seed: int, index: int) -> int:
    """Documented scheme: replication i runs with base_seed + i."""
    return base_seed + index


def run_replication(
    scenario: ScenarioConfig,
    controller: str,
    limit_veh_hr: Optional[float],
    seed: int,
    keep_events: bool = False,
    trace_auctions: bool = False,
    event_stream: Optional[TextIO] = None,
) -> RunOutput:
    """Execute one seeded replication; deterministic for fixed inputs."""
    if controller not in CONTROLLERS:
        raise ScenarioError(f"unknown controller {controller!r}; expected one of {CONTROLLERS}")
    model = scenario.intersection
    params = scenario.controller
    horizon = scenario.experiment.horizon_s
    wants_log = keep_events or event_stream is not None
    log = EventLog(keep=keep_events, stream=event_stream) if wants_log else NullLog()
    rng = np.random.default_rng(seed)
    engine = TrafficEngine(
        model,
        scenario.demand,
        rng,
        horizon,
        spacing_min_m=params.spacing_min_m,
        saturation_headway_s=params.saturation_headway_s,
        log=log,
    )
    met_spec = replace(scenario.metering, inflow_limit_veh_hr=limit_veh_hr)
    meter = BudgetMeter(model, met_spec, log)
    if controller == "auction":
        ctrl = AuctionController(
            model, params, meter, engine.lanes_by_movement, log, trace=trace_auctions
        )
    else:
        ctrl = FixedTimeController(model, params, met_spec, limit_veh_hr)

    inflow_movements = frozenset(
        m for arm in model.gated_arms for m in model.gated_movements(arm)
    )
    nbins = math.ceil(horizon / BIN_S)
    queue_ticks = [0] * nbins
    inflow_counts = [0] * nbins
    tracker = SignalTracker(
        model, params.min_green_s, params.max_green_s, params.green_extension_s, params.yellow_s
    )
    gated_violation_ticks = 0
    prev_phase_states: dict[int, tuple[str, tuple[int, ...]]] = {}

    for t in range(horizon):
        meter.begin_tick(t)
        engine.spawn_arrivals(t)
        inds = ctrl.indications(t)

        if meter.excluded_arms:
            for arm in meter.excluded_arms:
                for mid in model.gated_movements(arm):
                    if inds.get(mid) == GREEN:
                        gated_violation_ticks += 1
        tracker.observe(t, inds)
        if log.enabled:
            prev_phase_states = _log_signal_changes(log, model, t, inds, prev_phase_states)

        crossings = engine.advance(t, inds)
        b = t // BIN_S
        if crossings:
            for veh in crossings:
                if veh.movement in inflow_movements:
                    inflow_counts[b] += 1
                    if meter.configured:
                        meter.record_crossing(meter.movement_arm(veh.movement), t)
        meter.enforce(t)
        ctrl.step(t)
        meter.end_tick(t)
        queue_ticks[b] += sum(engine.arm_queue_count(arm) for arm in model.gated_arms)

    meter.finish(horizon)

    queue_series = []
    for b in range(nbins):
        ticks = min(BIN_S, horizon - b * BIN_S)
        queue_series.append(queue_ticks[b] / ticks)
    mean_delay = engine.delay_sum / engine.n_exited if engine.n_exited > 0 else None
    n_remaining = engine.n_spawned - engine.n_exited
    audit = RunAudit(
        conservation_ok=engine.conservation_ok(),
        arrivals_by_arm=dict(engine.arrivals_by_arm),
        n_deferrals=engine.n_deferrals,
        max_wait_s=engine.final_max_wait(horizon),
        multi_green_ticks=tracker.multi_green_ticks,
        missing_yellow=tracker.missing_yellow,
        bad_yellow=tracker.bad_yellow,
        short_green_runs=tracker.short_runs,
        long_green_runs=tracker.long_runs,
        min_green_run=tracker.min_run,
        max_green_run=tracker.max_run,
        gated_green_violation_ticks=gated_violation_ticks,
        max_period_overshoot=meter.max_overshoot(),
    )
    return RunOutput(
        scenario=scenario.name,
        controller=controller,
        limit_veh_hr=limit_veh_hr,
        seed=seed,
        queue_series=queue_series,
        inflow_series=inflow_counts,
        mean_delay_s=mean_delay,
        n_arrivals=engine.n_spawned,
        n_exited=engine.n_exited,
        n_remaining=n_remaining,
        period_rows=list(meter.period_rows),
        audit=audit,
        events=log if keep_events else None,
    )


def _log_signal_changes(log, model, t, inds, prev):
    states = {}
    for phase, members in model.phases.items():
        greens = tuple(m for m in members if inds[m] == GREEN)
        yellows = tuple(m for m in members if inds[m] == YELLOW)
        if greens:
            states[phase] = ("green", greens)
        elif yellows:
            states[phase] = ("yellow", yellows)
        else:
            states[phase] = ("red", ())
    for phase, state in states.items():
        if prev.get(phase) != state:
            kind, movs = state
            log.emit(t, "signal", phase, kind, "+".join(str(m) for m in movs) or "-")
    return states


@dataclass
class Aggregate:
    controller: str
    limit_veh_hr: Optional[float]
    seeds: list[int]
    queue_series: list[float]  # replication mean per bin
    inflow_veh_hr: list[float]  # replication mean per bin, in veh/hr
    mean_delay_s: Optional[float]
    runs: list[RunOutput] = field(repr=False, default_factory=list)


@dataclass
class ExperimentResult:
    scenario: ScenarioConfig
    aggregates: list[Aggregate]

    def get(self, controller: str, limit_veh_hr: Optional[float]) -> Aggregate:
        for agg in self.aggregates:
            if agg.controller == controller and agg.limit_veh_hr == limit_veh_hr:
                return agg
        raise KeyError((controller, limit_veh_hr))


def aggregate_runs(runs: Sequence[RunOutput]) -> Aggregate:
    """Unweighted replication means of every binned series and of mean delay."""
    if not runs:
        raise ValueError("cannot aggregate zero runs")
    nbins = len(runs[0].queue_series)
    per_hr = 3600.0 / BIN_S
    queue_series = [
        statistics.fmean(r.queue_series[b] for r in runs) for b in range(nbins)
    ]
    inflow_veh_hr = [
        statistics.fmean(r.inflow_series[b] * per_hr for r in runs) for b in range(nbins)
    ]
    delays = [r.mean_delay_s for r in runs if r.mean_delay_s is not None]
    return Aggregate(
        controller=runs[0].controller,
        limit_veh_hr=runs[0].limit_veh_hr,
        seeds=[r.seed for r in runs],
        queue_series=queue_series,
        inflow_veh_hr=inflow_veh_hr,
        mean_delay_s=statistics.fmean(delays) if delays else None,
        runs=list(runs),
    )


def run_experiment(
    scenario: ScenarioConfig,
    controllers: Sequence[str] = CONTROLLERS,
    limits: Optional[Sequence[Optional[float]]] = None,
    n_reps: Optional[int] = None,
    base_seed: Optional[int] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> ExperimentResult:
    """Run every (controller, limit) combination over seeded replications."""
    if limits is None:
        limits = list(scenario.experiment.flow_limits_veh_hr)
    reps = n_reps if n_reps is not None else scenario.experiment.replications
    if reps < 1:
        raise ScenarioError("experiment needs at least one replication")
    seed0 = base_seed if base_seed is not None else scenario.experiment.base_seed
    aggregates = []
    for controller in controllers:
        for limit in limits:
            runs = []
            for i in range(reps):
                seed = replication_seed(seed0, i)
                if progress is not None:
                    label = "none" if limit is None else f"{limit:g}"
                    progress(f"{controller} limit={label} rep={i} seed={seed}")
                runs.append(run_replication(scenario, controller, limit, seed))
            aggregates.append(aggregate_runs(runs))
    return ExperimentResult(scenario=scenario, aggregates=aggregates)


def activation_bins(window: tuple[int, int], nbins: int) -> list[int]:
    """Indices of 5-minute bins lying fully inside the window."""
    start, end = window
    return [
        b for b in range(nbins)
        if b * BIN_S >= start and (b + 1) * BIN_S <= end
    ]


def inflow_stats(aggregate: Aggregate, window: tuple[int, int]) -> dict[str, float]:
    """Min/max/mean of the replication-mean inflow bins inside the window."""
    bins = activation_bins(window, len(aggregate.inflow_veh_hr))
    if not bins:
        raise ValueError(f"window {window} contains no complete {BIN_S}-second bins")
    values = [aggregate.inflow_veh_hr[b] for b in bins]
    return {
        "min": min(values),
        "max": max(values),
        "mean": statistics.fmean(values),
    }


def limit_label(limit: Optional[float]) -> str:
    return "none" if limit is None else f"{limit:g}"


def emit_outputs(
    result: ExperimentResult,
    out_dir: str,
    force: bool = False,
    plots: bool = True,
) -> list[str]:
    """Write per-combination CSVs, the summary table, run metadata and figures.

    Refuses to clobber an existing summary unless ``force`` is set; with it,
    re-running the same inputs reproduces byte-identical CSVs.
    """
    import csv

    scenario = result.scenario
    summary_path = os.path.join(out_dir, "summary.csv")
    if os.path.exists(summary_path) and not force:
        raise FileExistsError(f"{summary_path} already exists; pass --force to overwrite")
    os.makedirs(out_dir, exist_ok=True)
    written = []

    window = scenario.metering.window
    nbins = len(result.aggregates[0].inflow_veh_hr)
    use_window = bool(activation_bins(window, nbins))

    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["controller", "limit", "min_inflow_veh_hr", "max_inflow_veh_hr",
             "mean_inflow_veh_hr", "mean_delay_s"]
        )
        for agg in result.aggregates:
            stats = inflow_stats(agg, window if use_window else (0, nbins * BIN_S))
            writer.writerow([
                agg.controller,
                limit_label(agg.limit_veh_hr),
                stats["min"],
                stats["max"],
                stats["mean"],
                "" if agg.mean_delay_s is None else agg.mean_delay_s,
            ])
    written.append(summary_path)

    for agg in result.aggregates:
        combo_dir = os.path.join(out_dir, f"{agg.controller}_{limit_label(agg.limit_veh_hr)}")
        os.makedirs(combo_dir, exist_ok=True)

        queues_path = os.path.join(combo_dir, "queues.csv")
        with open(queues_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_start_s", "mean_queue_veh"])
            for b, value in enumerate(agg.queue_series):
                writer.writerow([b * BIN_S, value])
        written.append(queues_path)

        inflow_path = os.path.join(combo_dir, "inflow.csv")
        target = "" if agg.limit_veh_hr is None else f"{agg.limit_veh_hr:g}"
        with open(inflow_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_start_s", "veh_per_hr", "target_limit"])
            for b, value in enumerate(agg.inflow_veh_hr):
                writer.writerow([b * BIN_S, value, target])
        written.append(inflow_path)

        periods_path = os.path.join(combo_dir, "periods.csv")
        with open(periods_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["arm", "period", "budget_veh", "mean_delivered_veh"])
            for arm, z, budget, mean_delivered in _mean_period_rows(agg):
                writer.writerow([arm, z, budget, mean_delivered])
        written.append(periods_path)

    meta_path = os.path.join(out_dir, "run_meta.json")
    meta = {
        "version": __version__,
        "scenario": scenario_to_dict(scenario),
        "combinations": [
            {"controller": a.controller, "limit": a.limit_veh_hr, "seeds": a.seeds}
            for a in result.aggregates
        ],
        "bin_s": BIN_S,
    }
    with open(meta_path, "w", encoding="utf-8", newline="") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(meta_path)

    if plots:
        from . import report

        written.extend(report.render_experiment_figures(result, os.path.join(out_dir, "figures")))
    return written


def _mean_period_rows(agg: Aggregate) -> list[tuple[str, int, int, float]]:
    """Replication-mean delivered count per (arm, period)."""
    acc: dict[tuple[str, int], tuple[int, list[int]]] = {}
    for run in agg.runs:
        for arm, z, budget, delivered in run.period_rows:
            key = (arm, z)
            if key not in acc:
                acc[key] = (budget, [])
            acc[key][1].append(delivered)
    rows = []
    for (arm, z), (budget, values) in sorted(acc.items()):
        rows.append((arm, z, budget, statistics.fmean(values)))
    return rows
