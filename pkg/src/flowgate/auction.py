"""Sealed-bid second-price phase auctions and the signal state machine.

Each decision epoch, phases eligible to bid collect bids from vehicles within
a per-lane bidding distance. The distance for a phase showing red scales with
the average waiting time of its queued vehicles; the phase holding green keeps
the distance it had when it last won, so its bidder set stays stable through
extensions. The winning phase pays second-price style: every winning bidder is
scaled by the runner-up-to-winner ratio of phase totals.

A repeat winner extends its green; once its elapsed green would exceed the
maximum it is barred from subsequent auctions until another phase takes over,
via a yellow interval and a fresh minimum green.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from .events import EventLog, NullLog
from .metering import BudgetMeter
from .model import ControllerParams, IntersectionModel
from .sim import GREEN, RED, YELLOW, LaneTraffic, Vehicle

BidFunction = Callable[[Vehicle, float], float]


def impatience(wait_s: float, slope: float, midpoint_s: float) -> float:
    """Logistic urgency multiplier in (0,1), increasing in waiting time."""
    return 1.0 / (1.0 + math.exp(-slope * (wait_s - midpoint_s)))


def vehicle_bid(vot_eur_hr: float, wait_s: float, slope: float, midpoint_s: float) -> float:
    """Waiting cost in euros, inflated by the impatience multiplier."""
    return (vot_eur_hr / 3600.0) * wait_s * (1.0 + impatience(wait_s, slope, midpoint_s))


def default_bid(vehicle: Vehicle, wait_s: float) -> float:
    return vehicle_bid(vehicle.vot, wait_s, vehicle.alpha1, vehicle.alpha2)


def bid_distance_factors(
    now: int,
    phase_lanes: dict[int, list[LaneTraffic]],
    active_phase: Optional[int],
) -> dict[str, float]:
    """Average queued wait per lane, for every bidding phase currently on red.

    Lanes of the active (green) phase are skipped; their distance is carried.
    Empty lanes contribute a factor of zero.
    """
    factors: dict[str, float] = {}
    for phase, lanes in phase_lanes.items():
        if phase == active_phase:
            continue
        for lt in lanes:
            q = len(lt.queue)
            factors[lt.lane.id] = lt.queue_wait_total(now) / q if q > 0 else 0.0
    return factors


def phase_distance(lane_distances: Sequence[float], n_lanes: int, mode: str) -> float:
    """One bidding distance for a whole phase from its per-lane values.

    ``literal`` divides the lane maximum by the phase's active lane count;
    ``prose`` applies the plain maximum to every lane.
    """
    peak = max(lane_distances)
    return peak / n_lanes if mode == "literal" else peak


def bid_distances(
    factors: dict[str, float],
    phase_lanes: dict[int, list[LaneTraffic]],
    active_phase: Optional[int],
    carried: dict[str, float],
    params: ControllerParams,
) -> dict[str, float]:
    """Final per-lane bidding distances for every bidding phase.

    Red phases share out ``d_min .. max(d_min, d_max)`` by wait factor (all of
    ``d_min`` when no red lane holds a queue), then one value is applied to the
    whole phase via :func:`phase_distance`. The active phase's lanes reuse
    their carried distance untouched. Everything is floored at the minimum
    vehicle spacing so a lone stopped vehicle can always bid.
    """
    spacing_min = params.spacing_min_m
    total = math.fsum(factors.values())
    d_max = (params.min_green_s / params.saturation_headway_s) * params.spacing_max_m
    out: dict[str, float] = {}
    for phase in sorted(phase_lanes):
        lanes = phase_lanes[phase]
        if not lanes:
            continue
        if phase == active_phase:
            for lt in lanes:
                out[lt.lane.id] = max(spacing_min, carried.get(lt.lane.id, spacing_min))
            continue
        d_min = len(lanes) * spacing_min
        upper = max(d_max, d_min)
        fresh = []
        for lt in lanes:
            share = factors[lt.lane.id] / total if total > 0.0 else 0.0
            fresh.append(d_min + (upper - d_min) * share)
        value = max(spacing_min, phase_distance(fresh, len(lanes), params.bid_distance_mode))
        for lt in lanes:
            out[lt.lane.id] = value
    return out


@dataclass
class PhaseBids:
    total: float
    queue_sum: int
    bids: list[tuple[Vehicle, float]] = field(default_factory=list)


def collect_phase_bids(
    now: int,
    eligible: set[int],
    phase_lanes: dict[int, list[LaneTraffic]],
    distances: dict[str, float],
    bid_fn: BidFunction = default_bid,
) -> dict[int, PhaseBids]:
    """Per-phase bid totals over vehicles within their lane's bidding distance."""
    collected: dict[int, PhaseBids] = {}
    for phase in sorted(eligible):
        lanes = phase_lanes.get(phase, [])
        entries: list[tuple[Vehicle, float]] = []
        queue_sum = 0
        for lt in lanes:
            d = distances.get(lt.lane.id, 0.0)
            queue_sum += len(lt.queue)
            for veh, wait in lt.iter_bidders(now, d):
                entries.append((veh, bid_fn(veh, wait)))
        collected[phase] = PhaseBids(
            total=math.fsum(b for _, b in entries),
            queue_sum=queue_sum,
            bids=entries,
        )
    return collected


@dataclass
class AuctionResult:
    winner: int
    runner_up: Optional[int]
    totals: dict[int, float]
    payments: dict[int, float]  # vid -> euros
    scale: float  # runner-up / winner total (0 when degenerate)


def run_auction(phase_bids: dict[int, PhaseBids]) -> AuctionResult:
    """Pick winner and runner-up and settle the winners' payments.

    Ties on totals break toward the larger summed queue over the phase's
    active lanes, then the lowest phase id. Payments scale each winning bid by
    the runner-up/winner ratio; the last bidder absorbs the floating-point
    residual so receipts sum to the runner-up total.
    """
    if not phase_bids:
        raise ValueError("auction requires at least one bidding phase")
    order = sorted(
        phase_bids,
        key=lambda s: (-phase_bids[s].total, -phase_bids[s].queue_sum, s),
    )
    winner = order[0]
    runner_up = order[1] if len(order) > 1 else None
    totals = {phase: pb.total for phase, pb in phase_bids.items()}
    c_w = totals[winner]
    c_z = totals[runner_up] if runner_up is not None else 0.0

    payments: dict[int, float] = {}
    scale = 0.0
    if runner_up is not None and c_w > 0.0:
        scale = c_z / c_w
        winner_bids = phase_bids[winner].bids
        for veh, bid in winner_bids[:-1]:
            payments[veh.vid] = bid * scale
        last_veh, last_bid = winner_bids[-1]
        residual = c_z - math.fsum(payments.values())
        payments[last_veh.vid] = min(max(residual, 0.0), last_bid)
    return AuctionResult(
        winner=winner, runner_up=runner_up, totals=totals, payments=payments, scale=scale
    )


class AuctionController:
    """Signal state machine driven by repeated phase auctions.

    One decision per elapsed green grant: a repeat winner gets an extension, a
    new winner gets yellow on the outgoing movements followed by its minimum
    green. Green indications are masked every tick by the meter's active
    movements, so a movement over budget drops to red immediately.
    """

    def __init__(
        self,
        model: IntersectionModel,
        params: ControllerParams,
        meter: BudgetMeter,
        lanes_by_movement: dict[int, list[LaneTraffic]],
        log: Optional[EventLog] = None,
        bid_fn: BidFunction = default_bid,
        trace: bool = False,
        initial_phase: Optional[int] = None,
    ):
        self.model = model
        self.params = params
        self.meter = meter
        self.lanes_by_movement = lanes_by_movement
        self.log = log if log is not None else NullLog()
        self.bid_fn = bid_fn
        self.trace = trace
        self.all_phases = frozenset(model.phases)
        self.shat = initial_phase if initial_phase is not None else min(model.phases)
        self.mode = GREEN
        self.hold = params.min_green_s
        self.elapsed_green = 0
        self.eligible: set[int] = set(self.all_phases)
        self.pending: Optional[int] = None
        self.yellow_set: frozenset[int] = frozenset()
        # Seed the carried distances exactly as if the initial phase had just
        # won on an empty network.
        fresh = bid_distances(
            factors={lt.lane.id: 0.0 for lt in self._phase_lanes_for(self.shat)},
            phase_lanes={self.shat: self._phase_lanes_for(self.shat)},
            active_phase=None,
            carried={},
            params=params,
        )
        self.carried: dict[str, float] = fresh

    # ----------------------------------------------------------------- helpers

    def _phase_lanes_for(self, phase: int) -> list[LaneTraffic]:
        lanes: list[LaneTraffic] = []
        for mid in sorted(self.meter.active_movements(phase)):
            lanes.extend(self.lanes_by_movement[mid])
        return lanes

    def indications(self, t: int) -> dict[int, str]:  # noqa: ARG002
        out = {mid: RED for mid in self.model.movements}
        if self.mode == GREEN:
            for mid in self.meter.active_movements(self.shat):
                out[mid] = GREEN
        else:
            for mid in self.yellow_set:
                out[mid] = YELLOW
        return out

    # ------------------------------------------------------------------- steps

    def step(self, now: int) -> Optional[AuctionResult]:
        """Advance the state machine by the tick that just elapsed.

        Returns the auction result when a decision was due this tick.
        """
        self.hold -= 1
        if self.mode == GREEN:
            self.elapsed_green += 1
        if self.hold > 0:
            return None
        if self.mode == YELLOW:
            self.mode = GREEN
            self.shat = self.pending  # type: ignore[assignment]
            self.pending = None
            self.hold = self.params.min_green_s
            self.elapsed_green = 0
            return None
        return self._decide(now)

    def _decide(self, now: int) -> AuctionResult:
        params = self.params
        phase_lanes = {phase: self._phase_lanes_for(phase) for phase in sorted(self.eligible)}
        active = self.shat if self.shat in self.eligible else None
        factors = bid_distance_factors(now, phase_lanes, active)
        distances = bid_distances(factors, phase_lanes, active, self.carried, params)
        bids = collect_phase_bids(now, self.eligible, phase_lanes, distances, self.bid_fn)
        result = run_auction(bids)
        if self.trace:
            self._emit_trace(now, result, distances)

        winner = result.winner
        if winner == self.shat:
            self.hold = params.green_extension_s
            if self.elapsed_green + params.green_extension_s > params.max_green_s:
                self.eligible = set(self.all_phases - {winner})
        else:
            self.yellow_set = frozenset(self.meter.active_movements(self.shat))
            self.mode = YELLOW
            self.hold = params.yellow_s
            self.pending = winner
            self.eligible = set(self.all_phases)
            self.carried = {
                lt.lane.id: distances[lt.lane.id] for lt in phase_lanes.get(winner, [])
            }
        return result

    def _emit_trace(self, now: int, result: AuctionResult, distances: dict[str, float]) -> None:
        totals = ";".join(f"P{p}:{v:.6g}" for p, v in sorted(result.totals.items()))
        dists = ";".join(f"{lane}:{d:.6g}" for lane, d in sorted(distances.items()))
        paid = math.fsum(result.payments.values())
        runner = result.runner_up if result.runner_up is not None else "-"
        self.log.emit(now, "auction", result.winner, runner, totals, f"{paid:.6g}", dists)
