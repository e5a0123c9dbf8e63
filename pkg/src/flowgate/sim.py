"""Point-queue traffic dynamics advanced in 1-second ticks.

Vehicles traverse their lane at free-flow speed, stack in a vertical queue at
the stop line (one slot every ``spacing_min_m`` metres) and discharge one per
saturation headway while their movement shows green. Waiting time is counted
lazily from the queue-join tick so per-tick work stays O(lanes), not
O(vehicles).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .events import EventLog
from .model import DemandSpec, IntersectionModel, Lane

GREEN = "green"
YELLOW = "yellow"
RED = "red"


@dataclass(slots=True)
class Vehicle:
    vid: int
    movement: int
    lane: str
    vot: float  # euro/hr
    alpha1: float  # impatience slope
    alpha2: float  # impatience midpoint, s
    t_arrival: int
    t_entry: int  # tick the vehicle physically entered the lane
    t_join: int = -1  # queue-join tick; -1 while approaching
    t_exit: int = -1  # stop-line crossing tick; -1 while in the model

    @property
    def exited(self) -> bool:
        return self.t_exit >= 0

    @property
    def queued(self) -> bool:
        return self.t_join >= 0 and not self.exited


def vehicle_delay(vehicle: Vehicle, free_flow_time_s: float) -> float:
    """Door-to-door delay: travel time minus unimpeded traversal, floored at 0."""
    if not vehicle.exited:
        raise ValueError(f"vehicle {vehicle.vid} has not exited; delay is undefined")
    return max(0.0, (vehicle.t_exit - vehicle.t_arrival) - free_flow_time_s)


def sample_turn_kind(u: float, demand: DemandSpec) -> str:
    """Map a uniform draw to a turn: [0,left) left, [left,left+right) right, rest through."""
    if u < demand.turn_share_left:
        return "left"
    if u < demand.turn_share_left + demand.turn_share_right:
        return "right"
    return "through"


class LaneTraffic:
    """Runtime state of one lane: approaching stream, vertical queue, overflow."""

    __slots__ = (
        "lane",
        "spacing",
        "storage",
        "approaching",
        "queue",
        "overflow",
        "acc",
        "was_green",
        "join_time_sum",
        "n_assigned",
        "n_exits",
    )

    def __init__(self, lane: Lane, spacing_m: float):
        self.lane = lane
        self.spacing = spacing_m
        self.storage = int(lane.length_m // spacing_m)
        self.approaching: deque[Vehicle] = deque()
        self.queue: deque[Vehicle] = deque()
        self.overflow: deque[Vehicle] = deque()
        self.acc = 0  # progress (s) toward the next headway-spaced departure
        self.was_green = False
        self.join_time_sum = 0  # sum of t_join over queued vehicles
        self.n_assigned = 0
        self.n_exits = 0

    def occupancy(self) -> int:
        return len(self.approaching) + len(self.queue)

    def in_model(self) -> int:
        return self.occupancy() + len(self.overflow)

    def admit(self, vehicle: Vehicle, t: int) -> None:
        vehicle.t_entry = t
        self.approaching.append(vehicle)

    def admit_queued(self, vehicle: Vehicle, t_join: int) -> None:
        vehicle.t_join = t_join
        self.queue.append(vehicle)
        self.join_time_sum += t_join

    def queue_wait_total(self, now: int) -> float:
        """Sum of accumulated stopped time over queued vehicles."""
        return len(self.queue) * now - self.join_time_sum

    def approach_position(self, vehicle: Vehicle, now: int) -> float:
        return max(0.0, self.lane.length_m - self.lane.speed_ms * (now - vehicle.t_entry))

    def iter_bidders(self, now: int, max_distance: float) -> Iterator[tuple[Vehicle, float]]:
        """Vehicles within ``max_distance`` of the stop line with their waits.

        Queue head first (slot k sits at k*spacing), then any approaching
        vehicles already inside the distance (their wait is zero).
        """
        for idx, veh in enumerate(self.queue):
            if idx * self.spacing > max_distance:
                break
            yield veh, float(now - veh.t_join)
        for veh in self.approaching:
            if self.lane.length_m - self.lane.speed_ms * (now - veh.t_entry) <= max_distance:
                yield veh, 0.0
            else:
                break


class TrafficEngine:
    """Owns all lane state for one replication and advances it tick by tick."""

    def __init__(
        self,
        model: IntersectionModel,
        demand: DemandSpec,
        rng: np.random.Generator,
        horizon_s: int,
        spacing_min_m: float,
        saturation_headway_s: int,
        log: Optional[EventLog] = None,
    ):
        self.model = model
        self.demand = demand
        self.rng = rng
        self.horizon = horizon_s
        self.rho = saturation_headway_s
        self.log = log if log is not None else EventLog(keep=False)
        self.lanes: dict[str, LaneTraffic] = {
            lane.id: LaneTraffic(lane, spacing_min_m) for lane in model.lanes
        }
        self._lane_list = list(self.lanes.values())
        self.lanes_by_movement: dict[int, list[LaneTraffic]] = {
            mid: [self.lanes[l.id] for l in model.lanes_of_movement(mid)]
            for mid in model.movements
        }
        # All per-arm Poisson counts are drawn up front (arm order fixed) so a
        # seed pins the whole arrival pattern.
        lam = demand.arrival_rate_veh_hr / 3600.0
        self._arrival_counts = {arm: rng.poisson(lam, size=horizon_s) for arm in model.arms}
        self._movement_of_arm = {
            arm: {
                m.kind: m.id for m in model.movements.values() if m.origin == arm
            }
            for arm in model.arms
        }
        self._next_vid = 0
        self.arrivals_by_arm = {arm: 0 for arm in model.arms}
        self.n_spawned = 0
        self.n_exited = 0
        self.n_deferrals = 0
        self.delay_sum = 0.0
        self.max_wait = 0.0

    # ------------------------------------------------------------------ demand

    def spawn_arrivals(self, t: int) -> list[Vehicle]:
        """Draw this tick's Poisson arrivals and place them on lanes."""
        created: list[Vehicle] = []
        log = self.log
        for arm in self.model.arms:
            count = self._arrival_counts[arm][t]
            for _ in range(count):
                kind = sample_turn_kind(self.rng.random(), self.demand)
                mid = self._movement_of_arm[arm]["left" if kind == "left" else "through_right"]
                vot = self.rng.uniform(*self.demand.vot_eur_hr)
                a1 = self.rng.uniform(*self.demand.impatience_slope)
                a2 = self.rng.uniform(*self.demand.impatience_midpoint_s)
                lt = self._pick_lane(mid)
                veh = Vehicle(
                    vid=self._next_vid,
                    movement=mid,
                    lane=lt.lane.id,
                    vot=vot,
                    alpha1=a1,
                    alpha2=a2,
                    t_arrival=t,
                    t_entry=t,
                )
                self._next_vid += 1
                lt.n_assigned += 1
                if lt.occupancy() < lt.storage:
                    lt.admit(veh, t)
                else:
                    # Lane storage full: hold the vehicle at the entrance.
                    lt.overflow.append(veh)
                    self.n_deferrals += 1
                self.arrivals_by_arm[arm] += 1
                self.n_spawned += 1
                created.append(veh)
                if log.enabled:
                    log.emit(t, "arrival", veh.vid, arm, mid, lt.lane.id)
        return created

    def _pick_lane(self, movement: int) -> LaneTraffic:
        """Least-loaded lane serving the movement; ties go to the lowest index."""
        options = self.lanes_by_movement[movement]
        return min(options, key=lambda lt: (lt.in_model(), lt.lane.index))

    # ----------------------------------------------------------------- dynamics

    def advance(self, t: int, indications: dict[int, str]) -> list[Vehicle]:
        """Move traffic through one tick under the given indications.

        Returns the vehicles that crossed the stop line this tick.
        """
        crossings: list[Vehicle] = []
        log = self.log
        rho = self.rho
        for lt in self._lane_list:
            green = indications.get(lt.lane.movement) == GREEN
            # Queue discharge: one departure per saturation headway of green,
            # with the accumulator restarted whenever green begins or the
            # queue empties (start-up time, and no banked service).
            if green:
                if not lt.was_green:
                    lt.acc = 0
                if lt.queue:
                    lt.acc += 1
                    if lt.acc >= rho:
                        lt.acc -= rho
                        veh = lt.queue.popleft()
                        lt.join_time_sum -= veh.t_join
                        veh.t_exit = t
                        lt.n_exits += 1
                        self.n_exited += 1
                        wait = float(t - veh.t_join)
                        if wait > self.max_wait:
                            self.max_wait = wait
                        delay = vehicle_delay(veh, lt.lane.free_flow_time_s)
                        self.delay_sum += delay
                        crossings.append(veh)
                        if log.enabled:
                            log.emit(t, "cross", veh.vid, lt.lane.id, veh.movement)
                            log.emit(t, "exit", veh.vid, delay)
                else:
                    lt.acc = 0
                lt.was_green = True
            else:
                lt.was_green = False

            # Approaching vehicles join the back of the queue once their
            # end-of-tick position reaches the last occupied slot.
            back = len(lt.queue) * lt.spacing
            while lt.approaching:
                veh = lt.approaching[0]
                pos = lt.lane.length_m - lt.lane.speed_ms * (t + 1 - veh.t_entry)
                if pos > back:
                    break
                lt.approaching.popleft()
                lt.admit_queued(veh, t)
                back += lt.spacing
                if log.enabled:
                    log.emit(t, "join", veh.vid, lt.lane.id, len(lt.queue))

            # Deferred vehicles enter as storage frees up.
            while lt.overflow and lt.occupancy() < lt.storage:
                lt.admit(lt.overflow.popleft(), t)
        return crossings

    # ------------------------------------------------------------------ queries

    def vehicle_position(self, vehicle: Vehicle, now: int) -> float:
        """Distance from the stop line (m); queued slots sit spacing apart."""
        lt = self.lanes[vehicle.lane]
        if vehicle.exited:
            return 0.0
        if vehicle.queued:
            for idx, veh in enumerate(lt.queue):
                if veh.vid == vehicle.vid:
                    return idx * lt.spacing
            raise ValueError(f"vehicle {vehicle.vid} marked queued but not in lane {vehicle.lane}")
        return lt.approach_position(vehicle, now)

    def vehicle_speed(self, vehicle: Vehicle, now: int) -> float:  # noqa: ARG002
        """Free-flow while approaching, zero once queued or exited."""
        if vehicle.queued or vehicle.exited:
            return 0.0
        return self.lanes[vehicle.lane].lane.speed_ms

    def vehicle_wait(self, vehicle: Vehicle, now: int) -> float:
        if vehicle.queued:
            return float(now - vehicle.t_join)
        return 0.0

    def arm_queue_count(self, arm: str) -> int:
        """Vehicles stopped on an arm, including any held at the entrance."""
        return sum(
            len(lt.queue) + len(lt.overflow)
            for lt in self._lane_list
            if lt.lane.arm == arm
        )

    def final_max_wait(self, horizon: int) -> float:
        """Largest wait seen, counting vehicles still queued at the horizon."""
        worst = self.max_wait
        for lt in self._lane_list:
            if lt.queue:
                head = lt.queue[0]
                worst = max(worst, float(horizon - head.t_join))
        return worst

    def conservation_ok(self) -> bool:
        """Arrivals equal exits plus vehicles still in the model, per lane."""
        for lt in self._lane_list:
            if lt.n_assigned != lt.n_exits + lt.in_model():
                return False
        return self.n_spawned == self.n_exited + sum(lt.in_model() for lt in self._lane_list)
