"""Volume-based fixed-time benchmark controller.

Outside the metering window the cycle splits green time equally across the
four phases. While metering is active, the phases serving the gated arm get a
green computed from the target inflow (cycle * target / saturation discharge
of the gated lane group) and the freed time goes to the other phases in
proportion to their base splits. Both movements of a phase always share its
green; there is no per-movement exclusion and no hard vehicle-count cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .model import ControllerParams, IntersectionModel, MeteringSpec, ScenarioError
from .sim import GREEN, RED, YELLOW


@dataclass(frozen=True)
class FixedTimePlan:
    cycle_s: int
    greens: dict[int, int]  # phase -> green seconds, in cycle order
    yellow_s: int
    order: tuple[int, ...]
    gated_phases: tuple[int, ...]

    def validate(self, min_green_s: int) -> None:
        total = sum(self.greens[p] + self.yellow_s for p in self.order)
        if total != self.cycle_s:
            raise ScenarioError(
                f"fixed-time plan does not fill the cycle: {total} != {self.cycle_s}"
            )
        for phase, g in self.greens.items():
            if g < min_green_s:
                raise ScenarioError(
                    f"fixed-time plan infeasible: phase {phase} green {g} s "
                    f"< minimum {min_green_s} s"
                )


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def gated_green_time(
    f_target_veh_hr: float,
    sat_flow_veh_hr: float,
    cycle_s: int,
    min_green_s: int = 3,
    other_min_total_s: int = 9,
) -> int:
    """Green seconds that meter the target inflow over one cycle."""
    if f_target_veh_hr < 0:
        raise ScenarioError("target inflow must be >= 0")
    if sat_flow_veh_hr <= 0:
        raise ScenarioError("saturation flow must be > 0")
    if cycle_s <= 0:
        raise ScenarioError("cycle length must be > 0")
    g = _round_half_up(cycle_s * f_target_veh_hr / sat_flow_veh_hr)
    return max(min_green_s, min(g, cycle_s - other_min_total_s))


def _spread(total: int, n: int) -> list[int]:
    """Split ``total`` seconds over ``n`` phases, remainder to the earliest."""
    q, r = divmod(total, n)
    return [q + (1 if i < r else 0) for i in range(n)]


def build_fixed_plan(
    model: IntersectionModel,
    params: ControllerParams,
    activation: bool,
    limit_veh_hr: Optional[float] = None,
) -> FixedTimePlan:
    order = tuple(sorted(model.phases))
    n = len(order)
    cycle = params.fixed_cycle_s
    yellow = params.yellow_s
    green_budget = cycle - n * yellow
    if green_budget < n * params.min_green_s:
        raise ScenarioError("cycle too short for minimum greens")

    gated_movements: set[int] = set()
    for arm in model.gated_arms:
        gated_movements |= model.gated_movements(arm)
    gated_phases = tuple(
        p for p in order if any(m in gated_movements for m in model.phases[p])
    )

    if not activation or limit_veh_hr is None or not gated_phases:
        greens = dict(zip(order, _spread(green_budget, n)))
        plan = FixedTimePlan(cycle_s=cycle, greens=greens, yellow_s=yellow, order=order,
                             gated_phases=gated_phases)
        plan.validate(params.min_green_s)
        return plan

    n_gated_lanes = sum(len(model.lanes_of_movement(m)) for m in gated_movements)
    sat_flow = n_gated_lanes * 3600.0 / params.saturation_headway_s
    others = [p for p in order if p not in gated_phases]
    g_gated = gated_green_time(
        limit_veh_hr,
        sat_flow,
        cycle,
        min_green_s=params.min_green_s,
        other_min_total_s=len(others) * params.min_green_s,
    )
    remaining = green_budget - len(gated_phases) * g_gated
    if remaining < len(others) * params.min_green_s:
        raise ScenarioError("fixed-time plan infeasible: gated green leaves too little cycle")
    greens = {p: g_gated for p in gated_phases}
    greens.update(zip(others, _spread(remaining, len(others))))
    plan = FixedTimePlan(cycle_s=cycle, greens={p: greens[p] for p in order},
                         yellow_s=yellow, order=order, gated_phases=gated_phases)
    plan.validate(params.min_green_s)
    return plan


def plan_indications(plan: FixedTimePlan, model: IntersectionModel, offset_s: int) -> dict[int, str]:
    """Indications at an offset into the cycle; yellow follows each green."""
    pos = offset_s % plan.cycle_s
    out = {mid: RED for mid in model.movements}
    for phase in plan.order:
        g = plan.greens[phase]
        if pos < g:
            for mid in model.phases[phase]:
                out[mid] = GREEN
            return out
        pos -= g
        if pos < plan.yellow_s:
            for mid in model.phases[phase]:
                out[mid] = YELLOW
            return out
        pos -= plan.yellow_s
    raise AssertionError("cycle position beyond plan length")


class FixedTimeController:
    """Cyclic plan, switching to the volume-based plan during activation.

    The cycle restarts at each regime boundary so the plan inside a regime is
    strictly periodic.
    """

    def __init__(
        self,
        model: IntersectionModel,
        params: ControllerParams,
        metering: MeteringSpec,
        limit_veh_hr: Optional[float] = None,
    ):
        self.model = model
        self.start, self.end = metering.window
        self.base_plan = build_fixed_plan(model, params, activation=False)
        if limit_veh_hr is not None and self.end > self.start:
            self.active_plan = build_fixed_plan(
                model, params, activation=True, limit_veh_hr=limit_veh_hr
            )
        else:
            self.active_plan = self.base_plan

    def indications(self, t: int) -> dict[int, str]:
        if self.start <= t < self.end:
            return plan_indications(self.active_plan, self.model, t - self.start)
        offset = t if t < self.start else t - self.end
        return plan_indications(self.base_plan, self.model, offset)

    def step(self, now: int) -> None:  # noqa: ARG002 (stateless)
        return None
