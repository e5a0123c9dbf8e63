"""Per-inflow crossing budgets: counting, movement exclusion and period resets.

Within the activation window the meter counts stop-line crossings of each
gated arm's movements against a per-period budget. Once the count exceeds the
budget (strictly), those movements drop out of the active sets until the
period boundary restores them.

Tick ordering contract (owned by the run loop): period reset, then traffic
advance (crossings counted), then enforcement, then the controller's decision.
A crossing landing on a reset tick therefore counts toward the new period.
"""

from __future__ import annotations

from typing import Optional

from .events import EventLog, NullLog
from .model import IntersectionModel, MeteringSpec, budget_count


class MeteringError(RuntimeError):
    """Internal consistency failure, e.g. a crossing on an ungated arm."""


class BudgetMeter:
    """Tracks crossing counts per gated arm and the resulting exclusions."""

    def __init__(
        self,
        model: IntersectionModel,
        spec: MeteringSpec,
        log: Optional[EventLog] = None,
    ):
        self.model = model
        self.spec = spec
        self.log = log if log is not None else NullLog()
        self.start, self.end = spec.window
        self.tau = spec.budget_period_s
        self.arms = tuple(model.gated_arms)
        self.arm_of_movement: dict[int, str] = {}
        self.gated_by_phase: dict[int, dict[str, frozenset[int]]] = {
            phase: {} for phase in model.phases
        }
        for arm in self.arms:
            for mid in model.gated_movements(arm):
                self.arm_of_movement[mid] = arm
                phase = model.phase_of_movement(mid)
                prev = self.gated_by_phase[phase].get(arm, frozenset())
                self.gated_by_phase[phase][arm] = prev | {mid}
        # The meter is inert unless there is a gated arm, a nonempty window and
        # a budget source; an inert meter leaves runs bit-identical to ungated.
        self.configured = (
            bool(self.arms)
            and self.end > self.start
            and (spec.inflow_limit_veh_hr is not None or spec.budget_schedule is not None)
        )
        self._base_budget = (
            budget_count(spec.inflow_limit_veh_hr, self.tau)
            if spec.inflow_limit_veh_hr is not None
            else 0
        )
        self.z = 0
        self.countdown = self.tau
        self.counts: dict[str, int] = {arm: 0 for arm in self.arms}
        self.excluded_arms: set[str] = set()
        self.in_window = False
        self.period_rows: list[tuple[str, int, int, int]] = []  # arm, z, budget, delivered

    # ----------------------------------------------------------------- budgets

    def budget_for(self, arm: str, z: int) -> int:  # noqa: ARG002 (per-arm hook)
        """Budget for period ``z``; a schedule overrides the constant limit."""
        schedule = self.spec.budget_schedule
        if schedule is not None:
            return schedule[z] if z < len(schedule) else schedule[-1]
        return self._base_budget

    # ------------------------------------------------------------- tick phases

    def begin_tick(self, t: int) -> None:
        if not self.configured:
            return
        if t == self.start:
            self.z = 0
            self.countdown = self.tau
            self.counts = {arm: 0 for arm in self.arms}
            self.excluded_arms.clear()
            self.in_window = True
        inside = self.start <= t < self.end
        if inside and self.countdown == 0:
            self._close_period(t, "reset")
            self.z += 1
            self.countdown = self.tau
        elif self.in_window and not inside:
            self._close_period(t, "period_end")
        self.in_window = inside

    def record_crossing(self, arm: str, t: int) -> None:
        """Count a stop-line crossing on a gated arm (loop-detector style)."""
        if arm not in self.counts:
            raise MeteringError(f"crossing recorded for unknown gated arm {arm!r}")
        self.counts[arm] += 1

    def enforce(self, t: int) -> set[str]:
        """Exclude arms whose count strictly exceeds the period budget."""
        if not (self.configured and self.in_window):
            return self.excluded_arms
        for arm in self.arms:
            if arm not in self.excluded_arms and self.counts[arm] > self.budget_for(arm, self.z):
                self.excluded_arms.add(arm)
                self.log.emit(
                    t, "budget", arm, "exceeded", self.z, self.counts[arm],
                    self.budget_for(arm, self.z),
                )
        return self.excluded_arms

    def end_tick(self, t: int) -> None:  # noqa: ARG002
        if self.configured and self.in_window:
            self.countdown -= 1

    def finish(self, horizon: int) -> None:
        """Close the final period if the horizon ends inside the window."""
        if self.configured and self.in_window:
            self._close_period(horizon, "period_end")
            self.in_window = False

    def _close_period(self, t: int, what: str) -> None:
        for arm in self.arms:
            budget = self.budget_for(arm, self.z)
            self.period_rows.append((arm, self.z, budget, self.counts[arm]))
            self.log.emit(t, "budget", arm, what, self.z, self.counts[arm], budget)
            self.counts[arm] = 0
        self.excluded_arms.clear()

    # ------------------------------------------------------------------ queries

    def movement_arm(self, movement: int) -> Optional[str]:
        """Gated arm this movement drains, or None for ungated movements."""
        return self.arm_of_movement.get(movement)

    def active_movements(self, phase: int) -> frozenset[int]:
        """Movements of a phase currently allowed to run and bid."""
        members = frozenset(self.model.phases[phase])
        if not self.excluded_arms:
            return members
        dropped: set[int] = set()
        for arm in self.excluded_arms:
            dropped |= self.gated_by_phase[phase].get(arm, frozenset())
        return members - dropped

    def max_overshoot(self) -> Optional[int]:
        """Largest (delivered - budget) over completed periods, if any."""
        if not self.period_rows:
            return None
        return max(delivered - budget for _, _, budget, delivered in self.period_rows)
