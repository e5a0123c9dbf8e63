"""Static scenario model: intersection geometry, demand, metering and controller
parameters, plus loading/validation of scenario configuration files.

A scenario file is a JSON document with five sections::

    {
      "name": "...",
      "intersection": {...},
      "demand": {...},
      "controller": {...},
      "metering": {...},
      "experiment": {...}
    }

The shipped test-case file (``flowgate/data/testcase.json``) is the reference
document for the format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Optional, Sequence

ARMS = ("N", "E", "S", "W")

# Straight-ahead and left-turn destinations under right-hand traffic.
_OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}
_LEFT_DEST = {"N": "E", "S": "W", "E": "S", "W": "N"}

# Canonical movement numbering: phase 1 = E/W through+right, phase 2 = E/W left,
# phase 3 = N/S through+right, phase 4 = N/S left.
_MOVEMENT_IDS = {
    ("E", "through_right"): 1,
    ("E", "left"): 2,
    ("N", "through_right"): 3,
    ("N", "left"): 4,
    ("W", "through_right"): 5,
    ("W", "left"): 6,
    ("S", "through_right"): 7,
    ("S", "left"): 8,
}
_PHASES = {1: (1, 5), 2: (2, 6), 3: (3, 7), 4: (4, 8)}


class ScenarioError(Exception):
    """Raised when a scenario file cannot be parsed or violates an invariant."""


@dataclass(frozen=True)
class Movement:
    id: int
    origin: str
    destination: str
    kind: str  # "left" | "through_right"


@dataclass(frozen=True)
class Lane:
    id: str
    arm: str
    index: int  # 1-based position within the arm
    length_m: float
    movement: int
    speed_ms: float

    @property
    def free_flow_time_s(self) -> float:
        return self.length_m / self.speed_ms


@dataclass(frozen=True)
class IntersectionModel:
    """Four-arm intersection with eight movements grouped into four phases.

    Per arm the four incoming lanes split 1 left / 3 through, with right
    turners riding the through movement, so gating an arm's two movements
    covers all traffic leaving that arm.
    """

    arms: tuple[str, ...]
    lanes: tuple[Lane, ...]
    movements: dict[int, Movement]
    phases: dict[int, tuple[int, int]]
    gated_arms: tuple[str, ...]

    def lanes_of_movement(self, movement: int) -> tuple[Lane, ...]:
        return tuple(l for l in self.lanes if l.movement == movement)

    def phase_of_movement(self, movement: int) -> int:
        for phase, members in self.phases.items():
            if movement in members:
                return phase
        raise KeyError(movement)

    def gated_movements(self, arm: str) -> frozenset[int]:
        """Movements that carry traffic out of a gated arm."""
        return frozenset(m.id for m in self.movements.values() if m.origin == arm)

    def arm_lanes(self, arm: str) -> tuple[Lane, ...]:
        return tuple(l for l in self.lanes if l.arm == arm)


@dataclass(frozen=True)
class ControllerParams:
    min_green_s: int = 3
    max_green_s: int = 60
    green_extension_s: int = 3
    yellow_s: int = 2
    saturation_headway_s: int = 2
    spacing_min_m: float = 5.0
    spacing_max_m: float = 7.0
    bid_distance_mode: str = "literal"  # "literal" | "prose"
    fixed_cycle_s: int = 92


@dataclass(frozen=True)
class DemandSpec:
    arrival_rate_veh_hr: float = 800.0
    turn_share_left: float = 0.15
    turn_share_through: float = 0.70
    turn_share_right: float = 0.15
    lane_capacity_veh_hr: float = 900.0
    vot_eur_hr: tuple[float, float] = (20.0, 40.0)
    impatience_slope: tuple[float, float] = (0.1, 0.5)
    impatience_midpoint_s: tuple[float, float] = (20.0, 60.0)


@dataclass(frozen=True)
class MeteringSpec:
    activation_start_s: int = 3600
    activation_end_s: int = 7200
    budget_period_s: int = 300
    inflow_limit_veh_hr: Optional[float] = None
    # Optional per-period vehicle-count schedule; overrides the hourly limit
    # and leaves room for an external perimeter controller to drive budgets.
    budget_schedule: Optional[tuple[int, ...]] = None

    @property
    def window(self) -> tuple[int, int]:
        return (self.activation_start_s, self.activation_end_s)


@dataclass(frozen=True)
class ExperimentSpec:
    horizon_s: int = 10800
    replications: int = 10
    base_seed: int = 202406
    flow_limits_veh_hr: tuple[float, ...] = (100.0, 250.0, 400.0, 550.0, 700.0)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    intersection: IntersectionModel
    demand: DemandSpec
    controller: ControllerParams
    metering: MeteringSpec
    experiment: ExperimentSpec
    # Raw intersection section kept so serialization round-trips exactly.
    _intersection_raw: dict = field(default_factory=dict, compare=False)


def budget_count(limit_veh_hr: float, period_s: int) -> int:
    """Vehicle budget for one metering period: floor(limit * period / 3600)."""
    if limit_veh_hr < 0:
        raise ScenarioError("inflow limit must be >= 0")
    if period_s <= 0:
        raise ScenarioError("budget period must be > 0")
    return math.floor(limit_veh_hr * period_s / 3600.0)


def build_intersection(
    arms: Sequence[str] = ARMS,
    lane_length_m: float = 750.0,
    lanes_per_arm: int = 4,
    free_flow_speed_kmh: float = 50.0,
    gated_arms: Sequence[str] = (),
) -> IntersectionModel:
    """Construct the canonical four-arm model.

    Lane 1 of each arm serves the left movement, lanes 2..4 the combined
    through+right movement.
    """
    if sorted(arms) != sorted(ARMS):
        raise ScenarioError(f"intersection.arms must be the four compass arms, got {list(arms)}")
    if lanes_per_arm != 4:
        raise ScenarioError("intersection.lanes_per_arm must be 4 (1 left + 3 through lanes)")
    if lane_length_m <= 0:
        raise ScenarioError("intersection.lane_length_m must be > 0")
    if free_flow_speed_kmh <= 0:
        raise ScenarioError("intersection.free_flow_speed_kmh must be > 0")
    for arm in gated_arms:
        if arm not in arms:
            raise ScenarioError(f"gated arm {arm!r} is not one of the intersection arms")

    speed_ms = free_flow_speed_kmh * 1000.0 / 3600.0
    movements = {}
    for (arm, kind), mid in _MOVEMENT_IDS.items():
        dest = _OPPOSITE[arm] if kind == "through_right" else _LEFT_DEST[arm]
        movements[mid] = Movement(id=mid, origin=arm, destination=dest, kind=kind)

    lanes = []
    for arm in ARMS:  # fixed N,E,S,W order regardless of input ordering
        left_id = _MOVEMENT_IDS[(arm, "left")]
        through_id = _MOVEMENT_IDS[(arm, "through_right")]
        for index in range(1, lanes_per_arm + 1):
            mid = left_id if index == 1 else through_id
            lanes.append(
                Lane(
                    id=f"{arm}{index}",
                    arm=arm,
                    index=index,
                    length_m=lane_length_m,
                    movement=mid,
                    speed_ms=speed_ms,
                )
            )

    return IntersectionModel(
        arms=tuple(ARMS),
        lanes=tuple(lanes),
        movements=movements,
        phases=dict(_PHASES),
        gated_arms=tuple(gated_arms),
    )


def _require(section: dict, key: str, where: str) -> Any:
    if key not in section:
        raise ScenarioError(f"missing key {where}.{key}")
    return section[key]


def _check_known_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ScenarioError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _pair(value: Any, where: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ScenarioError(f"{where} must be a [low, high] pair")
    lo, hi = float(value[0]), float(value[1])
    if lo > hi:
        raise ScenarioError(f"{where} bounds out of order: {lo} > {hi}")
    return (lo, hi)


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    _check_known_keys(
        doc, {"name", "intersection", "demand", "controller", "metering", "experiment"}, "scenario"
    )
    name = doc.get("name", "scenario")

    inter = _require(doc, "intersection", "scenario")
    _check_known_keys(
        inter,
        {"arms", "lane_length_m", "lanes_per_arm", "free_flow_speed_kmh", "gated_arms"},
        "intersection",
    )
    intersection = build_intersection(
        arms=inter.get("arms", list(ARMS)),
        lane_length_m=float(inter.get("lane_length_m", 750.0)),
        lanes_per_arm=int(inter.get("lanes_per_arm", 4)),
        free_flow_speed_kmh=float(inter.get("free_flow_speed_kmh", 50.0)),
        gated_arms=inter.get("gated_arms", []),
    )

    dem = doc.get("demand", {})
    _check_known_keys(
        dem,
        {
            "arrival_rate_veh_hr",
            "turn_shares",
            "lane_capacity_veh_hr",
            "vot_eur_hr",
            "impatience_slope",
            "impatience_midpoint_s",
        },
        "demand",
    )
    shares = dem.get("turn_shares", {"left": 0.15, "through": 0.70, "right": 0.15})
    _check_known_keys(shares, {"left", "through", "right"}, "demand.turn_shares")
    demand = DemandSpec(
        arrival_rate_veh_hr=float(dem.get("arrival_rate_veh_hr", 800.0)),
        turn_share_left=float(shares.get("left", 0.15)),
        turn_share_through=float(shares.get("through", 0.70)),
        turn_share_right=float(shares.get("right", 0.15)),
        lane_capacity_veh_hr=float(dem.get("lane_capacity_veh_hr", 900.0)),
        vot_eur_hr=_pair(dem.get("vot_eur_hr", [20.0, 40.0]), "demand.vot_eur_hr"),
        impatience_slope=_pair(dem.get("impatience_slope", [0.1, 0.5]), "demand.impatience_slope"),
        impatience_midpoint_s=_pair(
            dem.get("impatience_midpoint_s", [20.0, 60.0]), "demand.impatience_midpoint_s"
        ),
    )

    ctl = doc.get("controller", {})
    _check_known_keys(
        ctl,
        {
            "min_green_s",
            "max_green_s",
            "green_extension_s",
            "yellow_s",
            "saturation_headway_s",
            "spacing_min_m",
            "spacing_max_m",
            "bid_distance_mode",
            "fixed_cycle_s",
        },
        "controller",
    )
    controller = ControllerParams(
        min_green_s=int(ctl.get("min_green_s", 3)),
        max_green_s=int(ctl.get("max_green_s", 60)),
        green_extension_s=int(ctl.get("green_extension_s", 3)),
        yellow_s=int(ctl.get("yellow_s", 2)),
        saturation_headway_s=int(ctl.get("saturation_headway_s", 2)),
        spacing_min_m=float(ctl.get("spacing_min_m", 5.0)),
        spacing_max_m=float(ctl.get("spacing_max_m", 7.0)),
        bid_distance_mode=str(ctl.get("bid_distance_mode", "literal")),
        fixed_cycle_s=int(ctl.get("fixed_cycle_s", 92)),
    )

    met = doc.get("metering", {})
    _check_known_keys(
        met,
        {
            "activation_start_s",
            "activation_end_s",
            "budget_period_s",
            "inflow_limit_veh_hr",
            "budget_schedule",
        },
        "metering",
    )
    raw_limit = met.get("inflow_limit_veh_hr", None)
    raw_schedule = met.get("budget_schedule", None)
    metering = MeteringSpec(
        activation_start_s=int(met.get("activation_start_s", 3600)),
        activation_end_s=int(met.get("activation_end_s", 7200)),
        budget_period_s=int(met.get("budget_period_s", 300)),
        inflow_limit_veh_hr=None if raw_limit is None else float(raw_limit),
        budget_schedule=None if raw_schedule is None else tuple(int(v) for v in raw_schedule),
    )

    exp = doc.get("experiment", {})
    _check_known_keys(
        exp,
        {"horizon_s", "replications", "base_seed", "flow_limits_veh_hr"},
        "experiment",
    )
    experiment = ExperimentSpec(
        horizon_s=int(exp.get("horizon_s", 10800)),
        replications=int(exp.get("replications", 10)),
        base_seed=int(exp.get("base_seed", 202406)),
        flow_limits_veh_hr=tuple(
            float(v) for v in exp.get("flow_limits_veh_hr", [100, 250, 400, 550, 700])
        ),
    )

    config = ScenarioConfig(
        name=str(name),
        intersection=intersection,
        demand=demand,
        controller=controller,
        metering=metering,
        experiment=experiment,
        _intersection_raw=dict(inter),
    )
    validate_scenario(config)
    return config


def validate_scenario(config: ScenarioConfig) -> None:
    """Check every model invariant; raise ScenarioError naming the violation."""
    model = config.intersection

    seen: dict[int, int] = {}
    for phase, members in model.phases.items():
        if len(members) != 2:
            raise ScenarioError(f"phase {phase} must serve exactly 2 movements")
        for mid in members:
            if mid in seen:
                raise ScenarioError(f"movement {mid} assigned to phases {seen[mid]} and {phase}")
            seen[mid] = phase
    if set(seen) != set(model.movements):
        raise ScenarioError("every movement must belong to exactly one phase")
    for arm in model.arms:
        if len(model.arm_lanes(arm)) != 4:
            raise ScenarioError(f"arm {arm} must have exactly 4 incoming lanes")
    for lane in model.lanes:
        if lane.movement not in model.movements:
            raise ScenarioError(f"lane {lane.id} serves unknown movement {lane.movement}")
        if lane.length_m <= 0:
            raise ScenarioError(f"lane {lane.id} length must be > 0")
    for arm in model.gated_arms:
        for mid in model.gated_movements(arm):
            phase = model.phase_of_movement(mid)
            if mid not in model.phases[phase]:
                raise ScenarioError(f"gated movement {mid} missing from phase {phase}")

    d = config.demand
    share_sum = d.turn_share_left + d.turn_share_through + d.turn_share_right
    if abs(share_sum - 1.0) > 1e-9:
        raise ScenarioError(f"demand.turn_shares must sum to 1, got {share_sum}")
    if min(d.turn_share_left, d.turn_share_through, d.turn_share_right) < 0:
        raise ScenarioError("demand.turn_shares must be nonnegative")
    if d.arrival_rate_veh_hr < 0:
        raise ScenarioError("demand.arrival_rate_veh_hr must be >= 0")
    if d.lane_capacity_veh_hr < 0:
        raise ScenarioError("demand.lane_capacity_veh_hr must be >= 0")

    c = config.controller
    for key in (
        "min_green_s",
        "max_green_s",
        "green_extension_s",
        "yellow_s",
        "saturation_headway_s",
    ):
        if getattr(c, key) <= 0:
            raise ScenarioError(f"controller.{key} must be a positive integer number of seconds")
    if c.min_green_s > c.max_green_s:
        raise ScenarioError("controller.min_green_s must be <= controller.max_green_s")
    if c.spacing_min_m <= 0 or c.spacing_min_m > c.spacing_max_m:
        raise ScenarioError("controller spacing must satisfy 0 < spacing_min_m <= spacing_max_m")
    if c.bid_distance_mode not in ("literal", "prose"):
        raise ScenarioError(
            f"controller.bid_distance_mode must be 'literal' or 'prose', got {c.bid_distance_mode!r}"
        )
    n_phases = len(model.phases)
    if c.fixed_cycle_s < n_phases * (c.min_green_s + c.yellow_s):
        raise ScenarioError("controller.fixed_cycle_s cannot fit the minimum greens and yellows")

    m = config.metering
    horizon = config.experiment.horizon_s
    if m.budget_period_s <= 0:
        raise ScenarioError("metering.budget_period_s must be > 0")
    if not (0 <= m.activation_start_s <= m.activation_end_s <= horizon):
        raise ScenarioError(
            "metering activation window must satisfy 0 <= start <= end <= experiment.horizon_s"
        )
    window = m.activation_end_s - m.activation_start_s
    if window > 0 and window % m.budget_period_s != 0:
        raise ScenarioError("metering.budget_period_s must divide the activation window")
    if m.inflow_limit_veh_hr is not None and m.inflow_limit_veh_hr < 0:
        raise ScenarioError("metering.inflow_limit_veh_hr must be >= 0")
    if m.budget_schedule is not None:
        if len(m.budget_schedule) == 0:
            raise ScenarioError("metering.budget_schedule must not be empty")
        if any(v < 0 for v in m.budget_schedule):
            raise ScenarioError("metering.budget_schedule entries must be >= 0")

    e = config.experiment
    if e.horizon_s <= 0:
        raise ScenarioError("experiment.horizon_s must be > 0")
    if e.replications < 1:
        raise ScenarioError("experiment.replications must be >= 1")
    if any(v < 0 for v in e.flow_limits_veh_hr):
        raise ScenarioError("experiment.flow_limits_veh_hr entries must be >= 0")


def scenario_to_dict(config: ScenarioConfig) -> dict:
    """Serialize back to the file format; load(serialize(load(x))) == load(x)."""
    d = config.demand
    m = config.metering
    c = config.controller
    e = config.experiment
    return {
        "name": config.name,
        "intersection": {
            "arms": list(config.intersection.arms),
            "lane_length_m": config.intersection.lanes[0].length_m,
            "lanes_per_arm": 4,
            "free_flow_speed_kmh": config.intersection.lanes[0].speed_ms * 3.6,
            "gated_arms": list(config.intersection.gated_arms),
        },
        "demand": {
            "arrival_rate_veh_hr": d.arrival_rate_veh_hr,
            "turn_shares": {
                "left": d.turn_share_left,
                "through": d.turn_share_through,
                "right": d.turn_share_right,
            },
            "lane_capacity_veh_hr": d.lane_capacity_veh_hr,
            "vot_eur_hr": list(d.vot_eur_hr),
            "impatience_slope": list(d.impatience_slope),
            "impatience_midpoint_s": list(d.impatience_midpoint_s),
        },
        "controller": {
            "min_green_s": c.min_green_s,
            "max_green_s": c.max_green_s,
            "green_extension_s": c.green_extension_s,
            "yellow_s": c.yellow_s,
            "saturation_headway_s": c.saturation_headway_s,
            "spacing_min_m": c.spacing_min_m,
            "spacing_max_m": c.spacing_max_m,
            "bid_distance_mode": c.bid_distance_mode,
            "fixed_cycle_s": c.fixed_cycle_s,
        },
        "metering": {
            "activation_start_s": m.activation_start_s,
            "activation_end_s": m.activation_end_s,
            "budget_period_s": m.budget_period_s,
            "inflow_limit_veh_hr": m.inflow_limit_veh_hr,
            "budget_schedule": None if m.budget_schedule is None else list(m.budget_schedule),
        },
        "experiment": {
            "horizon_s": e.horizon_s,
            "replications": e.replications,
            "base_seed": e.base_seed,
            "flow_limits_veh_hr": list(e.flow_limits_veh_hr),
        },
    }


def load_scenario(path: str) -> ScenarioConfig:
    """Load and validate a scenario file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file {path} is not valid JSON: {exc}")
    return scenario_from_dict(doc)


def default_scenario_path() -> str:
    """Path of the shipped four-arm test-case scenario."""
    return str(resources.files("flowgate.data").joinpath("testcase.json"))


def load_default_scenario() -> ScenarioConfig:
    return load_scenario(default_scenario_path())
