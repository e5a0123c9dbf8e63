"""Deterministic intersection simulator with auction-based signal control
and perimeter flow metering, plus a volume-based fixed-time benchmark."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    ControllerParams,
    DemandSpec,
    ExperimentSpec,
    IntersectionModel,
    MeteringSpec,
    ScenarioConfig,
    ScenarioError,
    budget_count,
    build_intersection,
    default_scenario_path,
    load_default_scenario,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
