"""Synthetic CDR scenarios with planted ground truth."""

from .generator import generate_cdr, generate_cdr_frame, generate_gravity_flows, make_rng, write_cdr_frame
from .presets import load_preset, preset_names
from .scenario import (
    AgentSpec,
    GravityParams,
    ScenarioConfig,
    ScenarioError,
    ScheduleEntry,
    format_scenario,
    load_scenario,
    parse_scenario,
)

__all__ = [
    "AgentSpec",
    "GravityParams",
    "ScenarioConfig",
    "ScenarioError",
    "ScheduleEntry",
    "format_scenario",
    "generate_cdr",
    "generate_cdr_frame",
    "generate_gravity_flows",
    "load_preset",
    "load_scenario",
    "make_rng",
    "parse_scenario",
    "preset_names",
    "write_cdr_frame",
]
