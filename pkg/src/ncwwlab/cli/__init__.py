"""Scenario-driven command line front end."""
from .main import main
from .runner import describe_plan, run_scenario, write_outputs
from .scenario import Scenario, load_scenario, scenario_json_schema

__all__ = ["main", "describe_plan", "run_scenario", "write_outputs", "Scenario", "load_scenario",
           "scenario_json_schema"]
