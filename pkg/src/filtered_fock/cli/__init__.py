"""Scenario language and command-line driver."""

from .dsl import ScenarioError, ast_to_dict, parse_scenario, pretty
from .runner import Report, run_scenario

__all__ = ["Report", "ScenarioError", "ast_to_dict", "parse_scenario", "pretty", "run_scenario"]
