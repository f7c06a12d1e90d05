"""Simulation harness: scenarios, presets, Monte Carlo sweeps, results and CLI."""

from .presets import PRESETS, describe_presets, get_preset, preset_scenario
from .results import CSV_HEADER, BERCurve, ResultRow, curve_from_rows, read_results, wilson_interval, write_results
from .scenario import Scenario, StopRule, expand_frame_lens, load_scenario, parse_scenario, save_scenario, scenario_to_dict
from .simulate import WindowOutcome, run_frame_window, run_sweep

__all__ = [
    "CSV_HEADER",
    "curve_from_rows",
    "scenario_to_dict",
    "PRESETS",
    "describe_presets",
    "get_preset",
    "preset_scenario",
    "BERCurve",
    "ResultRow",
    "read_results",
    "wilson_interval",
    "write_results",
    "Scenario",
    "StopRule",
    "expand_frame_lens",
    "load_scenario",
    "parse_scenario",
    "save_scenario",
    "WindowOutcome",
    "run_frame_window",
    "run_sweep",
]
