"""Scenario presets for the published experiment configurations.

Budgets (stop rules, SNR grids) are ours; the source figures do not state
trial counts.  Presets with several frame sizes list them in ``frame_len``.
"""

from __future__ import annotations

import copy
from typing import Dict

from ..errors import ParseError
from .scenario import Scenario, parse_scenario

__all__ = ["PRESETS", "get_preset", "preset_scenario", "describe_presets"]

_MB_DETECTORS = ["CeeaMl", "Mismatched", "TwoStage", "Zrc", "Ztc", "TwoStageZrc", "PerfectCSI"]
_STOP = {"min_errors": 200, "max_bits": 20_000_000}


def _sm4x4(name, spatial, frame, stats="genie", detectors=None, description=""):
    return {
        "name": name,
        "description": description,
        "n_tx": 4,
        "n_rx": 4,
        "block_len": 4,
        "frame_len": frame,
        "mod_kind": "PSK",
        "mod_order": 4,
        "doppler": 0.01,
        "spatial": spatial,
        "estimator": "MB",
        "detectors": detectors or list(_MB_DETECTORS),
        "snr_db": [0, 5, 10, 15, 20, 25],
        "stats_mode": stats,
        "seed": 2024,
        "stop": dict(_STOP),
    }


def _sm2x4(name, estimator, mod_kind, order, r, frame, description=""):
    dets = ["CeeaMl", "Mismatched", "Zrc", "Ztc", "PerfectCSI"]
    if mod_kind == "PSK":
        dets.insert(2, "TwoStage")
    return {
        "name": name,
        "description": description,
        "n_tx": 2,
        "n_rx": 4,
        "block_len": 2,
        "frame_len": frame,
        "mod_kind": mod_kind,
        "mod_order": order,
        "doppler": 0.01,
        "spatial": {"kind": "exponential", "params": {"r": r, "t": r}},
        "estimator": estimator,
        "detectors": dets,
        "snr_db": [0, 4, 8, 12, 16, 20, 24],
        "stats_mode": "genie",
        "seed": 2024,
        "stop": dict(_STOP),
    }


PRESETS: Dict[str, dict] = {}

for _d, _tag in ((0.5, "d05"), (1.0, "d1")):
    PRESETS[f"fig-MB-bessel-{_tag}"] = _sm4x4(
        f"fig-MB-bessel-{_tag}",
        {"kind": "bessel", "params": {"spacing": _d}},
        [5, 10],
        description=f"MB detectors, Bessel correlation, spacing {_d} wavelengths, 4x4 QPSK-SM",
    )
for _r, _tag in ((0.8, "r08"), (0.5, "r05")):
    PRESETS[f"fig-MB-exp-{_tag}"] = _sm4x4(
        f"fig-MB-exp-{_tag}",
        {"kind": "exponential", "params": {"r": _r, "t": _r}},
        [5, 10],
        description=f"MB detectors, exponential correlation r=t={_r}, 4x4 QPSK-SM",
    )
    PRESETS[f"fig-MB-estcorr-{_tag}"] = _sm4x4(
        f"fig-MB-estcorr-{_tag}",
        {"kind": "exponential", "params": {"r": _r, "t": _r}},
        [5, 10],
        stats="estimated",
        detectors=["Zrc", "Ztc", "Mismatched"],
        description=f"ZRC/ZTC with blindly estimated correlation, r=t={_r}",
    )
    PRESETS[f"fig-MB-16QAM-{_tag}"] = _sm2x4(
        f"fig-MB-16QAM-{_tag}", "MB", "QAM", 16, _r, [10, 20],
        description=f"MB 16-QAM SM, N_T=B=2, N_R=4, r=t={_r}",
    )
    PRESETS[f"fig-DD-16QAM-{_tag}"] = _sm2x4(
        f"fig-DD-16QAM-{_tag}", "DD", "QAM", 16, _r, [10, 20],
        description=f"DD 16-QAM SM, N_T=B=2, N_R=4, r=t={_r}",
    )
    PRESETS[f"fig-DD-QPSK-{_tag}"] = _sm2x4(
        f"fig-DD-QPSK-{_tag}", "DD", "PSK", 4, _r, 10,
        description=f"DD QPSK SM, N_T=B=2, N_R=4, N=10, r=t={_r}",
    )
    PRESETS[f"fig-SMX-MB-{_tag}"] = {
        "name": f"fig-SMX-MB-{_tag}",
        "description": f"MB CEEA-ML for SMX, 2x2 QPSK, r=t={_r}",
        "n_tx": 2,
        "n_rx": 2,
        "block_len": 2,
        "frame_len": [10, 20],
        "mod_kind": "PSK",
        "mod_order": 4,
        "signal": "SMX",
        "doppler": 0.01,
        "spatial": {"kind": "exponential", "params": {"r": _r, "t": _r}},
        "estimator": "MB",
        "detectors": ["CeeaMl", "Mismatched", "Zrc", "Ztc", "PerfectCSI"],
        "snr_db": [0, 5, 10, 15, 20, 25, 30],
        "stats_mode": "genie",
        "seed": 2024,
        "stop": dict(_STOP),
    }


def get_preset(name: str) -> dict:
    """A deep copy of the preset document ``name``."""
    if name not in PRESETS:
        raise ParseError(f"unknown preset '{name}'", field="preset")
    doc = copy.deepcopy(PRESETS[name])
    doc.pop("description", None)
    return doc


def preset_scenario(name: str, **overrides) -> Scenario:
    doc = get_preset(name)
    doc.update(overrides)
    return parse_scenario(doc)


def describe_presets() -> Dict[str, str]:
    return {name: doc.get("description", "") for name, doc in sorted(PRESETS.items())}
