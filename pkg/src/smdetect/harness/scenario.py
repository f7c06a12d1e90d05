"""Scenario files: a JSON document describing one simulation campaign.

Required keys::

    n_tx, n_rx, block_len, frame_len, mod_kind, mod_order, doppler,
    spatial {kind, params}, estimator, detectors[], snr_db[], stats_mode,
    seed, stop {min_errors, max_bits}

Optional keys: ``name``, ``signal`` (SM, SMX, SSK), ``symbol_power``,
``pilot_power``, ``temporal`` (jakes, static), ``temporal_stats``
(genie, estimated), ``chunk`` (trials per scheduling chunk).
``frame_len`` may be a list, in which case :func:`expand_frame_lens`
yields one scenario per value.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..corrmodel import SpatialModel, SystemConfig, TemporalModel
from ..detectors import DetectorKind
from ..errors import ParseError

__all__ = [
    "Scenario",
    "StopRule",
    "load_scenario",
    "parse_scenario",
    "scenario_to_dict",
    "save_scenario",
    "expand_frame_lens",
    "STATS_MODES",
]

STATS_MODES = ("genie", "estimated", "phi_t_only", "phi_r_only")
_STATS_ALIASES = {
    "geniephi": "genie",
    "genie": "genie",
    "estimatedphi": "estimated",
    "estimated": "estimated",
    "geniephi_t-only": "phi_t_only",
    "phi_t_only": "phi_t_only",
    "geniephi_r-only": "phi_r_only",
    "phi_r_only": "phi_r_only",
}
REQUIRED = (
    "n_tx",
    "n_rx",
    "block_len",
    "frame_len",
    "mod_kind",
    "mod_order",
    "doppler",
    "spatial",
    "estimator",
    "detectors",
    "snr_db",
    "stats_mode",
    "seed",
    "stop",
)


@dataclass(frozen=True)
class StopRule:
    """Stop a point once every detector has ``min_errors`` errors or ``max_bits`` bits were sent."""

    min_errors: int = 200
    max_bits: int = 20_000_000


@dataclass(frozen=True)
class Scenario:
    """A fully validated simulation campaign."""

    cfg: SystemConfig
    spatial: SpatialModel
    temporal: TemporalModel
    estimator: str
    detectors: Tuple[DetectorKind, ...]
    snr_db: Tuple[float, ...]
    stats_mode: str = "genie"
    temporal_stats: str = "genie"
    seed: int = 0
    stop: StopRule = field(default_factory=StopRule)
    name: str = ""
    chunk: int = 16
    frame_lens: Tuple[int, ...] = ()

    @property
    def window_blocks(self) -> int:
        """Blocks per trial window: ``2N + 1`` for MB, ``N`` otherwise."""
        N = self.cfg.frame_len
        return 2 * N + 1 if self.estimator == "MB" else N

    @property
    def data_blocks(self) -> List[int]:
        N = self.cfg.frame_len
        if self.estimator == "MB":
            return [k for k in range(1, 2 * N) if k != N]
        return list(range(1, N))


def _line_of(text: Optional[str], key: str) -> Optional[int]:
    if not text:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def _require(doc: Dict[str, Any], key: str, text: Optional[str], prefix: str = ""):
    if key not in doc:
        raise ParseError(f"missing required field '{prefix}{key}'", field=prefix + key)
    return doc[key]


def _as_int(value, key, text, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ParseError(f"field '{key}' must be an integer", field=key, line=_line_of(text, key.split(".")[-1]))
    value = int(value)
    if minimum is not None and value < minimum:
        raise ParseError(f"field '{key}' must be at least {minimum}", field=key, line=_line_of(text, key.split(".")[-1]))
    return value


def _as_float(value, key, text) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"field '{key}' must be a number", field=key, line=_line_of(text, key.split(".")[-1]))
    return float(value)


def _spatial(doc, text) -> SpatialModel:
    if not isinstance(doc, dict):
        raise ParseError("field 'spatial' must be an object", field="spatial", line=_line_of(text, "spatial"))
    kind = str(_require(doc, "kind", text, "spatial.")).lower()
    params = doc.get("params", {}) or {}
    try:
        if kind == "bessel":
            return SpatialModel.bessel(float(params.get("spacing", 0.5)))
        if kind == "exponential":
            return SpatialModel.exponential(float(params.get("r", 0.0)), float(params.get("t", 0.0)))
        if kind == "identity":
            return SpatialModel.identity()
        if kind == "explicit":
            def mat(name):
                raw = params.get(name)
                if raw is None:
                    return None
                arr = np.asarray(raw, dtype=float)
                return arr[..., 0] + 1j * arr[..., 1] if arr.ndim == 3 else arr.astype(complex)

            return SpatialModel.explicit(phi=mat("phi"), phi_t=mat("phi_t"), phi_r=mat("phi_r"))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid spatial parameters: {exc}", field="spatial.params", line=_line_of(text, "params")) from exc
    raise ParseError(f"unknown spatial kind '{kind}'", field="spatial.kind", line=_line_of(text, "kind"))


def _detectors(names, estimator, text) -> Tuple[DetectorKind, ...]:
    if not isinstance(names, list) or not names:
        raise ParseError("field 'detectors' must be a non-empty list", field="detectors", line=_line_of(text, "detectors"))
    out = []
    for name in names:
        raw = str(name)
        try:
            kind = DetectorKind.parse(raw)
        except ValueError:
            try:
                kind = DetectorKind.parse(raw + estimator.capitalize())
            except ValueError:
                raise ParseError(f"unknown detector '{raw}'", field="detectors", line=_line_of(text, "detectors")) from None
        if kind.estimator is not None and kind.estimator != estimator:
            raise ParseError(f"detector '{raw}' does not match estimator {estimator}", field="detectors", line=_line_of(text, "detectors"))
        if kind not in out:
            out.append(kind)
    return tuple(out)


def parse_scenario(doc: Dict[str, Any], text: Optional[str] = None) -> Scenario:
    """Validate a scenario document and build a :class:`Scenario`."""
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a JSON object")
    for key in REQUIRED:
        _require(doc, key, text)
    frame = doc["frame_len"]
    frame_lens: Tuple[int, ...] = ()
    if isinstance(frame, list):
        if not frame:
            raise ParseError("field 'frame_len' must not be empty", field="frame_len", line=_line_of(text, "frame_len"))
        frame_lens = tuple(_as_int(f, "frame_len", text, 2) for f in frame)
        frame = frame_lens[0]
    estimator = str(doc["estimator"]).upper()
    if estimator not in ("MB", "DD", "PERFECT"):
        raise ParseError(f"unknown estimator '{doc['estimator']}'", field="estimator", line=_line_of(text, "estimator"))
    estimator = "Perfect" if estimator == "PERFECT" else estimator
    try:
        cfg = SystemConfig(
            n_tx=_as_int(doc["n_tx"], "n_tx", text, 1),
            n_rx=_as_int(doc["n_rx"], "n_rx", text, 1),
            block_len=_as_int(doc["block_len"], "block_len", text, 1),
            frame_len=_as_int(frame, "frame_len", text, 2),
            mod_order=_as_int(doc["mod_order"], "mod_order", text, 1),
            mod_kind=str(doc["mod_kind"]),
            doppler=_as_float(doc["doppler"], "doppler", text),
            symbol_power=_as_float(doc.get("symbol_power", 1.0), "symbol_power", text),
            pilot_power=_as_float(doc.get("pilot_power", 1.0), "pilot_power", text),
            signal=str(doc.get("signal", "SM")),
        )
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"invalid system configuration: {exc}") from exc
    if cfg.block_len != cfg.n_tx:
        raise ParseError("pilot blocks need block_len == n_tx", field="block_len", line=_line_of(text, "block_len"))
    spatial = _spatial(doc["spatial"], text)
    temporal_kind = str(doc.get("temporal", "jakes")).lower()
    if temporal_kind not in ("jakes", "static"):
        raise ParseError(f"unknown temporal model '{temporal_kind}'", field="temporal", line=_line_of(text, "temporal"))
    temporal = TemporalModel(temporal_kind)
    detectors = _detectors(doc["detectors"], estimator, text)
    if estimator == "Perfect" and any(d.estimator for d in detectors):
        raise ParseError("the Perfect estimator supports only PerfectCSI and Mismatched", field="detectors", line=_line_of(text, "detectors"))
    snr = doc["snr_db"]
    if not isinstance(snr, list) or not snr:
        raise ParseError("field 'snr_db' must be a non-empty list", field="snr_db", line=_line_of(text, "snr_db"))
    snr = tuple(_as_float(s, "snr_db", text) for s in snr)
    if any(b <= a for a, b in zip(snr, snr[1:])):
        raise ParseError("field 'snr_db' must be strictly increasing", field="snr_db", line=_line_of(text, "snr_db"))
    mode = _STATS_ALIASES.get(str(doc["stats_mode"]).lower())
    if mode is None:
        raise ParseError(f"unknown stats_mode '{doc['stats_mode']}'", field="stats_mode", line=_line_of(text, "stats_mode"))
    if mode == "estimated" and estimator != "MB":
        raise ParseError("estimated statistics need the MB estimator", field="stats_mode", line=_line_of(text, "stats_mode"))
    tstats = str(doc.get("temporal_stats", "genie")).lower()
    if tstats not in ("genie", "estimated"):
        raise ParseError(f"unknown temporal_stats '{tstats}'", field="temporal_stats", line=_line_of(text, "temporal_stats"))
    if tstats == "estimated" and estimator != "MB":
        raise ParseError("estimated temporal statistics need the MB estimator", field="temporal_stats", line=_line_of(text, "temporal_stats"))
    stop = doc["stop"]
    if not isinstance(stop, dict):
        raise ParseError("field 'stop' must be an object", field="stop", line=_line_of(text, "stop"))
    rule = StopRule(
        _as_int(_require(stop, "min_errors", text, "stop."), "stop.min_errors", text, 1),
        _as_int(_require(stop, "max_bits", text, "stop."), "stop.max_bits", text, 1),
    )
    seed = _as_int(doc["seed"], "seed", text, 0)
    chunk = _as_int(doc.get("chunk", 16), "chunk", text, 1)
    return Scenario(cfg, spatial, temporal, estimator, detectors, snr, mode, tstats, seed, rule, str(doc.get("name", "")), chunk, frame_lens)


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file.

    Raises
    ------
    ParseError
        For malformed JSON or schema violations, with line and field hints.
    OSError
        If the file cannot be read.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    return parse_scenario(doc, text)


def _spatial_to_dict(sp: SpatialModel) -> Dict[str, Any]:
    if sp.kind == "bessel":
        return {"kind": "bessel", "params": {"spacing": sp.spacing}}
    if sp.kind == "exponential":
        return {"kind": "exponential", "params": {"r": sp.r, "t": sp.t}}

    def enc(m):
        if m is None:
            return None
        m = np.asarray(m)
        return np.stack([m.real, m.imag], axis=-1).tolist()

    params = {k: enc(getattr(sp, k)) for k in ("phi", "phi_t", "phi_r") if getattr(sp, k) is not None}
    return {"kind": "explicit", "params": params}


def scenario_to_dict(sc: Scenario) -> Dict[str, Any]:
    cfg = sc.cfg
    return {
        "name": sc.name,
        "n_tx": cfg.n_tx,
        "n_rx": cfg.n_rx,
        "block_len": cfg.block_len,
        "frame_len": list(sc.frame_lens) if len(sc.frame_lens) > 1 else cfg.frame_len,
        "mod_kind": cfg.mod_kind,
        "mod_order": cfg.mod_order,
        "signal": cfg.signal,
        "doppler": cfg.doppler,
        "symbol_power": cfg.symbol_power,
        "pilot_power": cfg.pilot_power,
        "spatial": _spatial_to_dict(sc.spatial),
        "temporal": sc.temporal.kind,
        "estimator": sc.estimator,
        "detectors": [d.value for d in sc.detectors],
        "snr_db": list(sc.snr_db),
        "stats_mode": sc.stats_mode,
        "temporal_stats": sc.temporal_stats,
        "seed": sc.seed,
        "stop": {"min_errors": sc.stop.min_errors, "max_bits": sc.stop.max_bits},
        "chunk": sc.chunk,
    }


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n", encoding="utf-8")


def expand_frame_lens(sc: Scenario) -> List[Scenario]:
    """One scenario per frame length when ``frame_len`` was given as a list."""
    if len(sc.frame_lens) <= 1:
        return [sc]
    return [replace(sc, cfg=replace(sc.cfg, frame_len=n), frame_lens=(n,)) for n in sc.frame_lens]
