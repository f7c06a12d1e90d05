"""Monte Carlo engine: one trial is one independent estimation window.

MB trials span ``2N + 1`` blocks with pilots at ``0, N, 2N`` and data at
``1..2N-1`` except ``N``.  DD and Perfect trials span ``N`` blocks with a
pilot at ``0``.  Every trial draws from its own substream
``SeedSequence(seed, spawn_key=(snr_index, trial_index))``, and trials are
reduced in index order, so results do not depend on the worker count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..chest import (
    MBWindow,
    dd_update,
    estimate_spatial_correlation,
    estimate_temporal_correlation,
    ls_pilot_estimate,
    mb_estimate,
)
from ..corrmodel import SystemConfig, generate_channels, spatial_correlation
from ..detectors import Detector, DetectorKind
from ..errors import BudgetExceeded, RankDeficientTruncation
from ..smcodec import block_bits, constellation_for, map_bits, pilot_block
from .results import BERCurve
from .scenario import Scenario

__all__ = [
    "WindowOutcome",
    "receiver_phi",
    "build_detectors",
    "run_frame_window",
    "trial_rng",
    "run_trials",
    "run_sweep",
]


@dataclass
class WindowOutcome:
    """Truth and decisions for the data blocks of one window.

    ``tx_bits`` has shape ``(n_data, bits_per_block)``; ``rx_bits`` maps each
    detector to an array of the same shape.  ``h_used`` records the channel
    estimate each detector was given for every data block.
    """

    block_k: List[int]
    tx_bits: np.ndarray
    rx_bits: Dict[DetectorKind, np.ndarray]
    h_used: Dict[DetectorKind, List[np.ndarray]] = field(default_factory=dict, repr=False)
    n_singular: int = 0

    def errors(self, kind: DetectorKind) -> np.ndarray:
        """Bit errors per data block."""
        return np.count_nonzero(self.rx_bits[kind] != self.tx_bits, axis=1)


def receiver_phi(scenario: Scenario, cfg: Optional[SystemConfig] = None) -> np.ndarray:
    """Correlation the receiver assumes in the genie modes."""
    cfg = cfg or scenario.cfg
    phi_t, phi_r, phi = spatial_correlation(scenario.spatial, cfg)
    if scenario.stats_mode == "phi_t_only":
        return np.kron(phi_t, np.eye(cfg.n_rx))
    if scenario.stats_mode == "phi_r_only":
        return np.kron(np.eye(cfg.n_tx), phi_r)
    return phi


def build_detectors(scenario: Scenario, cfg: SystemConfig, phi=None, temporal=None) -> Dict[DetectorKind, Detector]:
    phi = receiver_phi(scenario, cfg) if phi is None else phi
    temporal = scenario.temporal if temporal is None else temporal
    return {kind: Detector(kind, cfg, phi, temporal) for kind in scenario.detectors}


def trial_rng(seed: int, snr_idx: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(snr_idx, trial)))


def _noise(gen, shape, var):
    s = math.sqrt(var / 2.0)
    return s * (gen.standard_normal(shape) + 1j * gen.standard_normal(shape))


def run_frame_window(
    scenario: Scenario,
    rng,
    cfg: Optional[SystemConfig] = None,
    detectors: Optional[Dict[DetectorKind, Detector]] = None,
    record: bool = False,
) -> WindowOutcome:
    """Simulate one window and run every configured detector on its data blocks.

    Parameters
    ----------
    scenario : Scenario
    rng : numpy.random.Generator or seed
    cfg : SystemConfig, optional
        Configuration carrying the noise variance; defaults to ``scenario.cfg``.
    detectors : dict, optional
        Prebuilt detectors for the genie statistics modes.  Ignored for
        estimated statistics, which are refit from each window's pilots.
    record : bool
        Keep the channel estimates handed to each detector.
    """
    cfg = cfg or scenario.cfg
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    N = cfg.frame_len
    n_blocks = scenario.window_blocks
    chan = generate_channels(cfg, scenario.spatial, scenario.temporal, n_blocks, gen)
    H = chan.blocks
    const = constellation_for(cfg)
    data_k = scenario.data_blocks
    nv = cfg.noise_var
    pilot = pilot_block(cfg)

    tx_bits = gen.integers(0, 2, size=(len(data_k), cfg.bits_per_block), dtype=np.uint8)
    Y = {}
    for i, k in enumerate(data_k):
        X = map_bits(tx_bits[i], cfg, const).X
        Y[k] = H[k] @ X + _noise(gen, (cfg.n_rx, cfg.block_len), nv)
    pilot_k = [0, N, 2 * N] if scenario.estimator == "MB" else [0]
    for k in pilot_k:
        Y[k] = H[k] @ pilot + _noise(gen, (cfg.n_rx, cfg.n_tx), nv)

    if scenario.stats_mode == "estimated" or scenario.temporal_stats == "estimated":
        ls = [ls_pilot_estimate(Y[k], cfg, k) for k in pilot_k]
        phi = estimate_spatial_correlation(ls, cfg).phi if scenario.stats_mode == "estimated" else None
        temporal = estimate_temporal_correlation(ls, cfg) if scenario.temporal_stats == "estimated" else None
        detectors = build_detectors(scenario, cfg, phi, temporal)
    elif detectors is None:
        detectors = build_detectors(scenario, cfg)

    rx = {kind: np.empty_like(tx_bits) for kind in detectors}
    used: Dict[DetectorKind, List[np.ndarray]] = {kind: [] for kind in detectors}
    n_singular = 0

    if scenario.estimator == "MB":
        window = MBWindow(0, N, np.stack([Y[0], Y[N], Y[2 * N]]), cfg.pilot_power)
        for i, k in enumerate(data_k):
            h_hat = mb_estimate(window, k).H_hat
            for kind, det in detectors.items():
                h_in = H[k] if kind.family == "perfect" else h_hat
                dec = det.detect(Y[k], h_in, k)
                n_singular += dec.n_singular
                rx[kind][i] = block_bits(dec.block, cfg)
                if record:
                    used[kind].append(h_in)
    else:
        start = ls_pilot_estimate(Y[0], cfg, 0)
        state = {kind: start for kind in detectors}
        for i, k in enumerate(data_k):
            for kind, det in detectors.items():
                if kind.family == "perfect" or scenario.estimator == "Perfect":
                    h_in = H[k]
                else:
                    h_in = state[kind].H_hat
                dec = det.detect(Y[k], h_in, k)
                n_singular += dec.n_singular
                rx[kind][i] = block_bits(dec.block, cfg)
                if record:
                    used[kind].append(h_in)
                if scenario.estimator == "DD" and kind.family != "perfect":
                    try:
                        state[kind] = dd_update(state[kind], Y[k], dec.X, cfg)
                    except RankDeficientTruncation:
                        # decision cannot serve as a pseudo-pilot: carry the estimate
                        state[kind] = replace(state[kind], block_idx=state[kind].block_idx + 1)
    return WindowOutcome(list(data_k), tx_bits, rx, used if record else {}, n_singular)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

_WORKER: dict = {}


def _context(scenario: Scenario, snr_idx: int, cache: dict):
    key = snr_idx
    if key not in cache:
        cfg = scenario.cfg.with_ebn0_db(scenario.snr_db[snr_idx])
        dets = None
        if scenario.stats_mode != "estimated" and scenario.temporal_stats != "estimated":
            dets = build_detectors(scenario, cfg)
        cache[key] = (cfg, dets)
    return cache[key]


def _trial_counts(scenario: Scenario, snr_idx: int, trial: int, cache: dict) -> np.ndarray:
    """Errors per (detector, data block) for one trial, plus the singular count."""
    cfg, dets = _context(scenario, snr_idx, cache)
    out = run_frame_window(scenario, trial_rng(scenario.seed, snr_idx, trial), cfg, dets)
    errs = np.stack([out.errors(kind) for kind in scenario.detectors])
    return errs, out.n_singular


def run_trials(scenario: Scenario, snr_idx: int, trials: Sequence[int], cache: Optional[dict] = None):
    cache = {} if cache is None else cache
    return [_trial_counts(scenario, snr_idx, t, cache) for t in trials]


def _worker_init(scenario: Scenario):
    _WORKER.clear()
    _WORKER["scenario"] = scenario
    _WORKER["cache"] = {}


def _worker_run(snr_idx: int, trials: List[int]):
    return run_trials(_WORKER["scenario"], snr_idx, trials, _WORKER["cache"])


def _done(errors: np.ndarray, bits: int, stop) -> bool:
    return bits >= stop.max_bits or bool(np.all(errors >= stop.min_errors))


def run_sweep(scenario: Scenario, workers: int = 1, progress=None) -> BERCurve:
    """Simulate every SNR point until its stop rule fires.

    Trials are generated in batches of ``chunk`` per worker and reduced in
    trial order; the reduction stops at the first trial after which every
    detector has ``min_errors`` errors or ``max_bits`` bits were sent.
    Surplus trials of the last batch are discarded, which keeps the result
    independent of ``workers``.  A point that hits ``max_bits`` first is
    reported with a :class:`~smdetect.errors.BudgetExceeded` warning and
    its partial counts are kept.
    """
    dets = scenario.detectors
    n_data = len(scenario.data_blocks)
    bpb = scenario.cfg.bits_per_block
    curve = BERCurve(scenario.estimator, [d.value for d in dets], list(scenario.snr_db), list(scenario.data_blocks))
    pool = ProcessPoolExecutor(max_workers=workers, initializer=_worker_init, initargs=(scenario,)) if workers > 1 else None
    cache: dict = {}
    try:
        for si, snr in enumerate(scenario.snr_db):
            errors = np.zeros((len(dets), n_data), dtype=np.int64)
            trials_done = 0
            singular = 0
            finished = False
            next_trial = 0
            while not finished:
                n_jobs = max(1, workers)
                batches = [list(range(next_trial + j * scenario.chunk, next_trial + (j + 1) * scenario.chunk)) for j in range(n_jobs)]
                next_trial += n_jobs * scenario.chunk
                if pool is None:
                    results = [run_trials(scenario, si, b, cache) for b in batches]
                else:
                    results = list(pool.map(_worker_run, [si] * n_jobs, batches))
                for batch in results:
                    for errs, ns in batch:
                        errors += errs
                        singular += ns
                        trials_done += 1
                        if _done(errors.sum(axis=1), trials_done * n_data * bpb, scenario.stop):
                            finished = True
                            break
                    if finished:
                        break
            bits = trials_done * bpb
            for di, d in enumerate(dets):
                curve.add(d.value, snr, errors[di], bits)
            curve.n_singular[snr] = singular
            if np.any(errors.sum(axis=1) < scenario.stop.min_errors):
                curve.budget_exceeded.append(snr)
                warnings.warn(
                    f"SNR {snr} dB stopped at {bits * n_data} bits before reaching {scenario.stop.min_errors} errors for every detector",
                    BudgetExceeded,
                    stacklevel=2,
                )
            if progress is not None:
                progress(snr, curve)
    finally:
        if pool is not None:
            pool.shutdown()
    return curve
