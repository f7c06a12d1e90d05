"""Union bound on BER(k) against simulation for 2x2 BPSK-SM, N=5, r=t=0.8."""

from smdetect.analysis import ber_average, ber_union_bound, block_indices
from smdetect.corrmodel import SpatialModel, SystemConfig, TemporalModel, spatial_correlation
from smdetect.harness import parse_scenario, run_sweep

SNR = 16.0
doc = {
    "n_tx": 2, "n_rx": 2, "block_len": 2, "frame_len": 5, "mod_kind": "PSK", "mod_order": 2,
    "doppler": 0.01, "spatial": {"kind": "exponential", "params": {"r": 0.8, "t": 0.8}},
    "estimator": "MB", "detectors": ["CeeaMl"], "snr_db": [SNR], "stats_mode": "genie",
    "seed": 3, "stop": {"min_errors": 400, "max_bits": 2_000_000},
}
curve = run_sweep(parse_scenario(doc))
sim = curve.ber_k("CeeaMlMb", SNR)

cfg = SystemConfig(2, 2, 2, 5, 2, doppler=0.01).with_ebn0_db(SNR)
phi = spatial_correlation(SpatialModel.exponential(0.8, 0.8), cfg)[2]
ks = block_indices("MB", 5)
bound = {k: ber_union_bound(k, cfg, phi, TemporalModel.jakes(), n_mc=500, rng=k) for k in ks}

print(" k   bound      stderr     simulated")
for k in ks:
    print(f"{k:2d}  {bound[k].value:.3e}  {bound[k].stderr:.1e}  {sim[k]:.3e}")
print(f"frame average: bound {ber_average(bound, 'MB', 5):.3e}, simulated {ber_average(sim, 'MB', 5):.3e}")
