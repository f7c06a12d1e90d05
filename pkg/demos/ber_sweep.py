"""BER of four detectors on a small 2x2 QPSK-SM link with MB channel estimation."""

import warnings
from pathlib import Path

from smdetect.errors import BudgetExceeded
from smdetect.harness import load_scenario, run_sweep, write_results

here = Path(__file__).parent
sc = load_scenario(here / "small_mb.json")
with warnings.catch_warnings():
    warnings.simplefilter("ignore", BudgetExceeded)
    curve = run_sweep(sc)

print("snr_db  " + "  ".join(f"{d:>12s}" for d in curve.detectors))
for s in curve.snr_db:
    print(f"{s:6g}  " + "  ".join(f"{curve.ber(d, s):12.3e}" for d in curve.detectors))
write_results(curve, here / "small_mb.csv")
