"""Command-line interface.

``smdetect simulate <scenario> [--out CSV] [--workers N] [--preset NAME]``
``smdetect bound <scenario> --pairwise-mc N [--out CSV]``
``smdetect list-presets``

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import warnings
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..analysis import ber_average, ber_union_bound
from ..corrmodel import spatial_correlation
from ..errors import BudgetExceeded, ParseError, SMDetectError
from .presets import describe_presets, preset_scenario
from .results import write_results
from .scenario import Scenario, expand_frame_lens, load_scenario
from .simulate import run_sweep

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smdetect", description="Spatial-modulation detection under imperfect CSI.")
    sub = p.add_subparsers(dest="command")
    sim = sub.add_parser("simulate", help="run a Monte Carlo BER sweep")
    sim.add_argument("scenario", nargs="?", help="scenario JSON file")
    sim.add_argument("--out", help="results CSV (default: <scenario>.csv)")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--preset", help="use a named preset instead of a file")
    bnd = sub.add_parser("bound", help="evaluate the BER union bound for CEEA-ML")
    bnd.add_argument("scenario", nargs="?", help="scenario JSON file")
    bnd.add_argument("--pairwise-mc", type=int, required=True, dest="pairwise_mc", help="estimate draws per PEP average")
    bnd.add_argument("--out", help="bound CSV (default: stdout)")
    bnd.add_argument("--preset", help="use a named preset instead of a file")
    bnd.add_argument("--noise-model", default="exact", choices=("exact", "independent"))
    sub.add_parser("list-presets", help="list the built-in scenarios")
    return p


def _scenario(args) -> Scenario:
    if args.preset and args.scenario:
        raise UsageError("give either a scenario file or --preset, not both")
    if args.preset:
        return preset_scenario(args.preset)
    if not args.scenario:
        raise UsageError("a scenario file or --preset is required")
    return load_scenario(args.scenario)


def _out_paths(base: Path, scenarios: List[Scenario]) -> List[Path]:
    if len(scenarios) == 1:
        return [base]
    return [base.with_name(f"{base.stem}_N{sc.cfg.frame_len}{base.suffix}") for sc in scenarios]


def cmd_simulate(args) -> int:
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    sc = _scenario(args)
    scenarios = expand_frame_lens(sc)
    base = Path(args.out) if args.out else Path((args.scenario and Path(args.scenario).stem) or sc.name or "results").with_suffix(".csv")
    for scn, path in zip(scenarios, _out_paths(base, scenarios)):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", BudgetExceeded)
            curve = run_sweep(scn, workers=args.workers)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        write_results(curve, path)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_bound(args) -> int:
    if args.pairwise_mc < 1:
        raise UsageError("--pairwise-mc must be at least 1")
    sc = _scenario(args)
    if sc.estimator not in ("MB", "DD"):
        raise UsageError("the union bound needs the MB or DD estimator")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", "frame_len", "snr_db", "block_k", "bound", "stderr"])
    for scn in expand_frame_lens(sc):
        _, _, phi = spatial_correlation(scn.spatial, scn.cfg)
        for si, snr in enumerate(scn.snr_db):
            cfg = scn.cfg.with_ebn0_db(snr)
            rng = np.random.default_rng(np.random.SeedSequence(scn.seed, spawn_key=(si,)))
            ks = scn.data_blocks if scn.estimator == "MB" else [None]
            per_k = {}
            for k in ks:
                ub = ber_union_bound(k, cfg, phi, scn.temporal, n_mc=args.pairwise_mc, rng=rng, estimator=scn.estimator, noise_model=args.noise_model)
                w.writerow([scn.estimator, cfg.frame_len, repr(float(snr)), -1 if k is None else k, "%.10e" % ub.value, "%.10e" % ub.stderr])
                if k is not None:
                    per_k[k] = ub.value
            if per_k:
                w.writerow([scn.estimator, cfg.frame_len, repr(float(snr)), -1, "%.10e" % ber_average(per_k, "MB", cfg.frame_len), ""])
    text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_list_presets(args) -> int:
    for name, desc in describe_presets().items():
        print(f"{name:24s} {desc}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = _parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: simulate, bound or list-presets")
        handler = {"simulate": cmd_simulate, "bound": cmd_bound, "list-presets": cmd_list_presets}[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SMDetectError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
