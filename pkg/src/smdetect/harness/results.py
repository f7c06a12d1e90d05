"""BER curves, Wilson intervals and the CSV results format."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtri

__all__ = ["BERCurve", "ResultRow", "wilson_interval", "write_results", "read_results", "curve_from_rows", "CSV_HEADER"]

CSV_HEADER = ("detector", "estimator", "snr_db", "block_k", "bits", "bit_errors", "ber", "ci_low", "ci_high")
Z95 = float(ndtri(0.975))


def wilson_interval(errors: int, n: int, z: float = Z95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion.

    Returns ``(0, 1)`` when ``n == 0``.
    """
    if n <= 0:
        return 0.0, 1.0
    p = errors / n
    z2 = z * z
    den = 1.0 + z2 / n
    centre = (p + z2 / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class ResultRow:
    detector: str
    estimator: str
    snr_db: float
    block_k: int
    bits: int
    bit_errors: int

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else float("nan")

    @property
    def ci(self) -> Tuple[float, float]:
        return wilson_interval(self.bit_errors, self.bits)


@dataclass
class BERCurve:
    """Bit-error counts per (detector, SNR, data block).

    ``add`` stores per-block errors for ``bits`` bits sent in each block;
    the aggregate over blocks is reported with ``block_k = -1``.
    """

    estimator: str
    detectors: List[str]
    snr_db: List[float]
    block_ks: List[int]
    counts: Dict[Tuple[str, float], Tuple[np.ndarray, int]] = field(default_factory=dict)
    budget_exceeded: List[float] = field(default_factory=list)
    n_singular: Dict[float, int] = field(default_factory=dict)

    def add(self, detector: str, snr: float, errors_per_k: Sequence[int], bits_per_k: int) -> None:
        errs = np.asarray(errors_per_k, dtype=np.int64)
        if errs.shape != (len(self.block_ks),):
            raise ValueError("one error count per data block is required")
        if np.any(errs < 0) or np.any(errs > bits_per_k):
            raise ValueError("error counts must lie in [0, bits]")
        self.counts[(detector, float(snr))] = (errs, int(bits_per_k))

    def errors(self, detector: str, snr: float) -> int:
        return int(self.counts[(detector, float(snr))][0].sum())

    def bits(self, detector: str, snr: float) -> int:
        errs, b = self.counts[(detector, float(snr))]
        return b * errs.size

    def ber(self, detector: str, snr: Optional[float] = None):
        """Aggregate BER at one SNR, or an array over the grid."""
        if snr is None:
            return np.array([self.ber(detector, s) for s in self.snr_db])
        return self.errors(detector, snr) / self.bits(detector, snr)

    def ber_k(self, detector: str, snr: float) -> Dict[int, float]:
        errs, b = self.counts[(detector, float(snr))]
        return {k: e / b for k, e in zip(self.block_ks, errs)}

    def ci(self, detector: str, snr: float) -> Tuple[float, float]:
        return wilson_interval(self.errors(detector, snr), self.bits(detector, snr))

    def rows(self) -> List[ResultRow]:
        out = []
        for det in self.detectors:
            for snr in self.snr_db:
                if (det, float(snr)) not in self.counts:
                    continue
                errs, b = self.counts[(det, float(snr))]
                for k, e in zip(self.block_ks, errs):
                    out.append(ResultRow(det, self.estimator, float(snr), int(k), b, int(e)))
                out.append(ResultRow(det, self.estimator, float(snr), -1, b * errs.size, int(errs.sum())))
        return out


def _fmt(x: float) -> str:
    return repr(float(x))


def _render(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        lo, hi = r.ci
        w.writerow([r.detector, r.estimator, _fmt(r.snr_db), r.block_k, r.bits, r.bit_errors, "%.10e" % r.ber, "%.10e" % lo, "%.10e" % hi])
    return buf.getvalue()


def write_results(curve, path) -> None:
    """Write the CSV atomically: a temporary file in the target directory is renamed over ``path``."""
    rows = curve.rows() if isinstance(curve, BERCurve) else list(curve)
    data = _render(rows).encode("utf-8")
    target = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".csv", dir=target.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_results(path) -> List[ResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError("unexpected results header")
        return [ResultRow(d, e, float(s), int(k), int(b), int(err)) for d, e, s, k, b, err, *_ in reader]


def curve_from_rows(rows: Sequence[ResultRow]) -> BERCurve:
    """Rebuild a :class:`BERCurve` from per-block rows (aggregate rows are recomputed)."""
    rows = [r for r in rows if r.block_k >= 0]
    if not rows:
        raise ValueError("no per-block rows")
    dets = list(dict.fromkeys(r.detector for r in rows))
    snrs = list(dict.fromkeys(r.snr_db for r in rows))
    ks = list(dict.fromkeys(r.block_k for r in rows))
    curve = BERCurve(rows[0].estimator, dets, snrs, ks)
    for d in dets:
        for s in snrs:
            sel = {r.block_k: r for r in rows if r.detector == d and r.snr_db == s}
            if sel:
                curve.add(d, s, [sel[k].bit_errors for k in ks], sel[ks[0]].bits)
    return curve

