"""Estimate the common iris deviation of a cavity from its measured coupling.

The tuned cavity with all irises shifted equally and nominal equators gives a
monotone curve k_cc(d_rir); measured couplings are mapped back through it.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .eigenmodel import ModelConfig, coupling_coefficient, tuned_uniform_kcc
from .errors import MalformedRecordError, NumericalError, OutOfRangeError

CURVE_SPAN_MM = 0.5
CURVE_STEP_MM = 1e-3
INVERT_XTOL_MM = 1e-9
N_MODES = 9


@dataclass(frozen=True)
class KccCurve:
    shifts: np.ndarray           # mm, ascending
    kcc: np.ndarray

    def __post_init__(self):
        if not np.all(np.diff(self.kcc) > 0):
            raise NumericalError("k_cc curve is not strictly increasing")
        object.__setattr__(self, "_interp", PchipInterpolator(self.shifts, self.kcc))

    def __call__(self, shift):
        return self._interp(shift)

    @property
    def range(self):
        return float(self.kcc[0]), float(self.kcc[-1])

    def slope(self, shift: float = 0.0) -> float:
        return float(self._interp.derivative()(shift))


def kcc_curve(cfg: ModelConfig, span: float = CURVE_SPAN_MM, step: float = CURVE_STEP_MM) -> KccCurve:
    n = int(round(2 * span / step))
    shifts = np.linspace(-span, span, n + 1)
    return KccCurve(shifts, np.asarray(tuned_uniform_kcc(shifts, cfg)))


def invert_kcc(curve: KccCurve, k_cc: float) -> float:
    """Common iris deviation (mm) whose tuned cavity has coupling ``k_cc``."""
    lo, hi = curve.range
    if not lo <= k_cc <= hi:
        raise OutOfRangeError(f"k_cc {k_cc!r} outside curve image [{lo}, {hi}]")
    if k_cc == lo:
        return float(curve.shifts[0])
    if k_cc == hi:
        return float(curve.shifts[-1])
    j = int(np.searchsorted(curve.kcc, k_cc))
    a, b = curve.shifts[j - 1], curve.shifts[j]
    return float(brentq(lambda x: float(curve(x)) - k_cc, a, b, xtol=INVERT_XTOL_MM, rtol=1e-15))


def linearized_inverse(curve: KccCurve, k_cc: float) -> float:
    """First-order Taylor inversion about zero shift."""
    return (k_cc - float(curve(0.0))) / curve.slope(0.0)


# -- measurement records ---------------------------------------------------------

@dataclass(frozen=True)
class MeasurementRecord:
    cavity_id: str
    vendor: str
    freqs_mhz: tuple             # 9 passband modes, ascending

    @property
    def k_cc(self) -> float:
        return float(coupling_coefficient(self.freqs_mhz[-1], self.freqs_mhz[0]))


@dataclass(frozen=True)
class VendorStats:
    vendor: str
    n: int
    mean_kcc: float
    std_kcc: float
    mean_drir: float
    std_drir: float


@dataclass(frozen=True)
class CavityEstimate:
    cavity_id: str
    vendor: str
    k_cc: float
    d_rir: float                 # NaN when out of range
    status: str                  # "ok" or "out-of-range"


def _std(v):
    return float(np.std(v, ddof=1)) if len(v) > 1 else float("nan")


def _stats(vendor, kcc, drir):
    return VendorStats(vendor, len(kcc), float(np.mean(kcc)), _std(kcc),
                       float(np.mean(drir)), _std(drir))


def analyze_measurements(records, curve: KccCurve):
    """Per-vendor and pooled coupling and iris-deviation statistics.

    Returns (stats, estimates). Vendors appear in order of first occurrence,
    followed by the pooled row named by joining vendor tags with '+' (only
    when there is more than one vendor). Cavities whose coupling lies outside
    the curve image are reported with status "out-of-range" and left out of
    the statistics.
    """
    estimates = []
    for rec in records:
        k = rec.k_cc
        try:
            est = CavityEstimate(rec.cavity_id, rec.vendor, k, invert_kcc(curve, k), "ok")
        except OutOfRangeError:
            est = CavityEstimate(rec.cavity_id, rec.vendor, k, float("nan"), "out-of-range")
        estimates.append(est)
    good = [e for e in estimates if e.status == "ok"]
    vendors = list(dict.fromkeys(e.vendor for e in good))
    stats = []
    for v in vendors:
        sel = [e for e in good if e.vendor == v]
        stats.append(_stats(v, [e.k_cc for e in sel], [e.d_rir for e in sel]))
    if len(vendors) > 1:
        stats.append(_stats("+".join(vendors), [e.k_cc for e in good], [e.d_rir for e in good]))
    return stats, estimates


def mode_summary(records):
    """Per-vendor (vendor, mode, mean_MHz, std_MHz) rows, one per passband mode."""
    rows = []
    for v in dict.fromkeys(r.vendor for r in records):
        f = np.array([r.freqs_mhz for r in records if r.vendor == v])
        for m in range(N_MODES):
            rows.append((v, m, float(np.mean(f[:, m])), _std(f[:, m])))
    return rows


# -- CSV ------------------------------------------------------------------------------

MEASUREMENT_HEADER = ["cavity_id", "vendor"] + [f"f{m}_MHz" for m in range(N_MODES)]


def read_measurements(path):
    """Parse the measurement CSV; malformed rows raise with their line number."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MEASUREMENT_HEADER:
            raise MalformedRecordError(f"expected header {','.join(MEASUREMENT_HEADER)}", line=1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MEASUREMENT_HEADER):
                raise MalformedRecordError(f"expected {len(MEASUREMENT_HEADER)} fields, got {len(row)}", line)
            try:
                freqs = tuple(float(c) for c in row[2:])
            except ValueError:
                raise MalformedRecordError("non-numeric frequency", line) from None
            if not all(math.isfinite(f) and f > 0 for f in freqs):
                raise MalformedRecordError("frequencies must be positive and finite", line)
            if any(b <= a for a, b in zip(freqs, freqs[1:])):
                raise MalformedRecordError("mode frequencies must be strictly ascending", line)
            records.append(MeasurementRecord(row[0].strip(), row[1].strip(), freqs))
    return records


def write_measurements(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEASUREMENT_HEADER)
        for r in records:
            w.writerow([r.cavity_id, r.vendor] + [f"{f:.6f}" for f in r.freqs_mhz])


def write_vendor_stats(path, stats):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vendor", "n", "mean_kcc_pct", "std_kcc_pct", "mean_drir_mm", "std_drir_mm"])
        for s in stats:
            w.writerow([s.vendor, s.n, repr(100 * s.mean_kcc), repr(100 * s.std_kcc),
                        repr(s.mean_drir), repr(s.std_drir)])


def write_estimates(path, estimates):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cavity_id", "vendor", "k_cc", "drir_mm", "status"])
        for e in estimates:
            w.writerow([e.cavity_id, e.vendor, repr(e.k_cc), repr(e.d_rir), e.status])


def write_mode_summary(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vendor", "mode", "mean_MHz", "std_MHz"])
        for v, m, mean, std in rows:
            w.writerow([v, m, f"{mean:.6f}", f"{std:.6f}"])
