"""Global sensitivity analysis: Sobol indices by pick-freeze sampling,
Borgonovo delta indices by kernel density and by histogram, and a
tensor-quadrature ANOVA used as an oracle for small models.
"""
from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVarianceError, InputError
from .sampling import KdeModel, SeedSpec, bandwidth_rule, joint_pdf, kde_pdf

SOBOL_MIN_N = 256
BORGONOVO_MIN_N = 1000
VARIANCE_RTOL = 1e-12
MODEL_CHUNK = 1 << 16


@dataclass
class SobolResult:
    first_order: np.ndarray
    total: np.ndarray
    n_base: int
    first_order_raw: np.ndarray
    total_raw: np.ndarray
    first_order_se: np.ndarray
    total_se: np.ndarray
    mean: float
    variance: float
    n_evals: int
    warnings: list = field(default_factory=list)


@dataclass
class BorgonovoResult:
    delta: np.ndarray
    estimator: str
    delta_raw: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass
class HoeffdingDiagnostic:
    mean: float
    variance: float
    first_order: np.ndarray            # S_i
    second_order: dict                 # (i, j) -> S_ij
    total: np.ndarray                  # S_i^T
    residual: float                    # 1 - sum of first and second order shares
    passed: bool


@dataclass
class SensitivityReport:
    parameters: list
    sobol: SobolResult
    kde: BorgonovoResult
    histogram: BorgonovoResult
    output: str = "k_cc"

    def rows(self):
        for i, name in enumerate(self.parameters):
            yield (name, float(self.sobol.first_order[i]), float(self.sobol.total[i]),
                   float(self.kde.delta[i]), float(self.histogram.delta[i]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", "S", "S_T", "delta_kde", "delta_hist"])
            for name, *vals in self.rows():
                w.writerow([name] + [repr(v) for v in vals])


# -- Sobol ---------------------------------------------------------------------

def _apply(model, x):
    out = np.empty(x.shape[0])
    for s in range(0, x.shape[0], MODEL_CHUNK):
        out[s:s + MODEL_CHUNK] = np.asarray(model(x[s:s + MODEL_CHUNK]), dtype=float).reshape(-1)
    return out


def _sample_matrix(dists, n, seed: SeedSpec):
    u = seed.generator(0).random((n, len(dists)))
    return np.column_stack([d.icdf(u[:, k]) for k, d in enumerate(dists)])


def saltelli_sobol(model, dists, n: int, seed: SeedSpec = SeedSpec(), correlated: bool = False) -> SobolResult:
    """First-order and total Sobol indices from n(d + 2) model evaluations.

    ``model`` maps an (m, d) array to m scalar outputs; ``dists`` are d
    objects with an ``icdf`` method. A and B are independent n x d samples
    and C_i takes column i from A and all other columns from B, so
        S_i   = (mean(Q_A Q_Ci) - E^2) / V,   E^2 = mean(Q_A Q_B)
        S_T,i = 1 - (mean(Q_B Q_Ci) - E^2) / V,   E^2 = mean(Q_A)^2.
    The pick-freeze E^2 in S_i makes an input without effect give exactly 0.
    Outputs are centred on the A-sample mean before forming products, which
    is the same estimator with less cancellation. Standard errors are
    the usual sqrt(var(product) / n) / V.
    """
    if n < SOBOL_MIN_N:
        raise InputError(f"n must be at least {SOBOL_MIN_N}")
    d = len(dists)
    a = _sample_matrix(dists, n, seed.substream(seed.stream_id * 2 + 0))
    b = _sample_matrix(dists, n, seed.substream(seed.stream_id * 2 + 1))
    qa, qb = _apply(model, a), _apply(model, b)
    mean = float(np.mean(qa))
    var = float(np.mean(qa * qa) - mean * mean)
    scale = max(float(np.max(np.abs(qa))), float(np.max(np.abs(qb))), 1e-300)
    if not var > VARIANCE_RTOL * scale * scale:
        raise DegenerateVarianceError("model output has (numerically) zero variance")
    ca, cb = qa - mean, qb - mean
    var = float(np.mean(ca * ca))
    s1, st, s1_se, st_se = (np.empty(d) for _ in range(4))
    for i in range(d):
        c = b.copy()
        c[:, i] = a[:, i]
        cc = _apply(model, c) - mean
        p1, pt = ca * (cc - cb), cb * cc
        s1[i] = np.mean(p1) / var
        st[i] = 1.0 - np.mean(pt) / var
        s1_se[i] = np.std(p1) / np.sqrt(n) / var
        st_se[i] = np.std(pt) / np.sqrt(n) / var
    notes = []
    if correlated:
        notes.append("inputs are dependent; Sobol indices assume independence")
    return SobolResult(
        first_order=np.clip(s1, 0.0, None), total=np.clip(st, 0.0, None), n_base=n,
        first_order_raw=s1, total_raw=st, first_order_se=s1_se, total_se=st_se,
        mean=mean, variance=var, n_evals=n * (d + 2), warnings=notes,
    )


# -- Borgonovo -----------------------------------------------------------------------

def _check_sample(inputs, outputs):
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    q = np.asarray(outputs, dtype=float).reshape(-1)
    if x.shape[0] != q.shape[0]:
        raise InputError("inputs and outputs differ in length")
    if q.size < BORGONOVO_MIN_N:
        raise InputError(f"need at least {BORGONOVO_MIN_N} samples")
    return x, q


def borgonovo_kde(inputs, outputs) -> BorgonovoResult:
    """Moment-independent delta indices from product-Epanechnikov densities.

    With r = rho_Q rho_Yi / rho_{Q,Yi} at the sample points,
        delta_i = mean((1 - r)^+),
    an importance-weighted estimate of (1/2) int |rho_Q rho_Yi - rho_{Q,Yi}|
    (both densities integrate to one, so positive and negative parts of the
    difference carry equal mass). Diagnostics keep the unweighted form
    (1/2) mean|rho_Q rho_Yi - rho_{Q,Yi}| and (1/2) mean|1 - r|.
    """
    x, q = _check_sample(inputs, outputs)
    n, d = x.shape
    h_q = bandwidth_rule(q)
    m_q = kde_pdf(KdeModel(q[:, None], np.array([h_q])), q[:, None])
    weighted, half_abs, literal = (np.empty(d) for _ in range(3))
    for i in range(d):
        yi = x[:, i]
        h_y = bandwidth_rule(yi)
        pair = KdeModel(np.column_stack([q, yi]), np.array([h_q, h_y]))
        m_y = kde_pdf(KdeModel(yi[:, None], np.array([h_y])), yi[:, None])
        joint = joint_pdf(pair, (0, 1), pair.sample)
        prod = m_q * m_y
        r = prod / joint
        weighted[i] = np.mean(np.clip(1.0 - r, 0.0, None))
        half_abs[i] = 0.5 * np.mean(np.abs(1.0 - r))
        literal[i] = 0.5 * np.mean(np.abs(prod - joint))
    return BorgonovoResult(
        delta=np.clip(weighted, 0.0, 1.0), estimator="kde", delta_raw=weighted,
        diagnostics={"half_abs_ratio": half_abs, "unweighted": literal},
    )


def borgonovo_histogram(inputs, outputs, n_bins: int = 10, n_cells: int | None = None) -> BorgonovoResult:
    """Delta indices from histograms.

    Each input is cut into ``n_bins`` equal-mass bins; the output range into
    ``n_cells`` equal-width cells (default ``n_bins``). Then
        delta_i = 1/2 sum_b p_b sum_c |P(c) - P(c | b)|.
    """
    if n_bins < 8:
        raise InputError("n_bins must be at least 8")
    x, q = _check_sample(inputs, outputs)
    n, d = x.shape
    n_cells = n_bins if n_cells is None else int(n_cells)
    lo, hi = float(q.min()), float(q.max())
    if hi > lo:
        cell = np.minimum(((q - lo) / (hi - lo) * n_cells).astype(np.int64), n_cells - 1)
    else:
        cell = np.zeros(n, dtype=np.int64)
    p_cell = np.bincount(cell, minlength=n_cells) / n
    delta = np.empty(d)
    for i in range(d):
        rank = np.argsort(x[:, i], kind="stable")
        bins = np.empty(n, dtype=np.int64)
        bins[rank] = np.arange(n) * n_bins // n
        joint = np.zeros((n_bins, n_cells))
        np.add.at(joint, (bins, cell), 1.0)
        p_bin = joint.sum(axis=1) / n
        cond = joint / joint.sum(axis=1, keepdims=True)
        delta[i] = 0.5 * np.sum(p_bin * np.abs(cond - p_cell).sum(axis=1))
    return BorgonovoResult(delta=np.clip(delta, 0.0, 1.0), estimator="histogram", delta_raw=delta,
                           diagnostics={"n_bins": n_bins, "n_cells": n_cells})


# -- ANOVA oracle -------------------------------------------------------------------

def hoeffding_check(model, dists, n: int = 64, rtol: float = 0.01) -> HoeffdingDiagnostic:
    """Brute-force ANOVA on an n^d Gauss-Legendre grid in probability space.

    Computes all first- and second-order partial variances and checks that,
    for d <= 2, they add up to the total variance within ``rtol``. For d = 3
    the third-order share is the remainder and is reported in ``residual``.
    """
    d = len(dists)
    if not 1 <= d <= 3:
        raise InputError("hoeffding_check supports 1 to 3 inputs")
    t, w = np.polynomial.legendre.leggauss(int(n))
    u, w = 0.5 * (t + 1.0), 0.5 * w
    axes = [dist.icdf(u) for dist in dists]
    grid = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.reshape(-1) for g in grid])
    qv = _apply(model, pts).reshape((n,) * d)

    def expect(arr, keep):
        """Weighted mean of arr over all axes not in ``keep``."""
        out = arr
        for ax in sorted(set(range(d)) - set(keep), reverse=True):
            out = np.tensordot(out, w, axes=([ax], [0]))
        return out

    def wvar(arr, keep):
        if not keep:
            return 0.0
        wt = w
        for _ in keep[1:]:
            wt = np.multiply.outer(wt, w)
        return float(np.sum(wt * arr * arr))

    mean = float(expect(qv, ()))
    var = float(expect((qv - mean) ** 2, ()))
    main = [expect(qv, (i,)) - mean for i in range(d)]
    v1 = np.array([wvar(m, (i,)) for i, m in enumerate(main)])
    v2 = {}
    for i, j in itertools.combinations(range(d), 2):
        inter = expect(qv, (i, j)) - main[i][:, None] - main[j][None, :] - mean
        v2[(i, j)] = wvar(inter, (i, j))
    v_not = np.empty(d)
    for i in range(d):
        rest = tuple(k for k in range(d) if k != i)
        v_not[i] = wvar(expect(qv, rest) - mean, rest) if rest else 0.0
    scale = max(float(np.max(np.abs(qv))), 1e-300)
    if var <= VARIANCE_RTOL * scale * scale:
        zeros = np.zeros(d)
        return HoeffdingDiagnostic(mean, 0.0, zeros, {k: 0.0 for k in v2}, zeros, 0.0, True)
    s1 = v1 / var
    s2 = {k: v / var for k, v in v2.items()}
    residual = 1.0 - s1.sum() - sum(s2.values())
    passed = d == 3 or abs(residual) <= rtol
    return HoeffdingDiagnostic(mean, var, s1, s2, 1.0 - v_not / var, float(residual), bool(passed))


def sensitivity_report(parameters, sobol: SobolResult, inputs, outputs, n_bins: int = 10,
                       output: str = "k_cc") -> SensitivityReport:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        kde = borgonovo_kde(inputs, outputs)
    hist = borgonovo_histogram(inputs, outputs, n_bins)
    return SensitivityReport(list(parameters), sobol, kde, hist, output)
