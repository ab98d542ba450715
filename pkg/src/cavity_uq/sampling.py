"""Random inputs and density estimation.

Bounded beta laws for production deviations, counter-based random substreams
that make samples independent of how the work is sharded across threads, and
a product-kernel Epanechnikov density estimator.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np
from scipy import special

from .errors import DegenerateDimensionError, InputError

DRAW_BLOCK = 1 << 16
EPANECHNIKOV_BANDWIDTH_FACTOR = 2.345
ICDF_TOL = 1e-12


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus stream id; every (seed, stream, block) triple is its own Philox stream."""

    master_seed: int = 0
    stream_id: int = 0

    def generator(self, block: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.master_seed) & (2**64 - 1),
            spawn_key=(int(self.stream_id) & (2**64 - 1), int(block)),
        )
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, stream_id: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, stream_id)


def _run_blocks(fn, n_blocks, threads):
    if threads is None or threads <= 1 or n_blocks <= 1:
        return [fn(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_blocks)))


def uniform_sample(n: int, seed: SeedSpec, threads: int = 1, block: int = DRAW_BLOCK):
    """n uniform(0, 1) draws; element k always comes from block k // ``block``."""
    n = int(n)
    n_blocks = -(-n // block)

    def draw(b):
        size = min(block, n - b * block)
        return seed.generator(b).random(size)

    parts = _run_blocks(draw, n_blocks, threads)
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass(frozen=True)
class BetaSpec:
    """Beta law with shapes ``a``, ``b`` scaled to [lower, upper] (mm).

    ``lower == upper`` is accepted as a point mass, which makes a chain with
    zero manufacturing spread.
    """

    lower: float = -0.3
    upper: float = 0.3
    a: float = 4.0
    b: float = 4.0

    def __post_init__(self):
        if self.lower > self.upper:
            raise InputError(f"lower {self.lower} exceeds upper {self.upper}")
        if self.a <= 0 or self.b <= 0:
            raise InputError("beta shape parameters must be positive")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def mean(self) -> float:
        return self.lower + self.width * self.a / (self.a + self.b)

    @property
    def std(self) -> float:
        a, b = self.a, self.b
        return self.width * np.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))

    def pdf(self, y):
        return beta_pdf(y, self)

    def cdf(self, y):
        if self.width == 0:
            return (np.asarray(y, dtype=float) >= self.lower).astype(float)
        t = np.clip((np.asarray(y, dtype=float) - self.lower) / self.width, 0.0, 1.0)
        return special.betainc(self.a, self.b, t)

    def icdf(self, p):
        return beta_icdf(p, self)


def beta_pdf(y, spec: BetaSpec = BetaSpec()):
    """Density of the scaled beta law; zero outside (lower, upper)."""
    y = np.asarray(y, dtype=float)
    l, u, a, b = spec.lower, spec.upper, spec.a, spec.b
    inside = (y > l) & (y < u)
    yc = np.where(inside, y, 0.5 * (l + u))
    with np.errstate(divide="ignore", invalid="ignore"):
        log_dens = (
            (a - 1) * np.log(yc - l) + (b - 1) * np.log(u - yc)
            - special.betaln(a, b) - (a + b - 1) * np.log(u - l)
        )
    out = np.where(inside, np.exp(log_dens), 0.0)
    return out if out.ndim else float(out)


def beta_icdf(p, spec: BetaSpec = BetaSpec(), tol: float = ICDF_TOL, maxiter: int = 100):
    """Inverse CDF by safeguarded Newton iteration on the regularized incomplete beta.

    A Newton step leaving the current bracket is replaced by bisection.
    """
    scalar = np.ndim(p) == 0
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if spec.width == 0:
        out = np.full_like(p, spec.lower)
        return float(out[0]) if scalar else out
    a, b = spec.a, spec.b
    lo = np.zeros_like(p)
    hi = np.ones_like(p)
    mean = a / (a + b)
    sd = np.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
    x = np.clip(mean + sd * special.ndtri(np.clip(p, 1e-300, 1 - 1e-16)), 1e-6, 1 - 1e-6)
    lbeta = special.betaln(a, b)
    active = np.ones(p.shape, dtype=bool)
    for _ in range(maxiter):
        idx = np.nonzero(active)
        xa = x[idx]
        f = special.betainc(a, b, xa) - p[idx]
        lo_a = np.where(f < 0, xa, lo[idx])
        hi_a = np.where(f > 0, xa, hi[idx])
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            dens = np.exp((a - 1) * np.log(xa) + (b - 1) * np.log1p(-xa) - lbeta)
            step = f / dens
        xn = xa - step
        bad = ~np.isfinite(xn) | (xn <= lo_a) | (xn >= hi_a)
        xn = np.where(bad, 0.5 * (lo_a + hi_a), xn)
        done = (np.abs(xn - xa) <= tol) | (f == 0) | (hi_a - lo_a <= tol)
        x[idx] = np.where(f == 0, xa, xn)
        lo[idx] = lo_a
        hi[idx] = hi_a
        still = active[idx]
        still[done] = False
        active[idx] = still
        if not active.any():
            break
    x = np.where(p <= 0, 0.0, np.where(p >= 1, 1.0, x))
    out = spec.lower + spec.width * x
    return float(out[0]) if scalar else out


def beta_sample(n: int, spec: BetaSpec = BetaSpec(), seed: SeedSpec = SeedSpec(), threads: int = 1):
    """n i.i.d. draws by inverse CDF of counter-based uniforms."""
    if n < 0:
        raise InputError("sample size must be non-negative")
    n = int(n)
    n_blocks = -(-n // DRAW_BLOCK)

    def draw(b):
        size = min(DRAW_BLOCK, n - b * DRAW_BLOCK)
        return beta_icdf(seed.generator(b).random(size), spec)

    parts = _run_blocks(draw, n_blocks, threads)
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass(frozen=True)
class Uniform:
    lower: float = -1.0
    upper: float = 1.0

    def icdf(self, p):
        return self.lower + (self.upper - self.lower) * np.asarray(p, dtype=float)

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        return np.where((y >= self.lower) & (y <= self.upper), 1.0 / (self.upper - self.lower), 0.0)

    @property
    def mean(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def std(self):
        return (self.upper - self.lower) / np.sqrt(12.0)


@dataclass(frozen=True)
class EmpiricalLaw:
    """Law of a one-dimensional sample, inverted by interpolated quantiles."""

    sample: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sample", np.sort(np.asarray(self.sample, dtype=float)))

    def icdf(self, p):
        return np.quantile(self.sample, np.asarray(p, dtype=float))

    @property
    def mean(self):
        return float(self.sample.mean())

    @property
    def std(self):
        return float(self.sample.std(ddof=1))


# -- kernel density estimation -------------------------------------------------

def epanechnikov(t):
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t), 0.0)


@dataclass(frozen=True)
class KdeModel:
    """Product Epanechnikov kernel estimate over an (n, d) sample."""

    sample: np.ndarray
    bandwidths: np.ndarray

    def __post_init__(self):
        sample = np.asarray(self.sample, dtype=float)
        if sample.ndim == 1:
            sample = sample[:, None]
        bw = np.atleast_1d(np.asarray(self.bandwidths, dtype=float))
        if bw.shape != (sample.shape[1],):
            raise InputError("one bandwidth per sample dimension required")
        if np.any(~(bw > 0)):
            raise DegenerateDimensionError("bandwidths must be positive")
        object.__setattr__(self, "sample", sample)
        object.__setattr__(self, "bandwidths", bw)

    @property
    def n(self) -> int:
        return self.sample.shape[0]

    @property
    def dims(self) -> int:
        return self.sample.shape[1]


def bandwidth_rule(x) -> float:
    """Normal-reference bandwidth for the Epanechnikov kernel."""
    x = np.asarray(x, dtype=float)
    sigma = x.std(ddof=1)
    return EPANECHNIKOV_BANDWIDTH_FACTOR * sigma * x.shape[0] ** (-0.2)


def kde_fit(sample) -> KdeModel:
    sample = np.asarray(sample, dtype=float)
    if sample.ndim == 1:
        sample = sample[:, None]
    n = sample.shape[0]
    if n < 10:
        raise InputError(f"need at least 10 observations, got {n}")
    sigma = sample.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(sample).max(axis=0), 1.0)
    flat = np.flatnonzero(~(sigma > 1e-14 * scale))
    if flat.size:
        raise DegenerateDimensionError(f"zero spread in dimension(s) {flat.tolist()}")
    bw = EPANECHNIKOV_BANDWIDTH_FACTOR * sigma * n ** (-0.2)
    return KdeModel(sample, bw)


def _kde_1d(data, h, x):
    """Exact Epanechnikov estimate at ``x`` using sorted prefix sums (O(n log n))."""
    shift = data.mean()
    z = np.sort((data - shift) / h)
    xs = (np.asarray(x, dtype=float) - shift) / h
    s1 = np.concatenate([[0.0], np.cumsum(z)])
    s2 = np.concatenate([[0.0], np.cumsum(z * z)])
    lo = np.searchsorted(z, xs - 1.0, side="left")
    hi = np.searchsorted(z, xs + 1.0, side="right")
    cnt = hi - lo
    sum1 = s1[hi] - s1[lo]
    sum2 = s2[hi] - s2[lo]
    quad = cnt * xs * xs - 2.0 * xs * sum1 + sum2
    dens = 0.75 * (cnt - quad) / (z.shape[0] * h)
    return np.maximum(dens, 0.0)


@numba.njit(cache=True, nogil=True)
def _window_product_sum(zs, ws, lo, hi, xq, xw, out):
    for k in range(xq.shape[0]):
        acc = 0.0
        for j in range(lo[k], hi[k]):
            u = xq[k] - zs[j]
            v = xw[k] - ws[j]
            if abs(u) <= 1.0 and abs(v) <= 1.0:
                acc += (1.0 - u * u) * (1.0 - v * v)
        out[k] = acc


def _kde_2d(data, h, points):
    """Product-kernel estimate for two columns; windowed on the sorted first column."""
    shift = data.mean(axis=0)
    z = (data - shift) / h
    order = np.argsort(z[:, 0], kind="stable")
    zs = np.ascontiguousarray(z[order, 0])
    ws = np.ascontiguousarray(z[order, 1])
    p = (np.asarray(points, dtype=float) - shift) / h
    xq = np.ascontiguousarray(p[:, 0])
    xw = np.ascontiguousarray(p[:, 1])
    lo = np.searchsorted(zs, xq - 1.0, side="left")
    hi = np.searchsorted(zs, xq + 1.0, side="right")
    out = np.empty(xq.shape[0])
    _window_product_sum(zs, ws, lo, hi, xq, xw, out)
    return 0.5625 * out / (z.shape[0] * h[0] * h[1])


def kde_pdf(model: KdeModel, points):
    """Joint density at one point (shape (d,)) or many (shape (m, d))."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != model.dims:
        raise InputError(f"points must have {model.dims} columns")
    if model.dims == 1:
        out = _kde_1d(model.sample[:, 0], model.bandwidths[0], pts[:, 0])
    elif model.dims == 2:
        out = _kde_2d(model.sample, model.bandwidths, pts)
    else:
        out = np.empty(pts.shape[0])
        norm = model.n * np.prod(model.bandwidths)
        for start in range(0, pts.shape[0], 256):
            chunk = pts[start:start + 256]
            t = (chunk[:, None, :] - model.sample[None, :, :]) / model.bandwidths
            out[start:start + 256] = np.prod(epanechnikov(t), axis=2).sum(axis=1) / norm
    return float(out[0]) if single else out


def marginal_pdf(model: KdeModel, dim: int, x):
    """One-dimensional marginal of the product-kernel estimate."""
    x = np.asarray(x, dtype=float)
    out = _kde_1d(model.sample[:, dim], model.bandwidths[dim], np.atleast_1d(x))
    return out if x.ndim else float(out[0])


def joint_pdf(model: KdeModel, dims, points):
    """Pairwise-joint marginal over columns ``dims = (i, j)`` at (m, 2) points."""
    i, j = dims
    sub = model.sample[:, [i, j]]
    return _kde_2d(sub, model.bandwidths[[i, j]], np.atleast_2d(points))
