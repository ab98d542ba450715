"""Virtual manufacturing chain: produce, sort, weld, tune, filter, evaluate.

Cavities are processed in fixed-size blocks, each drawing from its own
counter-based substream, so results do not depend on the worker count.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .eigenmodel import (
    ModelConfig,
    assemble_tridiagonal,
    cell_frequencies,
    coupling_coefficient,
    solve_batch,
    tune_lengths,
)
from .errors import InputError, MissingSurrogateError
from .sampling import BetaSpec, SeedSpec, _run_blocks, beta_icdf

log = logging.getLogger(__name__)

N_CELLS = 9
N_MID = 7
CAVITY_BLOCK = 4096
FLATNESS_BINS = (0.95, 0.98)

Y_COLUMNS = [f"dreq{i}" for i in range(1, N_CELLS + 1)] + [
    f"drir{j}" for j in range(1, N_CELLS + 2)
]


@dataclass(frozen=True)
class ChainConfig:
    """Settings of one virtual production run.

    ``iris_mode="common"`` gives every iris of a cavity the same deviation
    (one draw per cavity), the simplification used for the ten-parameter
    study and the inverse analysis.
    """

    n_cavities: int = 1_000_000
    length_bound: float = 3.0
    dist: BetaSpec = field(default_factory=BetaSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    eval_mode: str = "direct"
    iris_mode: str = "independent"

    def __post_init__(self):
        if self.n_cavities < 0:
            raise InputError("n_cavities must be non-negative")
        if not self.length_bound > 0:
            raise InputError("length_bound must be positive")
        if self.eval_mode not in ("direct", "surrogate"):
            raise InputError(f"unknown eval_mode {self.eval_mode!r}")
        if self.iris_mode not in ("independent", "common"):
            raise InputError(f"unknown iris_mode {self.iris_mode!r}")
        if self.model.n_cells != N_CELLS:
            raise InputError("the manufacturing chain is defined for 9-cell cavities")


@dataclass
class ChainSurrogates:
    """Surrogates used when ``eval_mode == "surrogate"``.

    ``cell`` maps (d_req, d_rir_left, d_rir_right, d_len) to the cell
    frequency; ``cavity`` maps the 19-vector to 9 frequencies plus k_cc.
    """

    cell: object
    cavity: object


@dataclass
class ChainResult:
    n_cavities: int
    accepted_sample: np.ndarray          # (m, 19) welded deviations Y_sort
    freqs: np.ndarray                    # (m, 9) Hz
    k_cc: np.ndarray                     # (m,)
    flatness: np.ndarray | None          # (m,), None in surrogate mode
    length_sum: np.ndarray               # (m,) sum of tuning lengths, mm
    failures: dict = field(default_factory=dict)
    eval_mode: str = "direct"

    @property
    def n_accepted(self) -> int:
        return self.accepted_sample.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_cavities if self.n_cavities else 0.0

    @property
    def moments(self) -> dict:
        out = {
            "f_pi": moment_stats(self.freqs[:, -1]),
            "f_0": moment_stats(self.freqs[:, 0]),
            "k_cc": moment_stats(self.k_cc),
        }
        if self.flatness is not None:
            out["flatness"] = moment_stats(self.flatness)
        return out

    @property
    def spectra_stats(self) -> np.ndarray:
        """(9, 2) array of per-mode mean and std in Hz."""
        return np.array([moment_stats(self.freqs[:, m]) for m in range(self.freqs.shape[1])])

    def flatness_histogram(self) -> dict | None:
        if self.flatness is None:
            return None
        lo, hi = FLATNESS_BINS
        f = self.flatness
        return {
            "<95%": int(np.sum(f < lo)),
            "95-98%": int(np.sum((f >= lo) & (f <= hi))),
            ">98%": int(np.sum(f > hi)),
        }


def moment_stats(values):
    """Arithmetic mean and unbiased (n-1) standard deviation."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return (float("nan"), float("nan"))
    if np.all(v == v[0]):
        return (float(v[0]), 0.0 if v.size > 1 else float("nan"))
    mean = float(np.mean(v))
    std = float(np.std(v, ddof=1)) if v.size > 1 else float("nan")
    return (mean, std)


# -- pipeline stages -----------------------------------------------------------

def _block_draws(block: int, size: int, cfg: ChainConfig, seed: SeedSpec):
    """Raw cells of one cavity block, shape (size, 9, 3): d_req, left iris, right iris."""
    u = seed.generator(block).random((size, N_CELLS, 3))
    raw = beta_icdf(u, cfg.dist)
    if cfg.iris_mode == "common":
        raw[:, :, 1:] = raw[:, :1, 1:2]
    return raw


def generate_cells(cfg: ChainConfig, seed: SeedSpec = SeedSpec(), n: int | None = None, threads: int = 1):
    """Raw cells for ``n`` cavities (default ``cfg.n_cavities``).

    Returns an (n, 9, 3) array; cell 0 and cell 8 are the end cells and
    cells 1..7 the middle cells. Columns are d_req, left iris, right iris.
    """
    n = cfg.n_cavities if n is None else int(n)
    n_blocks = -(-n // CAVITY_BLOCK)
    parts = _run_blocks(
        lambda b: _block_draws(b, min(CAVITY_BLOCK, n - b * CAVITY_BLOCK), cfg, seed),
        n_blocks, threads,
    )
    return np.concatenate(parts) if parts else np.zeros((0, N_CELLS, 3))


def sort_cells(freqs):
    """Assembly order of the middle cells from their frequencies.

    Returns, for each cavity, the indices of the cells going to positions
    2..8: positions 2..7 in strictly decreasing frequency, position 8 the
    cell closest to the mean frequency. Ties go to the lowest original index.
    """
    f = np.asarray(freqs, dtype=float)
    single = f.ndim == 1
    f = np.atleast_2d(f)
    dev = np.abs(f - f.mean(axis=1, keepdims=True))
    closest = np.argmin(dev, axis=1)
    key = -f.copy()
    key[np.arange(f.shape[0]), closest] = np.inf
    order = np.argsort(key, axis=1, kind="stable")
    return order[0] if single else order


def mid_cell_frequencies(mids, cfg: ChainConfig, cell_surrogate=None):
    """Frequencies of untuned middle cells, shape (n, 7)."""
    if cell_surrogate is None:
        return cell_frequencies(mids[..., 0], mids[..., 1], mids[..., 2], 0.0, cfg.model)
    pts = np.concatenate([mids.reshape(-1, 3), np.zeros((mids.shape[0] * mids.shape[1], 1))], axis=1)
    return cell_surrogate.evaluate(pts)[:, 0].reshape(mids.shape[:2])


def assemble_positions(raw, order):
    """Put middle cells at positions 2..8 according to ``order``; ends stay at 1 and 9."""
    raw = np.asarray(raw)
    mids = raw[:, 1:8]
    placed = np.take_along_axis(mids, order[:, :, None], axis=1)
    return np.concatenate([raw[:, :1], placed, raw[:, 8:]], axis=1)


def weld(cells):
    """Weld positioned cells into (d_req (n, 9), d_rir (n, 10)).

    Interior irises are the mean of the two facing half-irises; the two end
    irises come straight from the end cells.
    """
    cells = np.asarray(cells, dtype=float)
    single = cells.ndim == 2
    cells = np.atleast_3d(cells) if not single else cells[None]
    d_req = cells[:, :, 0].copy()
    d_rir = np.empty((cells.shape[0], cells.shape[1] + 1))
    d_rir[:, 0] = cells[:, 0, 1]
    d_rir[:, -1] = cells[:, -1, 2]
    d_rir[:, 1:-1] = 0.5 * (cells[:, :-1, 2] + cells[:, 1:, 1])
    if single:
        return d_req[0], d_rir[0]
    return d_req, d_rir


def tune_cavity(d_req, d_rir, model: ModelConfig):
    """Per-cell tuning lengths of welded cavities and a per-cavity success mask."""
    d_req = np.asarray(d_req, dtype=float)
    d_rir = np.asarray(d_rir, dtype=float)
    d_len, ok = tune_lengths(d_req, d_rir[..., :-1], d_rir[..., 1:], model)
    return d_len, ok.all(axis=-1)


def _process_block(block, size, cfg, seed, surrogates):
    raw = _block_draws(block, size, cfg, seed)
    cell_model = surrogates.cell if surrogates is not None else None
    freqs = mid_cell_frequencies(raw[:, 1:8], cfg, cell_model)
    cells = assemble_positions(raw, sort_cells(freqs))
    d_req, d_rir = weld(cells)
    d_len, tuned = tune_cavity(d_req, d_rir, cfg.model)
    length_sum = np.where(tuned, np.nansum(d_len, axis=1), np.inf)
    accept = tuned & (length_sum < cfg.length_bound)
    failures = Counter({"tuning-bracket": int(np.sum(~tuned)),
                        "length-constraint": int(np.sum(tuned & ~accept))})
    y = np.concatenate([d_req, d_rir], axis=1)[accept]
    if cfg.eval_mode == "direct":
        diag, off = assemble_tridiagonal(d_req[accept], d_rir[accept], d_len[accept], cfg.model)
        f, flat, conv = solve_batch(diag, off)
        if not conv.all():
            failures["eigensolver"] += int(np.sum(~conv))
            y, f, flat = y[conv], f[conv], flat[conv]
            length_sum_acc = length_sum[accept][conv]
        else:
            length_sum_acc = length_sum[accept]
        kcc = coupling_coefficient(f[:, -1], f[:, 0])
    else:
        out = surrogates.cavity.evaluate(y)
        f, kcc, flat = out[:, :N_CELLS], out[:, N_CELLS], None
        length_sum_acc = length_sum[accept]
    return y, f, kcc, flat, length_sum_acc, failures


def run_chain(cfg: ChainConfig, seed: SeedSpec = SeedSpec(), surrogates: ChainSurrogates | None = None,
              threads: int = 1) -> ChainResult:
    """Run the full pipeline for ``cfg.n_cavities`` virtual cavities.

    Cavities that cannot be tuned inside the length bracket, that violate
    the total-length bound after tuning, or whose spectrum fails to converge
    are rejected; the counts per reason are kept in ``failures``.
    """
    if cfg.eval_mode == "surrogate":
        if surrogates is None or surrogates.cavity is None or surrogates.cell is None:
            raise MissingSurrogateError("surrogate evaluation requested but no surrogate model given")
    else:
        surrogates = None
    n = cfg.n_cavities
    n_blocks = -(-n // CAVITY_BLOCK)
    parts = _run_blocks(
        lambda b: _process_block(b, min(CAVITY_BLOCK, n - b * CAVITY_BLOCK), cfg, seed, surrogates),
        n_blocks, threads,
    )
    failures = Counter()
    for p in parts:
        failures.update(p[5])
    for reason, count in sorted(failures.items()):
        if count:
            log.info("rejected %d cavities: %s", count, reason)
    if parts:
        y = np.concatenate([p[0] for p in parts])
        f = np.concatenate([p[1] for p in parts])
        kcc = np.concatenate([p[2] for p in parts])
        flat = None if cfg.eval_mode == "surrogate" else np.concatenate([p[3] for p in parts])
        lsum = np.concatenate([p[4] for p in parts])
    else:
        y, f, kcc = np.zeros((0, 19)), np.zeros((0, N_CELLS)), np.zeros(0)
        flat = None if cfg.eval_mode == "surrogate" else np.zeros(0)
        lsum = np.zeros(0)
    return ChainResult(
        n_cavities=n, accepted_sample=y, freqs=f, k_cc=kcc, flatness=flat,
        length_sum=lsum, failures={k: v for k, v in sorted(failures.items()) if v},
        eval_mode=cfg.eval_mode,
    )


def direct_cavity_outputs(y, model: ModelConfig):
    """The 19-parameter cavity map: tune, solve, return (m, 10) = 9 frequencies (Hz) + k_cc.

    Cavities that cannot be tuned give NaN rows.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d_req, d_rir = y[:, :N_CELLS], y[:, N_CELLS:]
    d_len, ok = tune_cavity(d_req, d_rir, model)
    out = np.full((y.shape[0], N_CELLS + 1), np.nan)
    if ok.any():
        diag, off = assemble_tridiagonal(d_req[ok], d_rir[ok], d_len[ok], model)
        f, _, conv = solve_batch(diag, off)
        f[~conv] = np.nan
        out[ok, :N_CELLS] = f
        out[ok, N_CELLS] = coupling_coefficient(f[:, -1], f[:, 0])
    return out


def direct_cell_outputs(x, model: ModelConfig):
    """The 4-parameter cell map (d_req, d_rir_left, d_rir_right, d_len) -> frequency, shape (m, 1)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return cell_frequencies(x[:, 0], x[:, 1], x[:, 2], x[:, 3], model)[:, None]


def common_iris_view(y):
    """Ten-parameter view (9 equators + common iris shift) of 19-vectors with equal irises."""
    y = np.atleast_2d(y)
    return np.concatenate([y[:, :N_CELLS], y[:, N_CELLS:N_CELLS + 1]], axis=1)


def expand_common_iris(x10):
    x10 = np.atleast_2d(np.asarray(x10, dtype=float))
    return np.concatenate([x10[:, :N_CELLS], np.repeat(x10[:, N_CELLS:], N_CELLS + 1, axis=1)], axis=1)


def with_model(cfg: ChainConfig, model: ModelConfig) -> ChainConfig:
    return replace(cfg, model=model)
