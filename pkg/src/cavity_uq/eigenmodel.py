"""Coupled-resonator forward model of a multi-cell cavity.

Each cell is a resonator with an uncoupled frequency that depends linearly on
its equator, iris and length deviations; neighbouring cells couple through the
shared iris. The fundamental passband is the spectrum of a symmetric
tridiagonal matrix (units Hz^2) whose end cells carry one extra end-iris
coupling term, so a uniform chain has phase advances m*pi/N, m = 1..N, and an
exactly flat, alternating pi-mode.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.optimize import elementwise

from .errors import BracketError, InvalidConfigError, NoConvergenceError
from .tridiag import eigh_tridiagonal, eigh_tridiagonal_batch

R_EQ_NOMINAL_MM = 103.3
# Defaults are the output of `calibrate` with its default targets and seed.
DEFAULT_KAPPA = 0.009609964537963929
LENGTH_BRACKET_MM = (-10.0, 10.0)
TUNE_FREQ_TOL_HZ = 1.0
TUNE_XTOL_MM = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    """Calibration constants of the geometry-to-frequency map.

    Sensitivities are per mm. ``f_cell_nom`` is the uncoupled frequency of a
    nominal cell, set so the nominal cell sits at ``f_target``. The defaults
    are already calibrated.
    """

    n_cells: int = 9
    f_target: float = 1.3e9
    kappa_nom: float = DEFAULT_KAPPA
    c_ir: float = 0.0014901590152370497
    alpha_eq: float = -1.0 / R_EQ_NOMINAL_MM
    alpha_ir: float = 1e-4
    alpha_len: float = -0.0008915493276924671
    f_cell_nom: float = 1.3e9 / math.sqrt(1.0 + 4.0 * DEFAULT_KAPPA)

    def validate(self) -> "ModelConfig":
        if self.n_cells < 2:
            raise InvalidConfigError("n_cells must be at least 2")
        if not self.kappa_nom > 0:
            raise InvalidConfigError(f"kappa_nom must be positive, got {self.kappa_nom}")
        if not self.alpha_eq < 0:
            raise InvalidConfigError(f"alpha_eq must be negative, got {self.alpha_eq}")
        if not self.alpha_len < 0:
            raise InvalidConfigError(f"alpha_len must be negative, got {self.alpha_len}")
        if not self.kappa_nom - 0.5 * abs(self.c_ir) > 0:
            raise InvalidConfigError("kappa_nom + c_ir*y must stay positive for |y| <= 0.5 mm")
        if not (self.f_target > 0 and self.f_cell_nom > 0):
            raise InvalidConfigError("frequencies must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {k: (int(v) if k == "n_cells" else float(v)) for k, v in data.items()}
        return cls(**kwargs)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source) -> "ModelConfig":
        """Load from a path or a JSON string."""
        text = str(source)
        if not text.lstrip().startswith("{"):
            text = Path(source).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)


@dataclass(frozen=True)
class CellGeometry:
    d_req: float = 0.0
    d_rir_left: float = 0.0
    d_rir_right: float = 0.0
    d_len: float = 0.0

    def with_length(self, d_len: float) -> "CellGeometry":
        return CellGeometry(self.d_req, self.d_rir_left, self.d_rir_right, float(d_len))


@dataclass(frozen=True)
class CavityGeometry:
    """Deviations of an assembled cavity (mm).

    ``d_req`` and ``d_len`` have one entry per cell, ``d_rir`` one per iris.
    """

    d_req: np.ndarray
    d_rir: np.ndarray
    d_len: np.ndarray

    def __post_init__(self):
        d_req = np.asarray(self.d_req, dtype=float).copy()
        d_rir = np.asarray(self.d_rir, dtype=float).copy()
        d_len = np.asarray(self.d_len, dtype=float).copy()
        n = d_req.shape[0]
        if d_req.shape != (n,) or d_rir.shape != (n + 1,) or d_len.shape != (n,):
            raise InvalidConfigError(
                f"inconsistent geometry shapes {d_req.shape}, {d_rir.shape}, {d_len.shape}"
            )
        object.__setattr__(self, "d_req", d_req)
        object.__setattr__(self, "d_rir", d_rir)
        object.__setattr__(self, "d_len", d_len)

    @property
    def n_cells(self) -> int:
        return self.d_req.shape[0]

    @property
    def y(self) -> np.ndarray:
        """The parameter vector [d_req, d_rir]."""
        return np.concatenate([self.d_req, self.d_rir])

    @classmethod
    def from_y(cls, y, d_len=None) -> "CavityGeometry":
        y = np.asarray(y, dtype=float)
        n = (y.shape[0] - 1) // 2
        if d_len is None:
            d_len = np.zeros(n)
        return cls(y[:n], y[n:], d_len)

    @classmethod
    def nominal(cls, n_cells: int = 9) -> "CavityGeometry":
        return cls(np.zeros(n_cells), np.zeros(n_cells + 1), np.zeros(n_cells))

    def cell(self, i: int) -> CellGeometry:
        return CellGeometry(self.d_req[i], self.d_rir[i], self.d_rir[i + 1], self.d_len[i])

    def reversed(self) -> "CavityGeometry":
        return CavityGeometry(self.d_req[::-1], self.d_rir[::-1], self.d_len[::-1])

    def with_lengths(self, d_len) -> "CavityGeometry":
        return CavityGeometry(self.d_req, self.d_rir, d_len)


@dataclass(frozen=True)
class ModeSpectrum:
    """Passband frequencies (Hz, ascending) and unit-norm cell amplitudes.

    Column m of ``amps`` belongs to ``freqs[m]``.
    """

    freqs: np.ndarray
    amps: np.ndarray


@dataclass(frozen=True)
class QoiSet:
    f_pi: float
    f_0: float
    k_cc: float
    flatness: float


def coupling(d_rir, cfg: ModelConfig):
    """Iris coupling factor for iris deviations ``d_rir`` (mm)."""
    kappa = cfg.kappa_nom + cfg.c_ir * np.asarray(d_rir, dtype=float)
    if np.any(kappa <= 0):
        raise InvalidConfigError("non-positive iris coupling")
    return kappa


def uncoupled_frequency(d_req, d_rir_left, d_rir_right, d_len, cfg: ModelConfig):
    rel = (
        1.0
        + cfg.alpha_eq * np.asarray(d_req, dtype=float)
        + cfg.alpha_ir * 0.5 * (np.asarray(d_rir_left, dtype=float) + d_rir_right)
        + cfg.alpha_len * np.asarray(d_len, dtype=float)
    )
    return cfg.f_cell_nom * rel


def cell_frequencies(d_req, d_rir_left, d_rir_right, d_len, cfg: ModelConfig):
    """Vectorized single-cell pi-phase frequency (Hz)."""
    k_left = coupling(d_rir_left, cfg)
    k_right = coupling(d_rir_right, cfg)
    f_u = uncoupled_frequency(d_req, d_rir_left, d_rir_right, d_len, cfg)
    return f_u * np.sqrt(1.0 + 2.0 * (k_left + k_right))


def cell_frequency(cell: CellGeometry, cfg: ModelConfig) -> float:
    """Frequency a cell would have as part of an infinite chain of identical cells in the pi-mode."""
    return float(
        cell_frequencies(cell.d_req, cell.d_rir_left, cell.d_rir_right, cell.d_len, cfg)
    )


def assemble_tridiagonal(d_req, d_rir, d_len, cfg: ModelConfig):
    """Diagonal and off-diagonal of the chain matrix for stacked geometries.

    Args:
        d_req: (..., N) equator deviations.
        d_rir: (..., N+1) iris deviations.
        d_len: (..., N) length deviations.

    Returns:
        (diag (..., N), off (..., N-1)) in Hz^2.
    """
    d_req = np.asarray(d_req, dtype=float)
    d_rir = np.asarray(d_rir, dtype=float)
    kappa = coupling(d_rir, cfg)
    f = uncoupled_frequency(d_req, d_rir[..., :-1], d_rir[..., 1:], d_len, cfg)
    load = 1.0 + kappa[..., :-1] + kappa[..., 1:]
    load[..., 0] += kappa[..., 0]
    load[..., -1] += kappa[..., -1]
    diag = f * f * load
    off = -f[..., :-1] * f[..., 1:] * kappa[..., 1:-1]
    return diag, off


def assemble_matrix(geom: CavityGeometry, cfg: ModelConfig) -> np.ndarray:
    diag, off = assemble_tridiagonal(geom.d_req, geom.d_rir, geom.d_len, cfg)
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def solve_spectrum(matrix) -> ModeSpectrum:
    """All eigenpairs of a symmetric tridiagonal matrix in Hz^2.

    Accepts either a dense square array or a ``(diag, off)`` pair.
    """
    if isinstance(matrix, tuple):
        diag, off = matrix
    else:
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("matrix must be square")
        band = np.triu(np.tril(matrix, 1), -1)
        if not np.array_equal(band, matrix) or not np.array_equal(matrix, matrix.T):
            raise ValueError("matrix must be symmetric tridiagonal")
        diag, off = np.diag(matrix), np.diag(matrix, 1)
    w, v = eigh_tridiagonal(diag, off)
    return ModeSpectrum(np.sqrt(w), v)


def coupling_coefficient(f_pi, f_0):
    return 2.0 * (f_pi - f_0) / (f_pi + f_0)


def field_flatness(pi_amps):
    a = np.abs(np.asarray(pi_amps, dtype=float))
    return a.min(axis=-1) / a.max(axis=-1)


def compute_qois(spectrum: ModeSpectrum) -> QoiSet:
    f_pi = float(spectrum.freqs[-1])
    f_0 = float(spectrum.freqs[0])
    return QoiSet(
        f_pi=f_pi,
        f_0=f_0,
        k_cc=float(coupling_coefficient(f_pi, f_0)),
        flatness=float(field_flatness(spectrum.amps[:, -1])),
    )


def solve_batch(diag, off):
    """Frequencies (Hz), pi-mode flatness and convergence flags for stacked matrices."""
    w, top, ok = eigh_tridiagonal_batch(diag, off)
    ok &= (w > 0).all(axis=1)
    with np.errstate(invalid="ignore"):
        freqs = np.sqrt(w)
    return freqs, field_flatness(top), ok


def tune_lengths(d_req, d_rir_left, d_rir_right, cfg: ModelConfig, bracket=LENGTH_BRACKET_MM):
    """Length deviations that put each cell at ``cfg.f_target``.

    Vectorized bracketed root-finding over ``bracket`` (mm). Returns the
    lengths and a boolean mask; cells without a sign change in the bracket
    get NaN and False.
    """
    d_req, d_rl, d_rr = np.broadcast_arrays(
        np.asarray(d_req, dtype=float), np.asarray(d_rir_left, dtype=float),
        np.asarray(d_rir_right, dtype=float),
    )
    shape = d_req.shape
    if d_req.size == 0:
        return np.zeros(shape), np.ones(shape, dtype=bool)

    def residual(x, req, rl, rr):
        return cell_frequencies(req, rl, rr, x, cfg) / cfg.f_target - 1.0

    lo = np.full(shape, bracket[0])
    hi = np.full(shape, bracket[1])
    res = elementwise.find_root(
        residual, (lo, hi), args=(d_req, d_rl, d_rr),
        tolerances=dict(xatol=TUNE_XTOL_MM, xrtol=0.0, fatol=0.0, frtol=0.0),
    )
    x = np.asarray(res.x, dtype=float)
    ok = np.asarray(res.status) == 0
    ok &= np.abs(np.asarray(res.f_x)) * cfg.f_target <= TUNE_FREQ_TOL_HZ
    x = np.where(ok, x, np.nan)
    return x, ok


def tune_cell(cell: CellGeometry, cfg: ModelConfig) -> float:
    """Length deviation (mm) that tunes one cell to the target frequency."""
    x, ok = tune_lengths(cell.d_req, cell.d_rir_left, cell.d_rir_right, cfg)
    if not bool(ok):
        raise BracketError(
            f"no length in {LENGTH_BRACKET_MM} mm tunes cell {cell} to {cfg.f_target} Hz"
        )
    return float(x)


def tune_geometry(geom: CavityGeometry, cfg: ModelConfig) -> CavityGeometry:
    x, ok = tune_lengths(geom.d_req, geom.d_rir[:-1], geom.d_rir[1:], cfg)
    if not ok.all():
        raise BracketError(f"cells {np.flatnonzero(~ok).tolist()} cannot be tuned")
    return geom.with_lengths(x)


def tuned_uniform_kcc(shift_mm, cfg: ModelConfig):
    """k_cc of the tuned cavity whose irises all deviate by ``shift_mm`` (equators nominal).

    Vectorized over ``shift_mm``.
    """
    shift = np.atleast_1d(np.asarray(shift_mm, dtype=float))
    n = cfg.n_cells
    d_rir = np.repeat(shift[:, None], n + 1, axis=1)
    d_req = np.zeros((shift.size, n))
    d_len, ok = tune_lengths(d_req, d_rir[:, :-1], d_rir[:, 1:], cfg)
    if not ok.all():
        raise BracketError("uniform cavity cannot be tuned")
    diag, off = assemble_tridiagonal(d_req, d_rir, d_len, cfg)
    freqs, _, conv = solve_batch(diag, off)
    if not conv.all():
        raise NoConvergenceError("uniform cavity spectrum did not converge")
    kcc = coupling_coefficient(freqs[:, -1], freqs[:, 0])
    return kcc if np.ndim(shift_mm) else float(kcc[0])
