"""Dimension-adaptive sparse-grid interpolation on Leja nodes.

Every multi-index alpha carries one node (the tensor of univariate Leja
points y[alpha_k]) and one hierarchical basis function, the product of
univariate Newton-type Lagrange polynomials
    L_j(y) = prod_{i<j} (y - y_i) / (y_j - y_i),
which vanish at all earlier nodes. For a downward-closed index set the
interpolant is sum_alpha s_alpha * B_alpha(y) with surplus
s_alpha = f(y_alpha) - I(y_alpha), the interpolant over the indices below
alpha.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .sampling import SeedSpec

log = logging.getLogger(__name__)

LEJA_GRID = 1_000_001
LEJA_CHUNK = 32
_GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)
EVAL_CHUNK = 16384


# -- Leja nodes ----------------------------------------------------------------

def _log_prod(x, nodes):
    return np.sum(np.log(np.abs(x - nodes)))


def _polish(x0, step, nodes):
    """Golden-section maximization of the log-product in [x0 - step, x0 + step] ∩ [-1, 1]."""
    a, b = max(-1.0, x0 - step), min(1.0, x0 + step)
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = _log_prod(c, nodes), _log_prod(d, nodes)
    while b - a > 1e-14:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _log_prod(c, nodes)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = _log_prod(d, nodes)
    x = 0.5 * (a + b)
    return x if _log_prod(x, nodes) > _log_prod(x0, nodes) else x0


class _LejaSequence:
    """Incrementally extended Leja sequence; the grid log-product is kept between calls."""

    def __init__(self):
        self.grid = None
        self.logp = None
        self.nodes = [0.0]
        self.denoms = [1.0]

    def extend(self, n):
        if len(self.nodes) >= n:
            return
        target = max(n, len(self.nodes) + LEJA_CHUNK)
        with np.errstate(divide="ignore"):
            if self.grid is None:
                self.grid = np.linspace(-1.0, 1.0, LEJA_GRID)
                self.logp = np.log(np.abs(self.grid - self.nodes[0]))
            step = self.grid[1] - self.grid[0]
            while len(self.nodes) < target:
                best = np.max(self.logp)
                tied = np.flatnonzero(self.logp >= best - 1e-12 * max(1.0, abs(best)))
                x = _polish(self.grid[tied[-1]], step, np.asarray(self.nodes))
                self.denoms.append(float(np.prod(x - np.asarray(self.nodes))))
                self.nodes.append(x)
                self.logp += np.log(np.abs(self.grid - x))


_LEJA = _LejaSequence()


def leja_nodes(n: int) -> np.ndarray:
    """First ``n`` unweighted Leja points on [-1, 1], starting at 0.

    Each new point maximizes prod |y - y_i| over a uniform 10^6-interval grid,
    refined by golden-section search; ties go to the larger coordinate.
    """
    if n < 1:
        raise InputError("need at least one Leja node")
    _LEJA.extend(n)
    return np.array(_LEJA.nodes[:n])


def lagrange_table(x, levels: int):
    """Univariate hierarchical basis values L_0..L_{levels-1} at x, shape (levels, len(x)).

    L_j(x) = prod_{i<j}(x - z_i) / prod_{i<j}(z_j - z_i).
    """
    _LEJA.extend(levels)
    z, den = _LEJA.nodes, _LEJA.denoms
    x = np.asarray(x, dtype=float)
    prod = np.ones(x.shape)
    out = np.empty((levels,) + x.shape)
    out[0] = 1.0
    for j in range(1, levels):
        prod = prod * (x - z[j - 1])
        out[j] = prod / den[j]
    return out


# -- model -----------------------------------------------------------------------

@dataclass
class MultiIndexSet:
    indices: np.ndarray          # (m, d) int, parents precede children

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(len(self.indices), -1)

    def __len__(self):
        return self.indices.shape[0]

    def __contains__(self, alpha):
        return tuple(alpha) in self.as_set()

    def as_set(self):
        return {tuple(int(v) for v in a) for a in self.indices}

    def is_downward_closed(self) -> bool:
        s = self.as_set()
        for a in s:
            for k in range(len(a)):
                if a[k] > 0:
                    b = list(a)
                    b[k] -= 1
                    if tuple(b) not in s:
                        return False
        return True


@dataclass
class CvReport:
    errors: np.ndarray           # per-output sup-norm error
    n_cv: int
    output_names: list = field(default_factory=list)

    def as_rows(self):
        return [(name, float(e)) for name, e in zip(self.output_names, self.errors)]


@dataclass
class SurrogateModel:
    input_box: np.ndarray        # (d, 2)
    index_set: MultiIndexSet
    surpluses: np.ndarray        # (m, q)
    values: np.ndarray           # (m, q) model evaluations at the nodes
    output_names: list
    weights: np.ndarray
    n_evals: int

    def __post_init__(self):
        self.input_box = np.asarray(self.input_box, dtype=float)
        self.surpluses = np.asarray(self.surpluses, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self._prepare()

    @property
    def dims(self) -> int:
        return self.input_box.shape[0]

    @property
    def outputs(self) -> int:
        return self.surpluses.shape[1]

    def _prepare(self):
        idx = self.index_set.indices
        pos = {tuple(a): i for i, a in enumerate(idx.tolist())}
        parent = np.zeros(len(idx), dtype=np.int64)
        dim = np.zeros(len(idx), dtype=np.int64)
        level = np.zeros(len(idx), dtype=np.int64)
        for i, a in enumerate(idx.tolist()):
            nz = [k for k, v in enumerate(a) if v]
            if not nz:
                parent[i] = -1
                continue
            k = nz[-1]
            p = list(a)
            p[k] = 0
            parent[i] = pos[tuple(p)]
            if parent[i] >= i:
                raise InputError("index set must list parents before children")
            dim[i], level[i] = k, a[k]
        self._parent, self._dim, self._level = parent, dim, level
        self._levels = int(idx.max()) + 1 if idx.size else 1

    def to_unit(self, y):
        lo, hi = self.input_box[:, 0], self.input_box[:, 1]
        return (2.0 * np.asarray(y, dtype=float) - (lo + hi)) / (hi - lo)

    def from_unit(self, x):
        lo, hi = self.input_box[:, 0], self.input_box[:, 1]
        return 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.asarray(x, dtype=float)

    @property
    def nodes(self) -> np.ndarray:
        """Collocation nodes in input coordinates, (m, d)."""
        z = leja_nodes(self._levels)
        return self.from_unit(z[self.index_set.indices])

    def basis(self, x):
        """Hierarchical basis at unit-box points x (n, d) -> (n, m)."""
        tables = [lagrange_table(x[:, k], self._levels) for k in range(self.dims)]
        n, m = x.shape[0], len(self.index_set)
        out = np.empty((n, m))
        for i in range(m):
            p = self._parent[i]
            if p < 0:
                out[:, i] = 1.0
            else:
                out[:, i] = out[:, p] * tables[self._dim[i]][self._level[i]]
        return out

    def evaluate(self, y):
        """Interpolant at points y (n, d) or (d,); returns (n, q) or (q,)."""
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        y = np.atleast_2d(y)
        if y.shape[1] != self.dims:
            raise InputError(f"expected {self.dims} inputs, got {y.shape[1]}")
        x = self.to_unit(y)
        outside = np.abs(x) > 1.0 + 1e-12
        if outside.any():
            warnings.warn(f"{int(outside.any(axis=1).sum())} points outside the input box clamped",
                          RuntimeWarning, stacklevel=2)
            x = np.clip(x, -1.0, 1.0)
        out = np.empty((x.shape[0], self.outputs))
        for s in range(0, x.shape[0], EVAL_CHUNK):
            out[s:s + EVAL_CHUNK] = self.basis(x[s:s + EVAL_CHUNK]) @ self.surpluses
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "input_box": self.input_box.tolist(),
            "output_names": list(self.output_names),
            "weights": self.weights.tolist(),
            "n_evals": int(self.n_evals),
            "index_set": self.index_set.indices.tolist(),
            "nodes": self.nodes.tolist(),
            "surpluses": self.surpluses.tolist(),
            "values": self.values.tolist(),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict()) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "SurrogateModel":
        try:
            model = cls(
                input_box=data["input_box"],
                index_set=MultiIndexSet(np.asarray(data["index_set"], dtype=np.int64)),
                surpluses=data["surpluses"],
                values=data["values"],
                output_names=list(data["output_names"]),
                weights=data["weights"],
                n_evals=int(data["n_evals"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed surrogate document: {exc}") from None
        if model.dims != int(data.get("dims", model.dims)):
            raise InputError("surrogate dims do not match its input box")
        return model

    @classmethod
    def from_json(cls, path) -> "SurrogateModel":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"surrogate file is not valid JSON: {exc}") from None
        return cls.from_dict(data)


def evaluate(model: SurrogateModel, y):
    return model.evaluate(y)


# -- construction -----------------------------------------------------------------

def _call(f, y, q=None):
    out = np.asarray(f(y), dtype=float)
    if out.ndim == 1:
        out = out[:, None]
    if q is not None and out.shape[1] != q:
        raise InputError(f"model returned {out.shape[1]} outputs, expected {q}")
    if not np.all(np.isfinite(out)):
        raise InputError("model returned non-finite values inside the input box")
    return out


def build_adaptive(f, input_box, budget: int, weights=None, output_names=None) -> SurrogateModel:
    """Dimension-adaptive Leja interpolant of a vectorized model ``f``.

    ``f`` maps an (n, d) array of inputs to (n, q) outputs. ``budget`` counts
    every model evaluation (admitted nodes and evaluated candidates). The
    candidate with the largest max_k w_k |surplus_k| is admitted next; ties go
    to the smallest total degree, then the lexicographically smallest index. When the budget is spent,
    all evaluated candidates are admitted, since their surpluses are already
    final.
    """
    box = np.asarray(input_box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or not np.all(box[:, 1] > box[:, 0]):
        raise InputError("input_box must be (d, 2) with lower < upper")
    d = box.shape[0]
    budget = int(budget)
    if budget < 1:
        raise InputError("budget must be at least 1")

    def to_phys(x):
        return 0.5 * (box[:, 0] + box[:, 1]) + 0.5 * (box[:, 1] - box[:, 0]) * x

    root = np.zeros((1, d))
    f0 = _call(f, to_phys(root))
    q = f0.shape[1]
    w = np.ones(q) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (q,) or np.any(w < 0) or not np.any(w > 0):
        raise InputError("weights must be q non-negative reals with at least one positive")
    names = list(output_names) if output_names is not None else [f"q{k}" for k in range(q)]

    admitted = [tuple([0] * d)]
    adm_set = set(admitted)
    surplus = [f0[0]]
    values = [f0[0]]
    cand = {}                    # alpha -> (value, surplus)
    n_evals = 1
    max_level = 1

    def interpolant(alphas):
        levels = max(max_level, max(max(a) for a in alphas) + 1)
        z = leja_nodes(levels)
        x = z[np.asarray(alphas)]
        model = SurrogateModel(box, MultiIndexSet(np.asarray(admitted)), np.asarray(surplus),
                               np.asarray(values), names, w, n_evals)
        return model.basis(x) @ model.surpluses, to_phys(x)

    last = admitted[0]
    while True:
        new = []
        for k in range(d):
            b = list(last)
            b[k] += 1
            b = tuple(b)
            if b in adm_set or b in cand:
                continue
            if all(b[j] == 0 or tuple(b[:j] + (b[j] - 1,) + b[j + 1:]) in adm_set for j in range(d)):
                new.append(b)
        new = sorted(new)[: max(0, budget - n_evals)]
        if new:
            pred, y_new = interpolant(new)
            fv = _call(f, y_new, q)
            n_evals += len(new)
            for a, v, p in zip(new, fv, pred):
                cand[a] = (v, v - p)
        if not cand or n_evals >= budget:
            break
        best = max(cand, key=lambda a: (np.max(w * np.abs(cand[a][1])), -sum(a), tuple(-v for v in a)))
        v, s = cand.pop(best)
        admitted.append(best)
        adm_set.add(best)
        values.append(v)
        surplus.append(s)
        max_level = max(max_level, max(best) + 1)
        last = best
    for a in sorted(cand):
        admitted.append(a)
        v, s = cand[a]
        values.append(v)
        surplus.append(s)
    log.info("surrogate: %d nodes, %d evaluations", len(admitted), n_evals)
    order = _parent_first_order(admitted)
    return SurrogateModel(
        input_box=box,
        index_set=MultiIndexSet(np.asarray([admitted[i] for i in order])),
        surpluses=np.asarray([surplus[i] for i in order]),
        values=np.asarray([values[i] for i in order]),
        output_names=names,
        weights=w,
        n_evals=n_evals,
    )


def _parent_first_order(alphas):
    """Stable order by total degree, which puts every backward neighbour first."""
    return sorted(range(len(alphas)), key=lambda i: (sum(alphas[i]), i))


def cross_validate(model: SurrogateModel, f, n_cv: int = 1000, seed: SeedSpec = SeedSpec(),
                   sampler=None) -> CvReport:
    """Empirical sup-norm error of ``model`` against ``f`` on ``n_cv`` points.

    Points are uniform over the input box unless ``sampler(n, seed)`` is
    given, e.g. to draw from the sorted-cavity law.
    """
    if n_cv < 100:
        raise InputError("cross-validation needs at least 100 points")
    if sampler is None:
        u = seed.generator(0).random((n_cv, model.dims))
        y = model.input_box[:, 0] + u * (model.input_box[:, 1] - model.input_box[:, 0])
    else:
        y = np.asarray(sampler(n_cv, seed), dtype=float)
    ref = _call(f, y, model.outputs)
    err = np.max(np.abs(model.evaluate(y) - ref), axis=0)
    return CvReport(errors=err, n_cv=int(y.shape[0]), output_names=list(model.output_names))
