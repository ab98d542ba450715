import time
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavity_uq.errors import InputError
from cavity_uq.sampling import SeedSpec
from cavity_uq.surrogate import (
    MultiIndexSet, SurrogateModel, build_adaptive, cross_validate, evaluate, leja_nodes,
)

GRID = np.linspace(-1, 1, 2_000_001)


def brute_force_leja(n):
    nodes = [0.0]
    for _ in range(n - 1):
        crit = np.prod(np.abs(GRID[:, None] - np.array(nodes)[None, :]), axis=1)
        best = np.flatnonzero(crit >= crit.max() * (1 - 1e-12))
        nodes.append(GRID[best[-1]])
    return np.array(nodes)


def test_leja_first_nodes():
    z = leja_nodes(4)
    assert np.allclose(z[:3], [0, 1, -1], atol=1e-12)
    assert abs(z[3]) == pytest.approx(1 / np.sqrt(3), abs=1e-6)


def test_leja_against_brute_force():
    assert np.allclose(leja_nodes(7), brute_force_leja(7), atol=2e-6)


def test_leja_nested():
    assert np.array_equal(leja_nodes(8)[:5], leja_nodes(5))
    assert np.array_equal(leja_nodes(40)[:8], leja_nodes(8))


def test_leja_maximizes_product():
    z = leja_nodes(12)
    for k in range(1, 12):
        crit = np.prod(np.abs(GRID[::10, None] - z[None, :k]), axis=1).max()
        assert np.prod(np.abs(z[k] - z[:k])) >= crit * (1 - 1e-6)


def test_linear_reproduction():
    m = build_adaptive(lambda y: 3 + 2 * y[:, 0], [[-1, 1], [-1, 1]], 10)
    y = np.random.default_rng(0).uniform(-1, 1, (200, 2))
    assert np.allclose(m.evaluate(y)[:, 0], 3 + 2 * y[:, 0], atol=1e-12)
    deg = m.index_set.indices.sum(axis=1)
    assert np.abs(m.surpluses[deg > 1]).max(initial=0.0) <= 1e-12


def cubic_product(y):
    return np.prod(y ** 3 - 0.5 * y ** 2 + 0.3 * y + 1.2, axis=1)


def test_cubic_product_exact_once_box_covered():
    box = [[-1, 1]] * 3
    m = build_adaptive(cubic_product, box, 80)
    covered = {tuple(a) for a in m.index_set.indices}
    assert all((i, j, k) in covered for i in range(4) for j in range(4) for k in range(4))
    cv = cross_validate(m, cubic_product, 1000, SeedSpec(1))
    assert cv.errors[0] <= 1e-10


def test_cubic_product_budget_64():
    # at budget 64 some evaluations go to degree-4 candidates, so the
    # (3,3,3) box is not yet complete; the error is still far below the scale
    m = build_adaptive(cubic_product, [[-1, 1]] * 3, 64)
    cv = cross_validate(m, cubic_product, 1000, SeedSpec(1))
    assert cv.errors[0] < 0.5


def test_interpolation_at_nodes():
    f = lambda y: np.column_stack([np.exp(y[:, 0]) * np.cos(y[:, 1]), y[:, 0] ** 2 + y[:, 2]])  # noqa: E731
    box = [[-0.3, 0.3], [0.0, 2.0], [-1, 1]]
    m = build_adaptive(f, box, 60)
    y = m.nodes
    assert np.allclose(m.evaluate(y), m.values, rtol=1e-10, atol=1e-12)
    assert np.allclose(f(y), m.values, rtol=1e-14)


def test_constant_model():
    m = build_adaptive(lambda y: np.full(len(y), 4.5), [[0, 1]] * 3, 10)
    y = np.random.default_rng(2).random((100, 3))
    assert np.allclose(m.evaluate(y), 4.5, rtol=0, atol=1e-14)


def test_budget_one_gives_constant():
    m = build_adaptive(lambda y: y.sum(axis=1), [[0, 1]] * 2, 1)
    assert m.n_evals == 1 and len(m.index_set) == 1


def test_downward_closed_and_eval_count():
    calls = []

    def f(y):
        calls.append(len(y))
        return np.exp(y[:, 0] + 0.3 * y[:, 1]) + y[:, 2] ** 2

    m = build_adaptive(f, [[-1, 1]] * 3, 47)
    assert m.index_set.is_downward_closed()
    assert sum(calls) == m.n_evals == len(m.index_set) <= 47
    assert len({tuple(a) for a in m.index_set.indices}) == len(m.index_set)


def test_nested_in_budget():
    f = lambda y: np.exp(y[:, 0] + 0.5 * y[:, 1]) * (1 + 0.1 * y[:, 2])  # noqa: E731
    small = build_adaptive(f, [[-1, 1]] * 3, 30)
    big = build_adaptive(f, [[-1, 1]] * 3, 60)
    assert {tuple(a) for a in small.index_set.indices} <= {tuple(a) for a in big.index_set.indices}


def test_spectral_convergence():
    f = lambda y: np.exp(y[:, 0] + y[:, 1])  # noqa: E731
    box = [[-1, 1]] * 2
    e20 = cross_validate(build_adaptive(f, box, 20), f, 1000, SeedSpec(3)).errors[0]
    e80 = cross_validate(build_adaptive(f, box, 80), f, 1000, SeedSpec(3)).errors[0]
    assert e80 * 10 <= e20


def test_cv_non_increasing_when_budget_doubles():
    f = lambda y: np.sin(2 * y[:, 0]) * np.exp(0.5 * y[:, 1]) + np.cos(y[:, 2])  # noqa: E731
    box = [[-1, 1]] * 3
    errs = []
    for budget in (25, 50, 100, 200):
        m = build_adaptive(f, box, budget)
        errs.append(np.mean([cross_validate(m, f, 1000, SeedSpec(s)).errors[0] for s in range(5)]))
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_weight_zero_passenger():
    f = lambda y: np.column_stack([np.exp(3 * y[:, 0]), np.exp(y[:, 1])])  # noqa: E731
    m = build_adaptive(f, [[-1, 1]] * 2, 15, weights=[1.0, 0.0])
    # the weighted output never varies along dimension 2, so it is not refined there
    assert m.index_set.indices[:, 1].max() <= 1
    y = m.nodes
    assert np.allclose(m.evaluate(y)[:, 1], np.exp(y[:, 1]), rtol=1e-12)
    assert np.allclose(m.evaluate(np.array([[0.0, 1.0]]))[0, 1], np.e, rtol=1e-12)


def test_exact_model_zero_cv():
    f = lambda y: 1 + y[:, 0] * y[:, 1]  # noqa: E731
    m = build_adaptive(f, [[-1, 1]] * 2, 12)
    assert cross_validate(m, f, 500, SeedSpec(4)).errors[0] <= 1e-12


def test_clamp_with_warning():
    m = build_adaptive(lambda y: y[:, 0], [[0, 1]], 3)
    with pytest.warns(RuntimeWarning):
        v = m.evaluate(np.array([[2.0]]))
    assert v[0, 0] == pytest.approx(1.0)


def test_json_round_trip(tmp_path):
    f = lambda y: np.column_stack([np.cos(y[:, 0]) + y[:, 1], y[:, 0] * y[:, 1]])  # noqa: E731
    m = build_adaptive(f, [[-0.3, 0.3], [-2, 2]], 25, weights=[1, 0.5], output_names=["a", "b"])
    path = tmp_path / "s.json"
    m.to_json(path)
    m2 = SurrogateModel.from_json(path)
    y = np.random.default_rng(5).uniform([-0.3, -2], [0.3, 2], (100, 2))
    assert np.array_equal(m.evaluate(y), evaluate(m2, y))
    assert m2.output_names == ["a", "b"] and m2.n_evals == m.n_evals


def test_bad_inputs():
    with pytest.raises(InputError):
        build_adaptive(lambda y: y[:, 0], [[1, 0]], 5)
    with pytest.raises(InputError):
        build_adaptive(lambda y: y[:, 0], [[0, 1]], 5, weights=[0.0])
    m = build_adaptive(lambda y: y[:, 0], [[0, 1]], 3)
    with pytest.raises(InputError):
        cross_validate(m, lambda y: y[:, 0], 50)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_polynomial_exactness(monomials):
    # any polynomial supported in the final index set is reproduced
    coef = np.linspace(0.5, 1.5, len(monomials))

    def f(y):
        return sum(c * y[:, 0] ** i * y[:, 1] ** j for c, (i, j) in zip(coef, monomials))

    m = build_adaptive(f, [[-1, 1]] * 2, 40)
    support = {tuple(a) for a in m.index_set.indices}
    if all(mono in support for mono in monomials):
        y = np.random.default_rng(0).uniform(-1, 1, (200, 2))
        ref = f(y)
        assert np.allclose(m.evaluate(y)[:, 0], ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_cell_surrogate_accuracy(cell_surrogate):
    from cavity_uq.chain import direct_cell_outputs
    from cavity_uq.eigenmodel import ModelConfig
    cfg = ModelConfig()
    cv = cross_validate(cell_surrogate, lambda x: direct_cell_outputs(x, cfg), 1000, SeedSpec(6))
    assert cell_surrogate.n_evals <= 50
    assert cv.errors[0] <= 5e3


def test_cavity_surrogate_speed(cavity_surrogate):
    y = np.random.default_rng(7).uniform(-0.3, 0.3, (10 ** 5, 19))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        start = time.perf_counter()
        cavity_surrogate.evaluate(y)
        elapsed = time.perf_counter() - start
    assert elapsed * 10 < 60
