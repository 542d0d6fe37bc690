import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfsampler.core_model import (
    ForwardMap,
    GaussianSpec,
    ProblemSpec,
    bayes_potential,
    builtin_potentials,
    get_potential,
    get_problem,
    linear_gaussian_problem,
    resolve_problem,
)
from mfsampler.errors import InvalidArgument, InvalidSpec


def test_bayes_potential_hand_values():
    p = linear_gaussian_problem(1.0, 0.0, 1.0, 1.0, 1.0)
    assert bayes_potential(p, np.array([0.0])) == pytest.approx(0.5, abs=1e-15)
    assert bayes_potential(p, np.array([1.0])) == pytest.approx(0.5, abs=1e-15)
    p2 = linear_gaussian_problem(np.eye(2), np.zeros(2), np.eye(2), 2 * np.eye(2), np.zeros(2))
    assert bayes_potential(p2, np.array([2.0, 0.0])) == pytest.approx(3.0, abs=1e-14)


def test_bayes_potential_dimension_mismatch():
    p = get_problem("linear_gaussian_1d")
    with pytest.raises(InvalidArgument):
        bayes_potential(p, np.zeros(3))


def test_non_pd_covariance_rejected():
    with pytest.raises(InvalidSpec):
        GaussianSpec(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(InvalidSpec):
        GaussianSpec(np.zeros(2), np.array([[1.0, 0.1], [0.0, 1.0]]))


def test_bayes_potential_matches_dense_path():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 2))
    M = rng.standard_normal((2, 2))
    G0 = M @ M.T + np.eye(2)
    N = rng.standard_normal((3, 3))
    G = N @ N.T + np.eye(3)
    x0, y = rng.standard_normal(2), rng.standard_normal(3)
    p = linear_gaussian_problem(A, x0, G0, G, y)
    for _ in range(20):
        x = rng.standard_normal(2)
        r, d = y - A @ x, x - x0
        dense = 0.5 * r @ np.linalg.inv(G) @ r + 0.5 * d @ np.linalg.inv(G0) @ d
        assert bayes_potential(p, x) == pytest.approx(dense, rel=1e-10)
        assert p.induced_potential()(x) == pytest.approx(dense, rel=1e-10)


def test_catalog_values():
    assert get_potential("quadratic_1d")(np.array([2.0])) == 2.0
    assert get_potential("quadratic_1d").grad(np.array([2.0]))[0] == 2.0
    assert get_potential("doublewell_1d")(np.array([1.0])) == 0.0
    assert get_potential("doublewell_1d").grad(np.array([1.0]))[0] == 0.0
    assert get_potential("doublewell_2d")(np.array([1.0, 1.0])) == 0.0
    assert set(builtin_potentials()) >= {"quadratic_1d", "doublewell_1d", "quadratic_2d",
                                         "doublewell_2d"}


def _central_difference(pot, x, k):
    step = 1e-5 * (1.0 + np.abs(x[k]))
    e = np.zeros_like(x)
    e[k] = step
    return (pot(x + e) - pot(x - e)) / (2 * step)


@pytest.mark.parametrize("name", sorted(builtin_potentials()))
@settings(max_examples=50, deadline=None)
@given(data=st.data())
def test_gradient_matches_finite_differences(name, data):
    pot = get_potential(name)
    x = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=pot.dim, max_size=pot.dim)))
    g = pot.grad(x)
    for k in range(pot.dim):
        fd = _central_difference(pot, x, k)
        assert abs(g[k] - fd) <= 1e-5 * max(1.0, abs(g[k]))


def test_potential_vectorized_last_axis():
    pot = get_potential("doublewell_2d")
    pts = np.random.default_rng(0).standard_normal((5, 2))
    assert np.allclose(pot(pts), [pot(p) for p in pts])
    assert pot.grad(pts).shape == (5, 2)


def test_linear_forward_map_consistency():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 2))
    G = ForwardMap.linear(A)
    assert G.is_linear
    for _ in range(10):
        x = rng.standard_normal(2)
        assert np.allclose(G(x), A @ x, rtol=1e-12, atol=0)


def test_resolve_problem_forms():
    named = resolve_problem("linear_gaussian_1d")
    inline = resolve_problem({"A": 1.0, "prior_mean": 0.0, "prior_cov": 1.0, "noise_cov": 1.0,
                              "y": 1.0})
    assert isinstance(inline, ProblemSpec)
    assert inline.dim == named.dim == 1
    assert resolve_problem(named) is named
    with pytest.raises(InvalidSpec):
        resolve_problem({"A": 1.0})
