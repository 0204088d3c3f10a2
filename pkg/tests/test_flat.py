"""Bounded-Lipschitz flat distances against a dense LP oracle."""
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmspace.core import PointedSpace, from_points
from mmspace.flat import FlatSolver, flat, flat_L, flat_Lr, restriction_defect
from oracles import bisect_flat, lp_flat_Lr
from strategies import clouds, measure_pairs


def two_points(d=1.0):
    return PointedSpace(np.array([[0.0, d], [d, 0.0]]), 0)


# ---------------------------------------------------------------- examples

def test_identical_measures():
    s = from_points(np.arange(5.0), None)
    mu = np.full(5, 0.2)
    assert flat_Lr(s, mu, mu, 3.0, 2.0).value == pytest.approx(0.0, abs=1e-12)
    assert flat(s, mu, mu) == 0.0
    assert flat_L(s, mu, mu, 2.0) == 0.0


def test_two_point_vertex_enumeration():
    # feasible polytope: box [-1,1]^2 cut by |g0 - g1| <= 1; objective g0 - g1
    verts = []
    for a, b in itertools.product([-1.0, 0.0, 1.0], repeat=2):
        if abs(a - b) <= 1:
            verts.append(a - b)
    sol = flat_Lr(two_points(), [1.0, 0.0], [0.0, 1.0], 1.0, 2.0)
    assert sol.value == pytest.approx(max(verts), abs=1e-9)
    assert sol.value == pytest.approx(1.0, abs=1e-9)


def test_restriction_example():
    s = from_points(np.array([[0, 0], [0.5, 0], [0, 0.5], [0.5, 0.5]]), None)
    mu = np.full(4, 0.25)
    nu = mu.copy()
    nu[3] = 0.0
    v = flat_Lr(s, mu, nu, 1.0, 1.0).value
    assert v <= 0.25 + 1e-9
    assert v == pytest.approx(lp_flat_Lr(s.dist, 0, mu, nu, 1.0, 1.0), abs=1e-9)


def test_mass_gap_one():
    s = PointedSpace(np.zeros((1, 1)))
    assert flat_L(s, [1.0], [2.0], 1.0) == 0.5


def test_small_mass_gap_threshold():
    s = PointedSpace(np.zeros((1, 1)))
    assert flat_L(s, [1.0], [1.001], 1.0) == pytest.approx(1e-3, abs=1e-6)
    assert flat(s, [1.0], [1.001]) == pytest.approx(1e-3, abs=1e-6)


def test_far_diracs():
    s = two_points(10.0)
    assert flat(s, [1.0, 0.0], [0.0, 1.0]) == 0.5
    assert bisect_flat(s.dist, 0, [1.0, 0.0], [0.0, 1.0]) == 0.5


def test_solution_invariants():
    rng = np.random.default_rng(1)
    s = from_points(rng.uniform(0, 3, (25, 2)))
    mu, nu = rng.random(25) * 0.05, rng.random(25) * 0.05
    sol = flat_Lr(s, mu, nu, 2.0, 1.5)
    g = sol.witness
    assert np.all(np.abs(g) <= 1 + 1e-9)
    out = s.dist[s.base] > 1.5 + 1e-9
    assert np.all(g[out] == 0)
    assert np.all(np.abs(g[:, None] - g[None, :]) <= 2.0 * s.dist + 1e-9)
    assert sol.value == pytest.approx(g @ (mu - nu), abs=1e-9)


def test_invalid_L():
    with pytest.raises(ValueError):
        flat_L(two_points(), [1, 0], [0, 1], 0.0)


# ---------------------------------------------------------------- oracle agreement

@given(measure_pairs(max_points=25), st.floats(0.2, 20), st.floats(0.1, 6))
def test_flat_Lr_matches_dense_lp(pair, L, r):
    s, mu, nu = pair
    v = flat_Lr(s, mu, nu, L, r).value
    assert v == pytest.approx(lp_flat_Lr(s.dist, s.base, mu, nu, L, r), abs=1e-8)


@settings(max_examples=15)
@given(measure_pairs(max_points=15))
def test_flat_matches_bisection(pair):
    s, mu, nu = pair
    assert flat(s, mu, nu, tol=1e-7) == pytest.approx(bisect_flat(s.dist, s.base, mu, nu), abs=2e-7)


@settings(max_examples=15)
@given(measure_pairs(max_points=15), st.floats(0.3, 10))
def test_flat_L_matches_bisection(pair, L):
    s, mu, nu = pair
    assert flat_L(s, mu, nu, L, tol=1e-7) == pytest.approx(bisect_flat(s.dist, s.base, mu, nu, L=L), abs=2e-7)


# ---------------------------------------------------------------- properties

@given(measure_pairs(), st.floats(0.2, 10), st.floats(1.0, 5.0), st.floats(0.1, 6))
def test_scaling_inequality(pair, L, factor, r):
    s, mu, nu = pair
    fs = FlatSolver(s, mu, nu)
    a, b = fs.value(L, r), fs.value(factor * L, r)
    assert a <= b + 1e-9
    assert b <= factor * a + 1e-9


@given(measure_pairs(), st.floats(0.2, 10), st.floats(0.1, 3), st.floats(0, 3))
def test_monotone_in_radius(pair, L, r, dr):
    s, mu, nu = pair
    fs = FlatSolver(s, mu, nu)
    assert fs.value(L, r) <= fs.value(L, r + dr) + 1e-9


@given(clouds(max_points=20), st.data(), st.floats(0.2, 10), st.floats(0.1, 6))
def test_restriction_bound(s, data, L, r):
    keep = sorted(data.draw(st.sets(st.integers(0, s.n_points - 1))) | {s.base})
    nu = np.zeros(s.n_points)
    nu[keep] = s.weight[keep]
    v = flat_Lr(s, s.weight, nu, L, r).value
    assert v <= restriction_defect(s, s.weight, keep, r) + 1e-9


@given(measure_pairs())
def test_symmetry(pair):
    s, mu, nu = pair
    assert flat(s, mu, nu) == pytest.approx(flat(s, nu, mu), abs=1e-6)


@given(clouds(max_points=15), st.data())
def test_triangle(s, data):
    seed = data.draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    m = [s.weight * np.exp(rng.normal(0, 0.4, s.n_points)) for _ in range(3)]
    a, b, c = m
    assert flat(s, a, c) <= flat(s, a, b) + flat(s, b, c) + 2e-6


@given(measure_pairs())
def test_indiscernibles(pair):
    s, mu, nu = pair
    v = flat(s, mu, nu)
    if np.array_equal(mu, nu):
        assert v == 0
    else:
        assert v > 0
