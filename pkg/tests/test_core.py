"""Pointed spaces: balls, restriction, rescaling, validation, loaders."""
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmspace.core import (DegenerateScale, DomainError, MeasuredSpace, PointedSpace, ball, ball_mass,
                          from_points, load_space, rescale, restrict, save_space, space_from_dict,
                          validate)
from oracles import triangle_gap
from strategies import clouds


def line(xs, weights=None, base=0):
    return from_points(np.asarray(xs, dtype=float)[:, None], weights, base=base)


# ---------------------------------------------------------------- ball

def test_ball_radius_zero_keeps_duplicates():
    s = line([0.0, 0.0, 1.0])
    assert ball(s, 0.0, center=0).tolist() == [0, 1]


def test_ball_segment_example():
    s = line([0.0, 0.5, 1.0])
    assert ball(s, 0.5, center=0).tolist() == [0, 1]


def test_ball_full_radius():
    s = line([0.0, 0.3, 2.0, 5.0])
    assert ball(s, s.dist.max(), center=2).tolist() == [0, 1, 2, 3]


def test_ball_invalid_index():
    with pytest.raises(DomainError):
        ball(line([0.0, 1.0]), 1.0, center=7)


@given(clouds(), st.floats(0, 3), st.floats(0, 3))
def test_ball_monotone(s, r1, r2):
    lo, hi = sorted([r1, r2])
    assert set(ball(s, lo).tolist()) <= set(ball(s, hi).tolist())


# ---------------------------------------------------------------- restrict

def test_restrict_identity():
    s = line([0, 1, 2], [0.2, 0.3, 0.5])
    assert np.array_equal(restrict(s, [0, 1, 2]).weight, s.weight)


def test_restrict_base_only():
    s = line([0, 1, 2], [0.2, 0.3, 0.5], base=1)
    assert restrict(s, [1]).weight.tolist() == [0.0, 0.3, 0.0]


def test_restrict_mass_additivity():
    s = line([0, 1, 2, 3], [0.25] * 4)
    assert restrict(s, [0, 1, 3]).mass() == pytest.approx(0.75, abs=1e-15)


def test_restrict_requires_base():
    with pytest.raises(DomainError):
        restrict(line([0, 1], base=0), [1])


@given(clouds(), st.data())
def test_restrict_mass_is_sum_of_kept(s, data):
    keep = data.draw(st.sets(st.integers(0, s.n_points - 1)))
    keep = sorted(keep | {s.base})
    r = restrict(s, keep)
    assert r.mass() == pytest.approx(s.weight[keep].sum(), abs=1e-15)
    assert np.array_equal(r.dist, s.dist)


# ---------------------------------------------------------------- rescale

def test_rescale_identity():
    s = line([0.0, 0.5, 3.0], [1.0, 0.0, 2.0])
    t = rescale(s, 1.0)
    assert np.array_equal(t.dist, s.dist) and np.array_equal(t.weight, s.weight)


def test_rescale_hand_example():
    t = rescale(line([0, 1, 2], [1, 1, 1]), 2.0)
    assert t.dist[0].tolist() == [0.0, 0.5, 1.0]
    assert np.allclose(t.weight, 1 / 3)


def test_rescale_zero_mass_ball():
    with pytest.raises(DegenerateScale):
        rescale(line([0, 1], [0.0, 1.0]), 0.5)


@given(clouds(max_points=15), st.floats(0.3, 4), st.floats(0.3, 4))
def test_rescale_composition(s, u, v):
    if ball_mass(s, u * v) <= 0 or ball_mass(s, u) <= 0:
        return
    a = rescale(rescale(s, u), v)
    b = rescale(s, u * v)
    np.testing.assert_allclose(a.dist, b.dist, rtol=1e-14, atol=0)
    np.testing.assert_allclose(a.weight, b.weight, rtol=1e-14, atol=0)


@given(clouds(max_points=15), st.floats(0.1, 4))
def test_rescale_unit_ball_mass(s, r):
    if ball_mass(s, r) <= 0:
        return
    assert ball_mass(rescale(s, r), 1.0) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- validate

@given(clouds(dim=3, norm="l2"))
def test_validate_euclidean_clean(s):
    assert validate(s) == []
    assert triangle_gap(s.dist) <= 1e-12


def test_validate_symmetry():
    d = np.array([[0, 1.0], [1.5, 0]])
    out = validate(PointedSpace(d))
    assert any("symmetry" in v for v in out)


def test_validate_triangle():
    d = np.array([[0, 1, 3], [1, 0, 1], [3, 1, 0]], dtype=float)
    out = validate(PointedSpace(d))
    assert any("triangle" in v for v in out)


def test_invalid_construction():
    with pytest.raises(DomainError):
        PointedSpace(np.zeros((2, 3)))
    with pytest.raises(DomainError):
        PointedSpace(np.zeros((2, 2)), base=2)
    with pytest.raises(DomainError):
        MeasuredSpace(np.zeros((2, 2)), 0, None, None, [1.0, -1.0])


# ---------------------------------------------------------------- io

def test_round_trip_points(tmp_path):
    s = from_points([[0, 0], [1, 2], [3, 1]], [0.1, 0.2, 0.3], base=1, norm="l2")
    save_space(s, tmp_path / "s.json")
    t = load_space(tmp_path / "s.json")
    assert t.base == 1 and t.norm == "l2"
    np.testing.assert_array_equal(t.dist, s.dist)
    np.testing.assert_array_equal(t.weight, s.weight)


def test_round_trip_matrix(tmp_path):
    obj = {"n": 3, "base": 2, "dist": [[0, 1, 2], [1, 0, 1], [2, 1, 0]]}
    (tmp_path / "d.json").write_text(json.dumps(obj))
    t = load_space(tmp_path / "d.json")
    assert t.base == 2 and t.weight.tolist() == [1.0, 1.0, 1.0]


def test_loader_rejects_bad_metric(tmp_path):
    obj = {"dist": [[0, 1, 3], [1, 0, 1], [3, 1, 0]]}
    (tmp_path / "d.json").write_text(json.dumps(obj))
    with pytest.raises(DomainError):
        load_space(tmp_path / "d.json")


def test_loader_dimension_mismatch():
    with pytest.raises(DomainError):
        space_from_dict({"dim": 3, "points": [[0, 0], [1, 1]]})
