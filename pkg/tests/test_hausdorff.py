"""Local Hausdorff pseudometric against a literal containment scan."""
import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmspace.core import DomainError, from_points
from mmspace.hausdorff import contained, local_hausdorff, local_hausdorff_detail, neighborhood
from oracles import hz_scan
from strategies import clouds


def line(xs, base=0):
    return from_points(np.asarray(xs, dtype=float)[:, None], None, base=base).space


def subsets(s, data, k=3):
    out = []
    for _ in range(k):
        A = data.draw(st.sets(st.integers(0, s.n_points - 1), min_size=1))
        out.append(sorted(A))
    return out


def test_neighborhood_examples():
    s = line([0, 0, 1, 2])
    assert neighborhood(s, [0], 0).tolist() == [0, 1]
    assert neighborhood(s, [0, 1, 2, 3], 0.1).tolist() == [0, 1, 2, 3]
    assert neighborhood(line([0, 1, 2]), [0], 1).tolist() == [0, 1]
    with pytest.raises(DomainError):
        neighborhood(s, [], 1.0)


def test_equal_sets():
    s = line([0, 1, 2, 3])
    assert local_hausdorff(s, [0, 2], [2, 0]) == 0.0


def test_far_point_leaves_window():
    s = line([0, 3])
    assert local_hausdorff(s, [0], [0, 1]) == pytest.approx(1 / 3, abs=1e-15)
    assert hz_scan(s.dist, 0, [0], [0, 1]) == pytest.approx(1 / 3, abs=1e-15)


def test_near_point_caps_at_half():
    s = line([0, 1])
    assert local_hausdorff(s, [0], [0, 1]) == 0.5
    assert hz_scan(s.dist, 0, [0], [0, 1]) == 0.5


def test_empty_side():
    with pytest.raises(DomainError):
        local_hausdorff(line([0, 1]), [], [0])


@given(clouds(max_points=14, spread=6.0), st.data())
def test_matches_scan(s, data):
    A, B = subsets(s, data, 2)
    assert local_hausdorff(s, A, B) == pytest.approx(hz_scan(s.dist, s.base, A, B), abs=1e-12)


@given(clouds(max_points=14, spread=6.0), st.data())
def test_value_is_feasible(s, data):
    A, B = subsets(s, data, 2)
    det = local_hausdorff_detail(s, A, B)
    if 0 < det.value < 0.5:
        e = det.value * (1 + 1e-9)
        assert contained(s, A, B, e) and contained(s, B, A, e)


@given(clouds(max_points=14, spread=6.0), st.data())
def test_triangle(s, data):
    A, B, C = subsets(s, data, 3)
    h = lambda P, Q: local_hausdorff(s, P, Q)
    assert h(A, C) <= h(A, B) + h(B, C) + 1e-12
    assert h(A, A) == 0.0
    assert h(A, B) == h(B, A)


@given(clouds(max_points=14, spread=6.0), st.data())
def test_positive_on_distinct(s, data):
    A, B = subsets(s, data, 2)
    v = local_hausdorff(s, A, B)
    assert (v > 0) == (set(A) != set(B))


@given(clouds(max_points=14, spread=6.0), st.data())
def test_common_enlargement(s, data):
    A, B, S = subsets(s, data, 3)
    assert local_hausdorff(s, sorted(set(A) | set(S)), sorted(set(B) | set(S))) <= local_hausdorff(s, A, B)
