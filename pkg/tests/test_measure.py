"""Content estimates, density and doubling scans, model fits and the GTA verifier."""
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmspace.core import DomainError, MeasuredSpace, from_points
from mmspace.measure import (aggregated_content, bilip_model_fit, content, density_profile, doubling_scan,
                             verify_gta)
from mmspace.tangent import blowup, generate
from oracles import brute_content
from strategies import clouds


def segment(k=1001):
    x = np.linspace(0, 1, k)
    return from_points(x[:, None], np.full(k, 1.0 / (k - 1)), base=k // 2)


def plane(side=1.0, h=1 / 32, base_at=(0.5, 0.5)):
    t = np.arange(round(side / h) + 1) * h
    P = np.array(list(itertools.product(t, t)))
    base = int(np.argmin(np.abs(P - np.asarray(base_at)).max(axis=1)))
    return from_points(P, np.full(len(P), h * h), base=base)


# ---------------------------------------------------------------- content

def test_singleton_content():
    s = from_points([[0.0, 0.0], [1.0, 1.0]])
    assert content(s, [1], 1.0).value == 0.0


def test_two_point_exact_is_zero():
    s = from_points([[0.0], [1.0]])
    est = content(s, [0, 1], 1.0, mode="exact_small")
    assert est.value == 0.0 and len(est.cover) == 2


def test_empty_target():
    assert content(from_points([[0.0]]), [], 1.0).value == 0.0


def test_aggregated_segment_length():
    x = np.linspace(0, 1, 1001)
    est = aggregated_content(x[:, None], 1.0, 0.01)
    assert len(est.cover) == 101
    assert est.value == pytest.approx(1.0, abs=0.02)


def test_aggregated_linf_ball_area():
    t = np.linspace(-1, 1, 401)
    P = np.array(list(itertools.product(t, t)))
    est = aggregated_content(P, 2.0, 0.01)
    # the lattice content of [-1,1]^2 in sup norm is (2r)^2 = 4
    assert est.value == pytest.approx(4.0, rel=0.05)


@settings(max_examples=30)
@given(clouds(min_points=1, max_points=7), st.floats(0.5, 2.0), st.floats(0.3, 6.0))
def test_exact_matches_partition_enumeration(s, dim, delta):
    target = range(s.n_points)
    est = content(s, target, dim, delta, mode="exact_small")
    assert est.value == pytest.approx(brute_content(s.dist, list(target), dim, delta), rel=1e-12, abs=1e-12)


@given(clouds(min_points=1, max_points=9), st.floats(0.5, 2.0), st.floats(0.3, 6.0))
def test_greedy_is_a_valid_cover_above_exact(s, dim, delta):
    target = list(range(s.n_points))
    g = content(s, target, dim, delta)
    e = content(s, target, dim, delta, mode="exact_small")
    assert sorted(i for piece, _ in g.cover for i in piece) == target
    assert all(d <= delta + 1e-9 for _, d in g.cover)
    assert g.value >= e.value - 1e-12


@given(clouds(min_points=1, max_points=9), st.floats(0.5, 2.0), st.floats(0.2, 3.0), st.floats(0, 3.0))
def test_content_monotone_in_delta(s, dim, delta, extra):
    target = range(s.n_points)
    a = content(s, target, dim, delta, mode="exact_small").value
    b = content(s, target, dim, delta + extra, mode="exact_small").value
    assert b <= a + 1e-12


@given(clouds(min_points=1, max_points=9), st.data(), st.floats(0.5, 2.0))
def test_content_monotone_in_set(s, data, dim):
    B = sorted(data.draw(st.sets(st.integers(0, s.n_points - 1), min_size=1)))
    A = sorted(data.draw(st.sets(st.sampled_from(B), min_size=1)))
    a = content(s, A, dim, mode="exact_small").value
    b = content(s, B, dim, mode="exact_small").value
    assert a <= b + 1e-12
    diam = s.dist[np.ix_(B, B)].max()
    assert b <= diam ** dim + 1e-12


def test_content_rejects_bad_args():
    s = from_points([[0.0]])
    with pytest.raises(DomainError):
        content(s, [0], -1.0)
    with pytest.raises(DomainError):
        content(s, [0], 1.0, 0.0)


# ---------------------------------------------------------------- densities

def test_segment_midpoint_density():
    s = segment()
    prof = density_profile(s, 500, [0.2, 0.1, 0.05], 1)
    # k atoms of weight 1/(k-1) in a closed ball of radius r: (2r/h + 1) h = 2r + h
    np.testing.assert_allclose(prof.ratio_2r, 1 + 1e-3 / (2 * prof.scales), rtol=1e-9)


def test_segment_endpoint_density():
    s = segment()
    prof = density_profile(s, 0, [0.2, 0.1, 0.05], 1)
    np.testing.assert_allclose(prof.ratio_2r, 0.5 + 1e-3 / (2 * prof.scales), rtol=1e-9)


@given(clouds(max_points=15), st.floats(0.5, 3))
def test_density_conventions(s, dim):
    prof = density_profile(s, 0, [2.0, 1.0, 0.5, 0.25], dim)
    np.testing.assert_allclose(prof.ratio_2r * 2 ** dim, prof.ratio_r, rtol=1e-14)


def test_cantor_density_oscillates():
    fx = generate("four_corner_cantor", {"generation": 4})
    prof = density_profile(fx.space, 0, 4.0 ** -np.arange(0.5, 3.5, 0.5), 1)
    assert prof.lower < prof.upper


def test_zero_radius_rejected():
    with pytest.raises(DomainError):
        density_profile(segment(11), 0, [0.0], 1)


# ---------------------------------------------------------------- doubling

def test_segment_doubling_near_two():
    s = segment()
    h = 1e-3
    scales = h * np.array([8, 16, 32, 64])
    rep = doubling_scan(s, scales, points=[500])
    # exact lattice count: (4m + 1) / (2m + 1) at r = m h
    m = scales[-1] / h
    assert rep["M"] == pytest.approx((4 * m + 1) / (2 * m + 1), rel=1e-12)
    assert rep["M"] < 2


def test_dirac_doubling():
    s = MeasuredSpace(np.zeros((1, 1)), 0, None, None, [1.0])
    assert doubling_scan(s, [0.1, 1, 10])["M"] == 1.0


def test_plane_doubling_near_four():
    s = plane(h=1 / 64)
    h = 1 / 64
    scales = h * np.array([4, 8])
    rep = doubling_scan(s, scales, points=[s.base])
    m = 8
    assert rep["M"] == pytest.approx(((4 * m + 1) / (2 * m + 1)) ** 2, rel=1e-12)


def test_zero_mass_ball_flagged():
    s = from_points([[0.0], [1.0]], [0.0, 1.0])
    rep = doubling_scan(s, [0.5])
    assert rep["zero_mass"] == [(0, 0.5)] and math.isinf(rep["M"])


# ---------------------------------------------------------------- model fit

def test_fit_exact_grid():
    t = np.arange(-16, 17) / 16
    P = np.array(list(itertools.product(t, t)))
    s = from_points(P, None, base=int(np.argmin(np.abs(P).max(axis=1))))
    fit = bilip_model_fit(s.space, 1.0, 2, 1 / 16)
    assert fit["lower"] == 0 and fit["upper"] <= 1 / 16
    assert fit["chart_delta"] == 0 and fit["K_ok"]


def test_fit_sheared_grid():
    t = np.arange(-40, 41) / 16
    A = np.array([[1.0, 0.7], [0.0, 1.0]])
    # sup-norm operator norms of A and its inverse are both 1.7 <= K = 2
    assert np.abs(A).sum(axis=1).max() <= 2 and np.abs(np.linalg.inv(A)).sum(axis=1).max() <= 2
    Q = np.array(list(itertools.product(t, t))) @ A.T
    Q = Q[np.abs(Q).max(axis=1) <= 1 + 1e-12]
    s = from_points(Q, None, base=int(np.argmin(np.abs(Q).max(axis=1))))
    fit = bilip_model_fit(s.space, 2.0, 2, 1 / 16)
    assert fit["chart_delta"] <= 1 / 16
    assert fit["upper"] < 0.1


def test_fit_cantor_far_from_flat():
    fx = generate("four_corner_cantor", {"generation": 4})
    b = blowup(fx.space, 5, [1 / 16], W=1).blowups[0]
    fit = bilip_model_fit(b.space, 1.0, 1, 1 / 32)
    assert fit["lower"] > 0.2


# ---------------------------------------------------------------- GTA

def gta_plane(eta, G=None, **kw):
    s = plane(h=1 / 32)
    C = np.arange(s.n_points)
    G = C if G is None else G
    inner = np.flatnonzero(np.all(np.abs(s.coords - 0.5) <= 0.25 + 1e-12, axis=1))
    args = dict(K=1.0, delta=0.25, R0=0.25, scales=[0.25], n=2, grid_resolution=1 / 16,
                points=inner[::7], approx_points=inner[::40])
    args.update(kw)
    return verify_gta(s, C, G, eta, **args), s, inner


def test_gta_plane_passes():
    rep, s, inner = gta_plane(3.9)
    assert rep.density_pass and rep.approx_pass and rep.passed


def test_gta_sharp_threshold():
    rep, _, _ = gta_plane(1.0)
    ratios = [r["ratio"] for r in rep.density]
    lo = min(ratios)
    # the lattice ratio at interior points is ((2r/h + 1) h / r)^2 >= 4
    assert lo >= 4
    assert gta_plane(lo)[0].density_pass
    bad, _, _ = gta_plane(lo * 1.0001)
    assert not bad.density_pass
    assert bad.first_failure()["ratio"] == pytest.approx(lo)


def test_gta_empty_G():
    rep, _, _ = gta_plane(1.0, G=np.array([], dtype=int))
    assert rep.approx == [] and rep.approx_pass
    assert any("empty" in n for n in rep.notes)


def test_gta_nesting():
    s = plane(h=1 / 4)
    with pytest.raises(DomainError):
        verify_gta(s, [0, 1], [2], 1.0, 1.0, 0.1, 1.0, [0.5], 2)
