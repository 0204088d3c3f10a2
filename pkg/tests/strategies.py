"""Hypothesis strategies for random finite spaces and measures."""
import numpy as np
from hypothesis import strategies as st

from mmspace.core import from_points


@st.composite
def clouds(draw, min_points=2, max_points=12, dim=2, spread=3.0, norm="linf"):
    """Random weighted point cloud as a MeasuredSpace; total mass below 1."""
    n = draw(st.integers(min_points, max_points))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    P = rng.uniform(0, spread, (n, dim))
    w = rng.dirichlet(np.ones(n)) * rng.uniform(0.05, 0.9)
    return from_points(P, w, base=int(rng.integers(n)), norm=norm)


@st.composite
def measure_pairs(draw, max_points=20):
    """A host with two nearby measures: relative perturbation plus dropped atoms."""
    s = draw(clouds(min_points=2, max_points=max_points))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    nu = s.weight * np.exp(rng.normal(0, 0.3, s.n_points)) * (rng.random(s.n_points) < 0.85)
    return s, s.weight.copy(), nu


def random_pair(rng, n_max=30, spread=4.0):
    """Same construction with a plain Generator, for loops over many instances."""
    n = int(rng.integers(2, n_max + 1))
    P = rng.uniform(0, spread, (n, 2))
    s = from_points(P, None, base=int(rng.integers(n)))
    mu = rng.dirichlet(np.ones(n)) * rng.uniform(0.05, 0.6)
    nu = mu * np.exp(rng.normal(0, 0.3, n)) * (rng.random(n) < 0.85)
    return s, mu, nu
