"""Hausdorff content estimates, density and doubling scans, and the GTA verifier."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import TOL, DomainError, MeasuredSpace, PointedSpace, distances
from .alignment import coupling_from_map, radial_dpgh_lower
from .hausdorff import local_hausdorff


@dataclass
class CoverEstimate:
    s: float
    delta: float
    value: float
    cover: list
    mode: str


@dataclass
class DensityProfile:
    point: int
    scales: np.ndarray
    ratio_2r: np.ndarray
    ratio_r: np.ndarray
    masses: np.ndarray

    @property
    def lower(self):
        return float(self.ratio_r.min())

    @property
    def upper(self):
        return float(self.ratio_r.max())

    def as_dict(self):
        return {"point": self.point, "scales": self.scales.tolist(), "mass": self.masses.tolist(),
                "ratio_2r": self.ratio_2r.tolist(), "ratio_r": self.ratio_r.tolist(),
                "min_ratio_r": self.lower, "max_ratio_r": self.upper,
                "min_ratio_2r": float(self.ratio_2r.min()), "max_ratio_2r": float(self.ratio_2r.max())}


@dataclass
class GtaReport:
    eta: float
    K: float
    delta: float
    R0: float
    n: int
    density: list = field(default_factory=list)
    approx: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def density_pass(self):
        return all(r["pass"] for r in self.density)

    @property
    def approx_pass(self):
        return all(r["pass"] for r in self.approx)

    @property
    def passed(self):
        return self.density_pass and self.approx_pass

    def first_failure(self):
        for r in self.density + self.approx:
            if not r["pass"]:
                return r
        return None


# ------------------------------------------------------------ content

def _power(d, s):
    # 0^0 = 1: a nonempty piece counts once for s = 0
    return 1.0 if s == 0 else float(d) ** s


def _diam(dist, idx):
    idx = np.asarray(idx, dtype=int)
    return float(dist[np.ix_(idx, idx)].max()) if idx.size > 1 else 0.0


def content(space: PointedSpace, target, s: float, delta: float = math.inf, mode: str = "greedy_upper"):
    """Estimate H^s_delta of the target points.

    greedy_upper: clusters of radius delta/2 around greedy seeds (a valid cover).
    exact_small: optimal partition by subset dynamic programming (<= 15 points).
    aggregated: bin coordinates at mesh delta; each occupied bin is a piece of
    its geometric diameter (box-counting surrogate).
    """
    if s < 0:
        raise DomainError("s must be nonnegative")
    if not delta > 0:
        raise DomainError("delta must be positive")
    target = np.unique(np.asarray(list(target), dtype=int))
    if target.size == 0:
        return CoverEstimate(s, delta, 0.0, [], mode)
    if mode == "greedy_upper":
        return _greedy(space.dist, target, s, delta)
    if mode == "exact_small":
        return _exact(space.dist, target, s, delta)
    if mode == "aggregated":
        if space.coords is None:
            raise DomainError("aggregated content needs point coordinates")
        return aggregated_content(space.coords[target], s, delta, space.norm or "linf", target)
    raise DomainError(f"unknown mode {mode!r}")


def _greedy(dist, target, s, delta):
    left = list(target)
    cover = []
    rad = delta / 2 if math.isfinite(delta) else math.inf
    while left:
        seed = left[0]
        piece = [p for p in left if dist[seed, p] <= rad + TOL]
        chosen = set(piece)
        left = [p for p in left if p not in chosen]
        cover.append((piece, _diam(dist, piece)))
    value = sum(_power(d, s) for _, d in cover)
    return CoverEstimate(s, delta, value, cover, "greedy_upper")


def _exact(dist, target, s, delta):
    n = len(target)
    if n > 15:
        raise DomainError("exact_small supports at most 15 points")
    if s > 0:
        cover = [([int(p)], 0.0) for p in target]
        return CoverEstimate(s, delta, 0.0, cover, "exact_small")
    sub = dist[np.ix_(target, target)]
    full = 1 << n
    diam = np.zeros(full)
    for S in range(1, full):
        low = (S & -S).bit_length() - 1
        rest = S & ~(1 << low)
        if rest:
            members = [j for j in range(n) if rest >> j & 1]
            diam[S] = max(diam[rest], sub[low, members].max())
    cost = np.where(diam <= delta + TOL, 1.0, np.inf)
    best = np.full(full, np.inf)
    best[0] = 0.0
    arg = np.zeros(full, dtype=np.int64)
    for S in range(1, full):
        low = S & -S
        rest = S ^ low
        T = rest
        while True:
            piece = T | low
            v = cost[piece] + best[S ^ piece]
            if v < best[S]:
                best[S], arg[S] = v, piece
            if T == 0:
                break
            T = (T - 1) & rest
    cover = []
    S = full - 1
    while S:
        piece = int(arg[S])
        members = [int(target[j]) for j in range(n) if piece >> j & 1]
        cover.append((members, float(diam[piece])))
        S ^= piece
    return CoverEstimate(s, delta, float(best[full - 1]), cover, "exact_small")


def aggregated_content(points, s: float, mesh: float, norm: str = "linf", labels=None) -> CoverEstimate:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    m = p.shape[1]
    keys = np.floor(p / mesh + 1e-9).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    side = mesh if norm == "linf" else mesh * math.sqrt(m)
    labels = np.arange(len(p)) if labels is None else np.asarray(labels)
    order = np.argsort(inv, kind="stable")
    splits = np.cumsum(np.bincount(inv))[:-1]
    cover = [(labels[g].tolist(), side) for g in np.split(order, splits)]
    return CoverEstimate(s, mesh, len(uniq) * _power(side, s), cover, "aggregated")


# ------------------------------------------------------------ densities

def density_profile(s: MeasuredSpace, point: int, scales, dim: float) -> DensityProfile:
    scales = np.asarray(scales, dtype=float)
    if np.any(scales <= 0):
        raise DomainError("scales must be positive")
    d = s.dist[int(point)]
    masses = np.array([s.weight[d <= r + TOL].sum() for r in scales])
    ratio_r = masses / scales ** dim
    return DensityProfile(int(point), scales, ratio_r / 2.0 ** dim, ratio_r, masses)


def doubling_scan(s: MeasuredSpace, scales, points=None) -> dict:
    """Per-point max of mu(B(x,2r))/mu(B(x,r)); zero-mass balls are flagged as non-doubling."""
    pts = np.arange(s.n_points) if points is None else np.asarray(points, dtype=int)
    d = s.dist[pts]
    w = s.weight
    best = np.zeros(len(pts))
    where = np.zeros(len(pts))
    zero = []
    for r in np.asarray(scales, dtype=float):
        m1 = (d <= r + TOL) @ w
        m2 = (d <= 2 * r + TOL) @ w
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(m1 > 0, m2 / np.where(m1 > 0, m1, 1), np.inf)
        for k in np.flatnonzero(m1 <= 0):
            zero.append((int(pts[k]), float(r)))
        upd = ratio > best
        best[upd] = ratio[upd]
        where[upd] = r
    k = int(np.argmax(best))
    return {"points": pts.tolist(), "max_ratio": best.tolist(), "argmax_scale": where.tolist(),
            "M": float(best[k]), "worst_point": int(pts[k]), "worst_scale": float(where[k]),
            "zero_mass": zero}


# ------------------------------------------------------------ model fitting

def _tangent_basis(coords, n):
    m = coords.shape[1]
    if m == n:
        return np.eye(n)
    c = coords - coords.mean(axis=0)
    _, _, vt = np.linalg.svd(c, full_matrices=False)
    return vt[:n].T


def _mds(dist, n):
    m = dist.shape[0]
    J = np.eye(m) - 1.0 / m
    B = -0.5 * J @ (dist ** 2) @ J
    w, v = np.linalg.eigh(B)
    idx = np.argsort(w)[::-1][:n]
    return v[:, idx] * np.sqrt(np.maximum(w[idx], 0))


def _norm_fn(norm):
    if norm == "l2":
        return lambda v: np.sqrt((v ** 2).sum(axis=-1))
    return lambda v: np.abs(v).max(axis=-1)


def _bilip_constant(P, norm, samples=720):
    """sqrt(max/min) of ||P v|| over the sup-norm unit sphere (best scaled identity chart)."""
    n = P.shape[1]
    nf = _norm_fn(norm)
    if n == 1:
        vs = np.array([[1.0]])
    else:
        # boundary of the cube [-1,1]^n sampled on a grid
        g = np.linspace(-1, 1, 13)
        pts = np.array(list(itertools.product(g, repeat=n)))
        vs = pts[np.abs(pts).max(axis=1) >= 1 - 1e-12]
    vals = nf(vs @ P.T)
    a, b = vals.max(), vals.min()
    return math.sqrt(a / b), a, b


def bilip_model_fit(local: PointedSpace, K: float, n: int, grid_resolution: float = 1 / 32,
                    delta: float = 0.1) -> dict:
    """Fit a flat chart to a unit-scale pointed space and bound its distance to the model.

    The model is the unit ball of a normed n-space (ambient norm restricted to the
    fitted tangent directions), sampled on a sup-norm grid.  The upper bound is
    H_z in an explicit coupling plus the sample's covering radius.
    """
    g = grid_resolution
    nf = _norm_fn(local.norm or "linf")
    if local.coords is not None:
        X = local.coords - local.coords[local.base]
        P = _tangent_basis(X, n)
        # scale columns to unit ambient norm
        P = P / nf(P.T)[None, :]
        U = np.linalg.lstsq(P, X.T, rcond=None)[0].T
        norm = local.norm or "linf"
    else:
        U = _mds(local.dist, n)
        U = U - U[local.base]
        P = np.eye(n)
        norm = "l2"
        nf = _norm_fn(norm)
    kfit, a, b = _bilip_constant(P, norm)
    span = 1.0 / b + g
    ticks = np.arange(-math.ceil(span / g), math.ceil(span / g) + 1) * g
    grid = np.array(list(itertools.product(ticks, repeat=n)))
    corners = np.array(list(itertools.product([-g / 2, g / 2], repeat=n)))
    rho = float(nf(corners @ P.T).max())
    model = grid[nf(grid @ P.T) <= 1.0 + rho + 1e-12]
    # base first so it is the model basepoint
    model = model[np.argsort(nf(model @ P.T), kind="stable")]
    if local.coords is not None:
        amb_local = X
        amb_model = model @ P.T
        allp = np.vstack([amb_local, amb_model])
        glued = distances(allp, norm)
        host = PointedSpace(glued, local.base)
        nl = local.n_points
        hz = local_hausdorff(host, np.arange(nl), nl + np.arange(len(model)))
        method = "ambient"
    else:
        ms = PointedSpace(distances(model, "l2"), 0)
        diff = U[:, None, :] - model[None, :, :]
        f = {i: int(np.argmin(nf(diff[i]))) for i in range(local.n_points)}
        f[local.base] = 0
        cp = coupling_from_map(local, ms, f)
        hz = cp.hz()
        method = "map"
    ms = PointedSpace(distances(model @ P.T, norm), 0)
    low = max(0.0, radial_dpgh_lower(local, ms) - rho)
    upper = min(0.5, hz + rho)
    # chart xi on the grid of Phi: nearest local point to the chart image
    c = 1.0 / math.sqrt(a * b)
    half = K * (1 + 2 * delta)
    q = grid[np.abs(grid).max(axis=1) <= half + 1e-12]
    img = (q * c) @ P.T
    used = nf(img) <= 1.0
    q, img = q[used], img[used]
    if local.coords is not None:
        dq = distances(np.vstack([img, X]), norm)[: len(img), len(img):]
    else:
        dq = distances(np.vstack([q * c, U]), "l2")[: len(q), len(q):]
    xi = dq.argmin(axis=1)
    dd = local.dist[np.ix_(xi, xi)]
    qq = distances(q, "linf")
    viol = np.maximum(qq / K - dd, dd - K * qq)
    chart_delta = float(max(0.0, viol.max())) if viol.size else 0.0
    return {"lower": float(min(low, upper)), "upper": float(upper), "hz": float(hz), "cover_radius": rho,
            "K_fit": kfit, "K_ok": kfit <= K + 1e-9, "chart_delta": chart_delta, "method": method,
            "basis": P.tolist(), "chart": xi.tolist(), "model_points": int(len(model))}


# ------------------------------------------------------------ GTA

def verify_gta(X: MeasuredSpace, C, G, eta: float, K: float, delta: float, R0: float, scales,
               n: int, grid_resolution: float = 1 / 32, points=None, approx_points=None) -> GtaReport:
    C = np.unique(np.asarray(list(C), dtype=int))
    G = np.unique(np.asarray(list(G), dtype=int))
    if not set(G.tolist()) <= set(C.tolist()):
        raise DomainError("G must be contained in C")
    if C.size and (C.min() < 0 or C.max() >= X.n_points):
        raise DomainError("C has invalid indices")
    rep = GtaReport(eta, K, delta, R0, n)
    scales = [float(r) for r in scales if 0 < r <= R0 + TOL]
    cpts = C if points is None else np.intersect1d(C, points)
    for x in cpts:
        for r in scales:
            m = float(X.weight[X.dist[x] <= r + TOL].sum())
            need = eta * r ** n
            rep.density.append({"x": int(x), "r": r, "mass": m, "need": need, "ratio": m / r ** n,
                                "pass": m >= need - 1e-12})
    if G.size == 0:
        rep.notes.append("G is empty: approximation item holds vacuously")
    thr = min(delta, 1.0 / (K * (1 + 2 * delta)))
    inC = np.zeros(X.n_points, dtype=bool)
    inC[C] = True
    gpts = G if approx_points is None else np.intersect1d(G, approx_points)
    for x in gpts:
        for r in scales:
            ball = np.flatnonzero(X.dist[x] <= r + TOL)
            cand = ball[inC[ball]]
            cap = eta * (delta * r) ** n
            defect = float(X.weight[ball].sum() - X.weight[cand].sum())
            rec = {"x": int(x), "r": r, "defect": defect, "defect_cap": cap, "threshold": thr}
            if not defect < cap:
                rec["pass"] = False
                rec["reason"] = "mass defect of C within the ball already exceeds the cap"
                rep.approx.append(rec)
                continue
            sub, idx = PointedSpace.sub(X.with_base(int(x)), cand)
            coords = None if sub.coords is None else (sub.coords - sub.coords[sub.base]) / r
            local = PointedSpace(sub.dist / r, sub.base, coords, sub.norm)
            fit = bilip_model_fit(local, K, n, grid_resolution, delta)
            rec.update(size=int(len(cand)), lower=fit["lower"], upper=fit["upper"], K_fit=fit["K_fit"],
                       chart_delta=fit["chart_delta"])
            rec["pass"] = bool(fit["K_ok"] and fit["upper"] < thr)
            rep.approx.append(rec)
    return rep
