"""Multiscale Hölder surface construction on dyadic lattices.

A seed map on a coarse lattice D(M) of [0,1]^n into a point set C is extended
level by level: cubes whose corner images are near G are refined by filling
faces of increasing dimension through local bi-Lipschitz charts, the others
are left as holes.  The result on the finest lattice is completed by a
coordinatewise McShane extension and audited exhaustively.

Two sets of constants are carried.  ``Constants`` holds the theoretical ones
(N, alpha, sigma, Lambda), used for the bounds the certificate is checked
against.  ``CubeComplex`` holds the lattice actually built: refinement ratio
2^-b per level, seed level M and a finest level ``depth``.  Split radii use
measured Lipschitz budgets of the current map.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .core import TOL, DomainError, MeasuredSpace, PointedSpace, from_points
from .measure import _bilip_constant, bilip_model_fit

CHART_POINTS = 400


class ExtensionError(RuntimeError):
    """A face could not be extended (no acceptable chart)."""


class ConstructionInvalid(RuntimeError):
    """A certificate inequality failed; ``certificate`` holds every record."""

    def __init__(self, msg, certificate=None):
        super().__init__(msg)
        self.certificate = certificate


# ------------------------------------------------------------ constants

@dataclass(frozen=True)
class Constants:
    K: float
    gamma: float
    eta: float
    n: int
    N: int
    alpha: float
    l: float
    sigma: float
    M: int
    m: int
    Lambda: float

    def sigma_l_gap(self) -> float:
        return abs(self.sigma * self.l - self.l ** self.alpha)

    def beta_bound_ok(self, depth: int) -> bool:
        """sigma^i < 1/(2 sigma l^i) for 2/alpha < i <= depth (checked in logs)."""
        lo = math.floor(2 / self.alpha) + 1
        for i in range(lo, depth + 1):
            lhs = i * math.log(self.sigma)
            rhs = -math.log(2 * self.sigma) - i * math.log(self.l)
            if not lhs < rhs:
                return False
        return True

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("K", "gamma", "eta", "n", "N", "alpha", "l", "sigma", "M", "m", "Lambda")}


def solve_constants(K: float, gamma: float, n: int, eta: float, M: int | None = None) -> Constants:
    """Smallest N with (5K^2)^n <= 2^{N(1-gamma)}; alpha from (5K^2)^n = 2^{N(1-alpha)}."""
    if not (K >= 1 and 0 < gamma < 1 and eta > 0 and n >= 1):
        raise DomainError("need K >= 1, 0 < gamma < 1, eta > 0, n >= 1")
    lg = n * math.log2(5 * K * K)
    N = max(1, math.ceil(lg / (1 - gamma) - 1e-12))
    while lg > N * (1 - gamma) + 1e-12:
        N += 1
    alpha = 1 - lg / N
    l = 2.0 ** -N
    sigma = (5 * K * K) ** n
    if M is None:
        M = math.floor(2 / alpha) + 1
    # log form: the theoretical constant overflows doubles for modest n and M
    log_lam = n * (math.log(50) + M * math.log(sigma) - alpha * math.log(l)) - math.log(eta)
    lam = math.exp(log_lam) if log_lam < 709 else math.inf
    c = Constants(K, gamma, eta, n, N, alpha, l, sigma, M, M * N, lam)
    assert alpha >= gamma - 1e-12
    assert c.sigma_l_gap() <= 1e-12 * max(1.0, c.sigma * c.l)
    return c


# ------------------------------------------------------------ lattices

class CubeComplex:
    """Dyadic lattices D(i) of [0,1]^n with side 2^{-b i}, stored as integer
    coordinates on the finest lattice D(depth)."""

    def __init__(self, n: int, b: int = 2, M: int = 1, depth: int = 3):
        if depth < M:
            depth = M
        self.n, self.b, self.M, self.depth = n, b, M, depth
        self.Nf = 2 ** (b * depth)
        self.shape = (self.Nf + 1,) * n

    def spacing(self, i: int) -> float:
        return 2.0 ** (-self.b * i)

    def unit(self, i: int) -> int:
        """Lattice step of level i in finest-lattice units."""
        return 2 ** (self.b * (self.depth - i))

    def size(self, i: int) -> int:
        return (2 ** (self.b * i) + 1) ** self.n

    def lattice(self, i: int) -> np.ndarray:
        u = self.unit(i)
        ticks = np.arange(0, self.Nf + 1, u)
        return np.array(list(itertools.product(ticks, repeat=self.n)), dtype=int)

    def cubes(self, i: int) -> np.ndarray:
        """Lower corners of the cubes Q(i)."""
        u = self.unit(i)
        ticks = np.arange(0, self.Nf, u)
        return np.array(list(itertools.product(ticks, repeat=self.n)), dtype=int)

    def corners(self, lower, i: int) -> np.ndarray:
        u = self.unit(i)
        off = np.array(list(itertools.product([0, u], repeat=self.n)), dtype=int)
        return np.asarray(lower)[None, :] + off

    def children(self, lower, i: int) -> np.ndarray:
        u, v = self.unit(i), self.unit(i + 1)
        ticks = np.arange(0, u, v)
        off = np.array(list(itertools.product(ticks, repeat=self.n)), dtype=int)
        return np.asarray(lower)[None, :] + off

    def faces(self, lower, i: int, m: int) -> list:
        """m-faces of a cube as keys (lower corner, free axes)."""
        u = self.unit(i)
        out = []
        for free in itertools.combinations(range(self.n), m):
            fixed = [a for a in range(self.n) if a not in free]
            for bits in itertools.product([0, u], repeat=len(fixed)):
                lo = np.array(lower, dtype=int)
                for a, s in zip(fixed, bits):
                    lo[a] += s
                out.append((tuple(lo.tolist()), free))
        return out

    def face_points(self, key, i: int, level: int):
        """Points of face (of a level-i cube) on D(level) and a boundary mask."""
        lo, free = key
        u, v = self.unit(i), self.unit(level)
        ticks = np.arange(0, u + 1, v)
        pts = np.repeat(np.array(lo, dtype=int)[None], len(ticks) ** len(free), axis=0)
        if free:
            grid = np.array(list(itertools.product(ticks, repeat=len(free))), dtype=int)
            pts[:, list(free)] += grid
            bnd = np.any((grid == 0) | (grid == u), axis=1)
        else:
            bnd = np.zeros(1, dtype=bool)
        return pts, bnd

    def flat(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=int)
        return np.ravel_multi_index(tuple(pts.T), self.shape)

    def param(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=float) / self.Nf

    def all_points(self) -> np.ndarray:
        return self.lattice(self.depth)


# ------------------------------------------------------------ McShane

def _pair_ratio_max(P, V, alpha=1.0, chunk=512, mask_radius=None):
    """max |V(x)-V(y)|_inf / |x-y|_inf^alpha over pairs (per coordinate and overall)."""
    k = len(P)
    if k < 2:
        return np.zeros(V.shape[1]), 0.0, None
    best_c = np.zeros(V.shape[1])
    best, where = 0.0, None
    for s in range(0, k, chunk):
        dp = cdist(P[s:s + chunk], P, "chebyshev")
        ok = dp > 0
        if mask_radius is not None:
            ok &= dp <= mask_radius + 1e-12
        dpa = np.where(ok, dp, 1.0) ** alpha
        tot = np.zeros_like(dp)
        for j in range(V.shape[1]):
            dv = np.abs(V[s:s + chunk, j][:, None] - V[None, :, j])
            r = np.where(ok, dv / dpa, 0.0)
            best_c[j] = max(best_c[j], r.max())
            tot = np.maximum(tot, r)
        a = int(tot.argmax())
        if tot.flat[a] > best:
            best = float(tot.flat[a])
            where = (s + a // k, a % k)
    return best_c, best, where


def mcshane_extend(dom, values, query, alpha: float = 1.0, H=None, clamp: bool = True,
                   tol: float = 1e-9):
    """F(y) = min_x f(x) + H d(x,y)^alpha per coordinate, clamped to [min f, max f].

    d is the sup-norm on parameters.  H may be a scalar or one value per
    coordinate; when omitted the measured constant of each coordinate is
    used.  Returns (F, H).
    """
    dom = np.atleast_2d(np.asarray(dom, dtype=float))
    query = np.atleast_2d(np.asarray(query, dtype=float))
    vals = np.asarray(values, dtype=float)
    vec = vals.ndim == 2
    V = vals if vec else vals[:, None]
    if len(dom) == 0:
        raise DomainError("empty domain")
    _, inv = np.unique(dom, axis=0, return_inverse=True)
    inv = inv.ravel()
    if len(np.unique(inv)) < len(dom):
        for j in range(V.shape[1]):
            lo = np.full(inv.max() + 1, np.inf)
            hi = np.full(inv.max() + 1, -np.inf)
            np.minimum.at(lo, inv, V[:, j])
            np.maximum.at(hi, inv, V[:, j])
            if np.any(hi - lo > tol):
                raise DomainError("repeated domain point with different values")
    meas, _, where = _pair_ratio_max(dom, V, alpha)
    if H is None:
        Hs = meas
    else:
        Hs = np.broadcast_to(np.asarray(H, dtype=float), meas.shape).copy()
        bad = meas > Hs * (1 + tol) + tol
        if np.any(bad):
            j = int(np.argmax(bad))
            raise DomainError(f"input not Hölder at H={Hs[j]} (measured {meas[j]}) for coordinate {j}")
    out = np.empty((len(query), V.shape[1]))
    for s in range(0, len(query), 1024):
        d = cdist(query[s:s + 1024], dom, "chebyshev") ** alpha
        for j in range(V.shape[1]):
            out[s:s + 1024, j] = (V[None, :, j] + Hs[j] * d).min(axis=1)
    if clamp:
        out = np.clip(out, V.min(axis=0), V.max(axis=0))
    return (out if vec else out[:, 0]), Hs


# ------------------------------------------------------------ certificate log

@dataclass
class Check:
    name: str
    lhs: float
    rhs: float
    holds: bool
    asserted: bool = True
    level: int | None = None
    witness: object = None

    def as_dict(self):
        d = {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "margin": self.rhs - self.lhs,
             "holds": self.holds, "asserted": self.asserted}
        if self.level is not None:
            d["level"] = self.level
        if self.witness is not None:
            d["witness"] = self.witness
        return d


class _Log:
    def __init__(self):
        self.items: list[Check] = []

    def check(self, name, lhs, rhs, level=None, witness=None, asserted=True, tol=1e-9):
        ok = bool(lhs <= rhs + tol * max(1.0, abs(rhs)))
        self.items.append(Check(name, float(lhs), float(rhs), ok, asserted, level, witness))
        return ok

    def failures(self):
        return [c for c in self.items if c.asserted and not c.holds]


# ------------------------------------------------------------ map state

@dataclass
class PartialMap:
    level: int
    domain: np.ndarray      # flat indices into the finest lattice
    values: np.ndarray      # C indices
    beta: float             # measured local Lipschitz budget
    budget: float           # theoretical L sigma^{i-M}


@dataclass
class _State:
    cx: CubeComplex
    X: MeasuredSpace
    C: np.ndarray
    G: np.ndarray
    pos: np.ndarray         # ambient coordinates of X
    cid: np.ndarray         # per finest-lattice point: index into X or -1
    tree_C: cKDTree
    tree_G: cKDTree | None
    K: float
    charts: dict = field(default_factory=dict)

    def defined(self):
        return np.flatnonzero(self.cid >= 0)

    def img(self, flat_idx):
        return self.pos[self.cid[flat_idx]]


def _nearest(tree, pts, ids, tol=1e-12):
    """Nearest point with lowest-index tie-break (sup norm)."""
    k = min(4, tree.n)
    d, j = tree.query(pts, k=k, p=np.inf)
    d, j = np.reshape(d, (len(pts), k)), np.reshape(j, (len(pts), k))
    out_d = d[:, 0].copy()
    out_i = np.empty(len(pts), dtype=int)
    for r in range(len(pts)):
        tie = d[r] <= d[r, 0] + tol
        out_i[r] = ids[j[r][tie]].min()
    return out_d, out_i


def _local_lip(cx, st, flat_idx, radius_units):
    """max d(iota p, iota p')/|p-p'| over defined pairs within radius (lattice units)."""
    if len(flat_idx) < 2:
        return 0.0, None
    P = np.array(np.unravel_index(flat_idx, cx.shape)).T
    tree = cKDTree(P)
    pairs = tree.query_pairs(radius_units + 0.5, p=np.inf, output_type="ndarray")
    if len(pairs) == 0:
        return 0.0, None
    dp = np.abs(P[pairs[:, 0]] - P[pairs[:, 1]]).max(axis=1) / cx.Nf
    Y = st.img(flat_idx)
    dy = np.abs(Y[pairs[:, 0]] - Y[pairs[:, 1]]).max(axis=1)
    r = dy / dp
    a = int(r.argmax())
    return float(r[a]), (int(flat_idx[pairs[a, 0]]), int(flat_idx[pairs[a, 1]]))


# ------------------------------------------------------------ split

def split_good_bad(cx: CubeComplex, st: _State, cubes, level: int, beta: float):
    """Good iff some corner image has a G-point within beta * side (closed ball).

    Returns (good, bad, witness) where witness[k] is the X index of the
    nearest qualifying G-point for good cube k.
    """
    cubes = np.asarray(cubes, dtype=int).reshape(-1, cx.n)
    rad = beta * cx.spacing(level)
    good, bad, wit = [], [], []
    for q in cubes:
        cor = cx.flat(cx.corners(q, level))
        if np.any(st.cid[cor] < 0):
            raise DomainError(f"corner of cube {q.tolist()} at level {level} not in map domain")
        if st.tree_G is None:
            bad.append(q)
            continue
        d, g = _nearest(st.tree_G, st.img(cor), st.G)
        ok = d <= rad + TOL
        if ok.any():
            best = np.min(d[ok])
            sel = ok & (d <= best + 1e-12)
            good.append(q)
            wit.append(int(g[sel].min()))
        else:
            bad.append(q)
    as_arr = lambda a: np.array(a, dtype=int).reshape(-1, cx.n)
    return as_arr(good), as_arr(bad), np.array(wit, dtype=int)


# ------------------------------------------------------------ charts and faces

@dataclass
class Chart:
    x: int
    r: float
    A: np.ndarray           # ambient_dim x n
    Ap: np.ndarray          # pseudo-inverse
    half: float             # parameter box half-width
    K_fit: float
    fit_upper: float


def _chart(st: _State, x: int, r: float, n: int, delta: float) -> Chart:
    key = (x, round(r, 12))
    if key in st.charts:
        return st.charts[key]
    X = st.X
    cpos = st.pos[st.C]
    near = st.C[np.abs(cpos - st.pos[x]).max(axis=1) <= r + TOL]
    if x not in set(near.tolist()):
        near = np.append(near, x)
    if len(near) <= n:
        raise ExtensionError(f"too few C points near {x} at radius {r}")
    if len(near) > CHART_POINTS:
        step = math.ceil(len(near) / CHART_POINTS)
        keep = near[::step]
        near = np.unique(np.append(keep, x))
    loc = (st.pos[near] - st.pos[x]) / r
    base = int(np.flatnonzero(near == x)[0])
    norm = X.norm or "linf"
    local = PointedSpace(X.dist[np.ix_(near, near)] / r, base, loc, norm)
    fit = bilip_model_fit(local, st.K, n, grid_resolution=1 / 8, delta=delta)
    if not fit["K_ok"]:
        raise ExtensionError(f"chart at {x} (r={r:.4g}) has K_fit={fit['K_fit']:.4g} > K={st.K}")
    P = np.asarray(fit["basis"], dtype=float)
    _, a, b = _bilip_constant(P, norm)
    A = P / math.sqrt(a * b)
    ch = Chart(x, r, A, np.linalg.pinv(A), st.K * (1 + 2 * delta), fit["K_fit"], fit["upper"])
    st.charts[key] = ch
    return ch


def extend_face(cx: CubeComplex, st: _State, key, level: int, x: int, beta: float, log: _Log,
                delta: float) -> dict:
    """Fill the D(level+1) points of one face from its boundary values."""
    s = cx.spacing(level)
    if not beta < 1 / (2 * s):
        raise DomainError(f"beta={beta} violates beta < 1/(2 l^i) = {1 / (2 * s)}")
    pts, bnd = cx.face_points(key, level, level + 1)
    fi = cx.flat(pts)
    rec = {"face": [list(key[0]), list(key[1])], "witness": x, "filled": 0}
    todo = ~bnd & (st.cid[fi] < 0)
    if not todo.any():
        return rec
    if np.any(st.cid[fi[bnd]] < 0):
        raise DomainError(f"face {key} has undefined boundary points")
    bp = cx.param(pts[bnd])
    by = st.img(fi[bnd])
    # input Lipschitz and nearness to the witness
    _, lip_in, _ = _pair_ratio_max(bp, by)
    rec["input_lip"] = lip_in
    far = float(np.abs(by - st.pos[x]).max())
    rec["req_G"] = {"lhs": far, "rhs": 2 * beta * s}
    r = 2 * beta * s
    ch = _chart(st, x, r, cx.n, delta)
    psi_b = (by - st.pos[x]) @ ch.Ap.T / r
    psi, _ = mcshane_extend(bp, psi_b, cx.param(pts[todo]))
    psi = np.clip(psi, -ch.half, ch.half)
    target = st.pos[x] + r * psi @ ch.A.T
    _, ids = _nearest(st.tree_C, target, st.C)
    st.cid[fi[todo]] = ids
    rec["filled"] = int(todo.sum())
    # extension Lipschitz on the whole face
    _, lip, where = _pair_ratio_max(cx.param(pts), st.img(fi))
    bound = 2 * st.K ** 2 * beta
    w = None if where is None else [int(fi[where[0]]), int(fi[where[1]])]
    log.check("face_extension_lipschitz", lip, bound, level=level, witness=w)
    rec["lip"] = lip
    return rec


def extend_skeleton(cx: CubeComplex, st: _State, good, witness, level: int, beta: float, m: int,
                    log: _Log, delta: float) -> tuple[float, dict]:
    """Extend over the (m+1)-faces of the good cubes; returns the new budget and a record."""
    owner = {}
    for q, w in zip(good, witness):
        for key in cx.faces(q, level, m + 1):
            owner.setdefault(key, int(w))
    recs = []
    for key in sorted(owner):
        recs.append(extend_face(cx, st, key, level, owner[key], beta, log, delta))
    # cross-face bound over the filled skeleton
    pts = []
    for key in owner:
        p, _ = cx.face_points(key, level, level + 1)
        pts.append(cx.flat(p))
    idx = np.unique(np.concatenate(pts)) if pts else np.zeros(0, dtype=int)
    lip, where = _local_lip(cx, st, idx, cx.unit(level))
    log.check("skeleton_rung_lipschitz", lip, 5 * st.K ** 2 * beta, level=level, witness=where)
    req = [r["req_G"]["lhs"] - r["req_G"]["rhs"] for r in recs if "req_G" in r]
    info = {"m": m, "faces": len(owner), "beta_in": beta, "lip_out": lip,
            "filled": int(sum(r["filled"] for r in recs)),
            "req_G_worst_excess": float(max(req)) if req else None,
            "charts_K_fit_max": float(max((c.K_fit for c in st.charts.values()), default=0.0))}
    return max(beta, lip), info


# ------------------------------------------------------------ iteration

@dataclass
class LevelRecord:
    level: int
    beta: float
    budget: float
    good: np.ndarray
    bad: np.ndarray
    rungs: list
    lip_out: float | None = None

    def as_dict(self):
        return {"level": self.level, "beta": self.beta, "budget": self.budget,
                "n_good": int(len(self.good)), "n_bad": int(len(self.bad)),
                "bad": self.bad.tolist(), "rungs": self.rungs, "lip_out": self.lip_out}


@dataclass
class Ledger:
    cx: CubeComplex
    consts: Constants
    L: float
    levels: list
    maps: list
    state: _State
    log: _Log
    seed: np.ndarray


def seed_from_chart(X: MeasuredSpace, C, x: int, n: int, cx: CubeComplex, side: float = 1.0):
    """Seed on D(M): nearest C point to x + side * A p with a PCA tangent basis at x."""
    if X.coords is None:
        raise DomainError("host must carry coordinates")
    C = np.asarray(C, dtype=int)
    pos = X.coords
    if pos.shape[1] == n:
        A = np.eye(n)
    else:
        c = pos[C] - pos[x]
        _, _, vt = np.linalg.svd(c, full_matrices=False)
        A = vt[:n].T / np.abs(vt[:n].T).max(axis=0)
    pts = cx.lattice(cx.M)
    target = pos[x] + side * cx.param(pts) @ A.T
    _, ids = _nearest(cKDTree(pos[C]), target, C)
    ids[np.flatnonzero((pts == 0).all(axis=1))] = x
    return ids


def iterate_levels(X: MeasuredSpace, C, G, seed, consts: Constants, cx: CubeComplex,
                   delta: float | None = None) -> Ledger:
    """Alternate face extension ladders and good/bad splits from level M to depth.

    ``seed`` gives the X index of the image of each D(M) point (in the order
    of ``cx.lattice(cx.M)``).
    """
    if X.coords is None:
        raise DomainError("host must be embedded (coordinates required)")
    C = np.unique(np.asarray(C, dtype=int))
    G = np.unique(np.asarray(G, dtype=int))
    if not set(G.tolist()) <= set(C.tolist()):
        raise DomainError("G must be a subset of C")
    seed = np.asarray(seed, dtype=int)
    if len(seed) != cx.size(cx.M) or not set(seed.tolist()) <= set(C.tolist()):
        raise DomainError("seed must map every D(M) point into C")
    if delta is None:
        delta = cx.spacing(1) / 20
    pos = np.asarray(X.coords, dtype=float)
    log = _Log()
    cid = -np.ones(int(np.prod(cx.shape)), dtype=int)
    seed_pts = cx.flat(cx.lattice(cx.M))
    cid[seed_pts] = seed
    st = _State(cx, X, C, G, pos, cid, cKDTree(pos[C]),
                cKDTree(pos[G]) if len(G) else None, consts.K)
    # seed Lipschitz constant over all pairs
    _, L, _ = _pair_ratio_max(cx.param(cx.lattice(cx.M)), pos[seed])
    log.check("seed_lipschitz_le_sigma_M", L, consts.sigma ** consts.M, asserted=False)
    log.check("M_gt_2_over_alpha", 2 / consts.alpha, cx.M, asserted=False, tol=-1e-12)
    levels, maps = [], []
    cubes = cx.cubes(cx.M)
    beta = L
    for i in range(cx.M, cx.depth + 1):
        dom = st.defined()
        if i > cx.M:
            beta, where = _local_lip(cx, st, dom, cx.unit(i - 1))
        budget = L * consts.sigma ** (i - cx.M)
        log.check("level_lipschitz_budget", beta, budget, level=i)
        maps.append(PartialMap(i, dom.copy(), st.cid[dom].copy(), beta, budget))
        good, bad, wit = split_good_bad(cx, st, cubes, i, beta)
        rec = LevelRecord(i, beta, budget, good, bad, [])
        levels.append(rec)
        if i == cx.depth or len(good) == 0:
            break
        b = beta
        for m in range(cx.n):
            b, info = extend_skeleton(cx, st, good, wit, i, b, m, log, delta)
            rec.rungs.append(info)
        lip, where = _local_lip(cx, st, st.defined(), cx.unit(i))
        rec.lip_out = lip
        log.check("level_extension_lipschitz", lip, consts.sigma * max(beta, 0.0) + (0 if beta > 0 else TOL),
                  level=i, witness=where)
        cubes = np.concatenate([cx.children(q, i) for q in good])
    return Ledger(cx, consts, L, levels, maps, st, log, seed)


# ------------------------------------------------------------ assembly

@dataclass
class HolderCertificate:
    values: np.ndarray          # ambient coordinates on the finest lattice
    in_C: np.ndarray            # X index or -1 (McShane-filled)
    holder_constant_bound: float
    holder_measured: float
    lipschitz_measured: float
    levels: list
    bad_balls: list
    subcover: list
    content: dict
    main: dict
    checks: list
    consts: Constants
    lattice: dict

    @property
    def passed(self) -> bool:
        return not any(c.asserted and not c.holds for c in self.checks)

    @property
    def n_bad(self) -> int:
        return int(sum(len(l.bad) for l in self.levels))

    def as_dict(self) -> dict:
        return {
            "constants": self.consts.as_dict(),
            "lattice": self.lattice,
            "holder_constant_bound": self.holder_constant_bound,
            "holder_measured": self.holder_measured,
            "lipschitz_measured": self.lipschitz_measured,
            "n_bad_cubes": self.n_bad,
            "levels": [l.as_dict() for l in self.levels],
            "bad_balls": self.bad_balls,
            "subcover": self.subcover,
            "content": self.content,
            "main": self.main,
            "checks": [c.as_dict() for c in self.checks],
            "passed": self.passed,
            "values": self.values.tolist(),
        }


def _decomposition_ok(cx: CubeComplex, levels) -> tuple[bool, int]:
    """Every finest cube lies under exactly one bad cube or under a full good chain."""
    fine = cx.cubes(cx.depth)
    bad_count = np.zeros(len(fine), dtype=int)
    good_final = np.zeros(len(fine), dtype=bool)
    for rec in levels:
        u = cx.unit(rec.level)
        anc = (fine // u) * u
        fk = cx.flat(anc)
        if len(rec.bad):
            bad_count += np.isin(fk, cx.flat(rec.bad))
        if rec.level == levels[-1].level and len(rec.good):
            good_final |= np.isin(fk, cx.flat(rec.good))
    ok = (bad_count + good_final) == 1
    return bool(ok.all()), int((~ok).sum())


def _vitali(centers, radii):
    """Greedy disjoint subfamily, largest radius first; index ties by order."""
    order = np.lexsort((np.arange(len(radii)), -np.asarray(radii)))
    chosen = []
    for k in order:
        if all(np.abs(centers[k] - centers[j]).max() > radii[k] + radii[j] for j in chosen):
            chosen.append(int(k))
    return chosen


def assemble_holder(led: Ledger) -> HolderCertificate:
    """Complete the map on the finest lattice and run every certificate check.

    Raises ConstructionInvalid (carrying the certificate) if an asserted
    inequality fails.
    """
    cx, st, log, cs = led.cx, led.state, led.log, led.consts
    n, L, K = cx.n, led.L, cs.K
    pts = cx.all_points()
    par = cx.param(pts)
    fidx = cx.flat(pts)
    dom = st.cid[fidx] >= 0
    Y = np.full((len(pts), st.pos.shape[1]), np.nan)
    Y[dom] = st.pos[st.cid[fidx[dom]]]
    if (~dom).any():
        Y[~dom], _ = mcshane_extend(par[dom], Y[dom], par[~dom])
    in_C = np.where(dom, st.cid[fidx], -1)
    # exhaustive Hölder and Lipschitz audits
    H = 5 * L * cs.l ** -cs.alpha
    _, hold, hw = _pair_ratio_max(par, Y, cs.alpha)
    _, lip, _ = _pair_ratio_max(par, Y, 1.0)
    log.check("holder_audit", hold, H, witness=None if hw is None else [int(hw[0]), int(hw[1])])
    x0 = Y[0]
    log.check("holder_image_radius", float(np.abs(Y - x0).max()), 10 * L + TOL)
    log.check("domain_image_radius", float(np.abs(Y[dom] - x0).max()), 5 * L + TOL, asserted=False)
    ok, nbad = _decomposition_ok(cx, led.levels)
    log.check("cube_decomposition_violations", nbad, 0)
    # cross-level bound along ancestor corners (sampled deterministically)
    betas = {r.level: r.beta for r in led.levels}
    rng = np.random.default_rng(0)
    samp = rng.choice(np.flatnonzero(dom), size=min(200, int(dom.sum())), replace=False)
    worst_ratio = 0.0
    for j in range(cx.M, cx.depth):
        desk = sum(betas.get(k + 1, betas[max(betas)]) * cx.spacing(k) for k in range(j, cx.depth))
        theo = 2 * L * cs.sigma ** (-cx.M + 1) * (cs.sigma * cs.l) ** j
        u = cx.unit(j)
        worst = 0.0
        for s in samp:
            p = pts[s]
            q = (p // u) * u
            q = np.minimum(q, cx.Nf)
            qi = int(np.flatnonzero(fidx == cx.flat(q[None])[0])[0])
            if not dom[qi]:
                continue
            worst = max(worst, float(np.abs(Y[s] - Y[qi]).max()))
        log.check("ancestor_corner_distance", worst, desk, level=j)
        log.check("ancestor_corner_distance_theoretical", worst, theo, level=j, asserted=False)
        worst_ratio = max(worst_ratio, worst / desk if desk > 0 else 0.0)
    # bad-ball inventory
    Gpos = st.pos[st.G] if len(st.G) else np.zeros((0, st.pos.shape[1]))
    balls = []
    for rec in led.levels:
        rho = rec.beta * cx.spacing(rec.level)
        rho_t = L * cs.sigma ** -cx.M * cs.l ** (cs.alpha * rec.level)
        for q in rec.bad:
            for c in cx.flat(cx.corners(q, rec.level)):
                k = int(np.flatnonzero(fidx == c)[0])
                dG = float(np.abs(Gpos - Y[k]).max(axis=1).min()) if len(Gpos) else math.inf
                balls.append({"level": rec.level, "corner": int(c), "center": Y[k].tolist(),
                              "radius": rho, "radius_theoretical": rho_t, "dist_to_G": dG,
                              "cube": q.tolist()})
    seen = {}
    for b in balls:
        seen.setdefault(b["corner"], b)
    balls = [seen[k] for k in sorted(seen, key=lambda c: (-seen[c]["radius"], c))]
    for b in balls:
        log.check("bad_ball_misses_G", b["radius"], b["dist_to_G"], level=b["level"], tol=-1e-12)
        log.check("bad_ball_theoretical_misses_G", b["radius_theoretical"], b["dist_to_G"],
                  level=b["level"], tol=-1e-12)
    centers = np.array([b["center"] for b in balls]) if balls else np.zeros((0, st.pos.shape[1]))
    radii = np.array([b["radius"] for b in balls])
    chosen = _vitali(centers, radii) if balls else []
    for a, b in itertools.combinations(chosen, 2):
        log.check("subcover_disjoint", radii[a] + radii[b], float(np.abs(centers[a] - centers[b]).max()),
                  tol=-1e-12)
    for k in range(len(balls)):
        reach = min(float(np.abs(centers[k] - centers[j]).max()) + radii[k] - 5 * radii[j] for j in chosen)
        log.check("subcover_five_r", reach, 0.0)
    # content of the image of bad cubes
    maximal = []
    for rec in led.levels:
        for q in rec.bad:
            maximal.append((rec.level, q))
    direct = 0.0
    kappa = 0.0
    for lev, q in maximal:
        u = cx.unit(lev)
        inside = np.all((pts >= q) & (pts <= q + u), axis=1)
        img = Y[inside]
        diam = float(np.abs(img[:, None] - img[None]).max())
        direct += diam ** n
        rho = betas[lev] * cx.spacing(lev)
        cor = Y[np.isin(fidx, cx.flat(cx.corners(q, lev)))]
        if rho > 0:
            kappa = max(kappa, float(np.abs(img[:, None] - cor[None]).max(axis=2).min(axis=1).max()) / rho)
    kappa = max(kappa, 1.0) if maximal else 0.0
    cover = sum((2 * (2 + kappa) * radii[j]) ** n for j in chosen)
    estimate = min(direct, cover) if maximal else 0.0
    R = 10 * L
    w = np.asarray(st.X.weight)
    near0 = np.abs(st.pos - x0).max(axis=1) <= R + TOL
    notG = np.ones(st.X.n_points, dtype=bool)
    notG[st.G] = False
    hole_mass = float(w[near0 & notG].sum())
    lam_desk = (2 * (2 + kappa)) ** n / cs.eta if maximal else 0.0
    dens = []
    for j in chosen:
        mass = float(w[np.abs(st.pos - centers[j]).max(axis=1) <= radii[j] + TOL].sum())
        dens.append(mass / radii[j] ** n)
        log.check("subcover_density", cs.eta * radii[j] ** n, mass)
    sel_mass = sum(float(w[np.abs(st.pos - centers[j]).max(axis=1) <= radii[j] + TOL].sum()) for j in chosen)
    log.check("subcover_mass_outside_G", sel_mass, hole_mass)
    log.check("content_defect", estimate, cs.Lambda * hole_mass)
    log.check("content_defect_local_constant", estimate, lam_desk * hole_mass)
    content = {"estimate": estimate, "bad_cube_cover": direct, "ball_cover": cover, "kappa": kappa,
               "hole_mass": hole_mass, "Lambda": cs.Lambda, "Lambda_local": lam_desk,
               "rhs": cs.Lambda * hole_mass, "rhs_local": lam_desk * hole_mass,
               "off_C_points": int((~dom).sum()), "n_maximal_bad": len(maximal),
               "subcover_density_min": float(min(dens)) if dens else None}
    # main conclusions: seed-grid bi-Lipschitz, neighbour displacement, content
    seed_pts = cx.lattice(cx.M)
    sk = np.array([int(np.flatnonzero(fidx == f)[0]) for f in cx.flat(seed_pts)])
    sp, sy = par[sk], Y[sk]
    dp = cdist(sp, sp, "chebyshev")
    dy = cdist(sy, sy, "chebyshev")
    off = dp > 0
    if off.sum():
        up = float((dy[off] / dp[off]).max())
        lo = float((dp[off] / np.maximum(dy[off], 1e-300)).max())
    else:
        up = lo = 1.0
    m = cx.b * cx.M
    bilip = max(up, lo)
    log.check("seed_grid_bilipschitz", bilip, K + 2.0 ** -m)
    step = 2.0 ** -m
    disp, _, _ = 0.0, None, None
    tree = cKDTree(pts)
    pairs = tree.query_pairs(step * cx.Nf + 0.5, p=np.inf, output_type="ndarray")
    if len(pairs):
        disp = float(np.abs(Y[pairs[:, 0]] - Y[pairs[:, 1]]).max())
    disp_bound = 10 * K * 2.0 ** (-m * cs.gamma / 2)
    log.check("neighbour_displacement", disp, disp_bound)
    R20 = 20 * K
    near20 = np.abs(st.pos - x0).max(axis=1) <= R20 + TOL
    hole20 = float(w[near20 & notG].sum())
    log.check("content_main", estimate, cs.Lambda * hole20)
    main = {"bilipschitz": {"lhs": bilip, "rhs": K + 2.0 ** -m},
            "displacement": {"lhs": disp, "rhs": disp_bound, "step": step},
            "content": {"lhs": estimate, "rhs": cs.Lambda * hole20, "hole_mass": hole20}}
    cert = HolderCertificate(Y, in_C, H, hold, lip, led.levels, balls,
                             [int(j) for j in chosen], content, main, list(log.items), cs,
                             {"n": n, "b": cx.b, "M": cx.M, "depth": cx.depth, "points": len(pts),
                              "L": L, "ancestor_ratio_max": worst_ratio})
    fails = log.failures()
    if fails:
        f = fails[0]
        raise ConstructionInvalid(f"{f.name}: {f.lhs:.6g} > {f.rhs:.6g} (witness {f.witness})", cert)
    return cert


def build(X: MeasuredSpace, C, G, K: float = 1.0, gamma: float = 0.5, eta: float = 1.0,
          depth: int = 3, b: int = 2, M: int = 1, x: int | None = None, seed=None,
          n: int | None = None) -> HolderCertificate:
    """Run the whole pipeline with a seed read off a chart at x (default: first C point)."""
    if X.coords is None:
        raise DomainError("host must be embedded (coordinates required)")
    C = np.unique(np.asarray(C, dtype=int))
    if n is None:
        n = X.coords.shape[1]
    cs = solve_constants(K, gamma, n, eta, M=M)
    cx = CubeComplex(n, b, M, depth)
    if x is None:
        x = int(C[np.lexsort(X.coords[C].T[::-1])][0])
    if seed is None:
        seed = seed_from_chart(X, C, x, n, cx)
    led = iterate_levels(X, C, G, seed, cs, cx)
    return assemble_holder(led)


def plane_fixture(spacing: float = 1 / 64, hole: float = 0.0, center=(0.5, 0.5)):
    """l_inf plane lattice on [0,1]^2 with H^2 cell weights; optional G-hole of mass fraction ``hole``.

    Returns (X, C, G).
    """
    k = int(round(1 / spacing))
    t = np.arange(k + 1) * spacing
    P = np.array(list(itertools.product(t, t)))
    X = from_points(P, np.full(len(P), spacing ** 2), base=0, norm="linf")
    C = np.arange(len(P))
    if hole <= 0:
        return X, C, C.copy()
    dc = np.abs(P - np.asarray(center)).max(axis=1)
    order = np.lexsort((np.arange(len(P)), dc))
    drop = order[: int(round(hole * len(P)))]
    G = np.setdiff1d(C, drop)
    return X, C, G
