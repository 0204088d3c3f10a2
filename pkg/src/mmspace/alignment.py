"""epsilon-isometries, couplings and interval estimates of d_pGH, d_pmGH and d_*.

A coupling is a cross-distance matrix between two pointed spaces whose glued
matrix is a (pseudo)metric with the two basepoints at distance 0.  Every upper
bound reported here is the objective of an explicit valid coupling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import TOL, DomainError, MeasuredSpace, PointedSpace, triangle_violation
from .flat import FlatSolver
from .hausdorff import local_hausdorff


class IncompleteCandidate(DomainError):
    pass


class NoConstruction(DomainError):
    pass


class Inapplicable(DomainError):
    pass


class InvalidCoupling(RuntimeError):
    pass


@dataclass
class EpsIsometry:
    eps: float
    map: dict
    provenance: str = "user"


@dataclass
class Coupling:
    left: PointedSpace
    right: PointedSpace
    cross: np.ndarray

    @property
    def n_left(self):
        return self.left.n_points

    @property
    def left_idx(self):
        return np.arange(self.left.n_points)

    @property
    def right_idx(self):
        return self.left.n_points + np.arange(self.right.n_points)

    def glued(self) -> np.ndarray:
        c = np.asarray(self.cross, dtype=float)
        return np.block([[self.left.dist, c], [c.T, self.right.dist]])

    def host(self) -> PointedSpace:
        return PointedSpace(self.glued(), self.left.base)

    def carry(self, mu=None, nu=None):
        """Measures of left/right moved onto host indices."""
        nl, nr = self.left.n_points, self.right.n_points
        a = np.zeros(nl + nr)
        b = np.zeros(nl + nr)
        if mu is not None:
            a[:nl] = mu
        if nu is not None:
            b[nl:] = nu
        return a, b

    def violations(self, tol=1e-9) -> list[str]:
        out = []
        c = np.asarray(self.cross)
        if np.any(c < -tol):
            out.append("negative cross distance")
        if abs(c[self.left.base, self.right.base]) > tol:
            out.append("basepoints not identified")
        worst, where = triangle_violation(self.glued())
        scale = max(1.0, float(np.max(self.glued())))
        if worst > tol * scale:
            out.append(f"triangle violated at {where} by {worst:.3g}")
        return out

    def hz(self) -> float:
        return local_hausdorff(self.host(), self.left_idx, self.right_idx)

    def fz(self, mu, nu, tol=1e-6) -> float:
        a, b = self.carry(mu, nu)
        return FlatSolver(self.host(), a, b).flat(tol)


@dataclass
class DistanceEstimate:
    lower: float
    upper: float
    method: str
    witness: Coupling | None = None
    inconclusive: bool = False
    info: dict = field(default_factory=dict)

    def as_dict(self):
        return {"lower": self.lower, "upper": self.upper, "method": self.method,
                "inconclusive": self.inconclusive, **self.info}


@dataclass
class LargeSubsetPair:
    k_mu: np.ndarray
    k_nu: np.ndarray
    mass_defect_mu: float
    mass_defect_nu: float
    flat_value: float
    hz: float
    hz_bound: float
    bump_integral: float
    carved_mass: float
    checks: dict = field(default_factory=dict)


# ------------------------------------------------------------ eps-isometries

def _domain(left: PointedSpace, eps: float) -> np.ndarray:
    return np.flatnonzero(left.dist[left.base] <= 1.0 / eps + TOL)


def _window(right: PointedSpace, eps: float) -> np.ndarray:
    return np.flatnonzero(right.dist[right.base] <= 1.0 / eps - eps + TOL)


def check_eps_isometry(left: PointedSpace, right: PointedSpace, iso: EpsIsometry, tol=TOL):
    """Verify base condition, distortion <= eps and coarse surjectivity. Returns (ok, violations)."""
    eps = iso.eps
    if eps <= 0:
        raise DomainError("eps must be positive")
    dom = _domain(left, eps)
    missing = [int(w) for w in dom if int(w) not in iso.map]
    if missing:
        raise IncompleteCandidate(f"map undefined on required indices {missing}")
    out = []
    if iso.map[left.base] != right.base:
        out.append("basepoint not mapped to basepoint")
    img = np.array([iso.map[int(w)] for w in dom], dtype=int)
    dis = np.abs(right.dist[np.ix_(img, img)] - left.dist[np.ix_(dom, dom)])
    if dis.size and dis.max() > eps + tol:
        a, b = np.unravel_index(dis.argmax(), dis.shape)
        out.append(f"distortion {dis.max():.6g} > eps at ({int(dom[a])},{int(dom[b])})")
    win = _window(right, eps)
    if win.size:
        gap = right.dist[np.ix_(win, img)].min(axis=1)
        if gap.max() > eps + tol:
            out.append(f"right point {int(win[gap.argmax()])} at {gap.max():.6g} from image")
    return not out, out


def distortion(left: PointedSpace, right: PointedSpace, fmap: dict) -> float:
    dom = np.array(sorted(fmap), dtype=int)
    img = np.array([fmap[int(w)] for w in dom], dtype=int)
    if dom.size < 2:
        return 0.0
    return float(np.abs(right.dist[np.ix_(img, img)] - left.dist[np.ix_(dom, dom)]).max())


def eps_isometry_from_subsets(host: PointedSpace, A, B, eps: float) -> EpsIsometry:
    """Match window points of A to points of B within eps (needs H_z(A,B) < eps).

    The returned map, A-indices to B-indices, is a 2eps-isometry of the
    subspaces based at the host basepoint.
    """
    A = np.unique(np.asarray(list(A), dtype=int))
    B = np.unique(np.asarray(list(B), dtype=int))
    z = host.base
    if z not in A or z not in B:
        raise DomainError("both subsets must contain the host basepoint")
    hz = local_hausdorff(host, A, B)
    if not (hz < eps and eps < 0.5):
        raise NoConstruction(f"needs H_z < eps < 1/2, got H_z={hz:.6g}, eps={eps}")
    dom = A[host.dist[z, A] <= 1.0 / (2 * eps) + TOL]
    fmap = {}
    for w in dom:
        w = int(w)
        if w == z:
            fmap[w] = z
            continue
        dd = host.dist[w, B]
        fmap[w] = int(B[int(np.argmin(dd))])
    return EpsIsometry(2 * eps, fmap, "from_hausdorff")


def eps_isometry_from_hausdorff(cp: Coupling, eps: float) -> EpsIsometry:
    """Same construction on a coupling; result maps left indices to right indices."""
    host = cp.host()
    d = host.dist
    A, B = cp.left_idx, cp.right_idx
    hz = local_hausdorff(host, A, B)
    if not (hz < eps and eps < 0.5):
        raise NoConstruction(f"needs H_z < eps < 1/2, got H_z={hz:.6g}, eps={eps}")
    z = cp.left.base
    dom = A[d[z, A] <= 1.0 / (2 * eps) + TOL]
    fmap = {}
    for w in dom:
        w = int(w)
        if w == z:
            fmap[w] = cp.right.base
        else:
            fmap[w] = int(np.argmin(d[w, B]))
    return EpsIsometry(2 * eps, fmap, "from_hausdorff")


def _quotient_cross(left: PointedSpace, right: PointedSpace, fmap: dict, eta: float) -> np.ndarray:
    dom = np.array(sorted(fmap), dtype=int)
    img = np.array([fmap[int(w)] for w in dom], dtype=int)
    # zeta(i, j) = min_w d(i, w) + rho(f(w), j) + eta
    dl = left.dist[:, dom]
    dr = right.dist[img]
    zeta = np.empty((left.n_points, right.n_points))
    step = max(1, int(2e6 // max(1, dom.size * right.n_points)))
    for i0 in range(0, left.n_points, step):
        zeta[i0:i0 + step] = (dl[i0:i0 + step, :, None] + dr[None]).min(axis=1)
    zeta += eta
    wedge = left.dist[:, left.base][:, None] + right.dist[right.base][None, :]
    return np.minimum(zeta, wedge)


def coupling_from_map(left: PointedSpace, right: PointedSpace, fmap: dict, eta: float | None = None,
                      check: bool = True) -> Coupling:
    """Glue along a base-preserving map with slack eta >= distortion, then identify basepoints."""
    if fmap.get(left.base) != right.base:
        raise DomainError("map must send base to base")
    dis = distortion(left, right, fmap)
    if eta is None:
        eta = dis
    if eta < dis - 1e-12:
        raise DomainError("slack must dominate the distortion")
    cp = Coupling(left, right, _quotient_cross(left, right, fmap, eta))
    if check:
        bad = cp.violations()
        if bad:
            raise InvalidCoupling("; ".join(bad))
    return cp


def coupling_from_eps_isometry(left: PointedSpace, right: PointedSpace, iso: EpsIsometry) -> Coupling:
    ok, bad = check_eps_isometry(left, right, iso)
    if not ok:
        raise DomainError("invalid eps-isometry: " + "; ".join(bad))
    fmap = {int(w): int(iso.map[int(w)]) for w in _domain(left, iso.eps)}
    return coupling_from_map(left, right, fmap, iso.eps)


def tight_coupling(left: PointedSpace, right: PointedSpace, iso: EpsIsometry) -> Coupling:
    """Glue along the iso's map on its domain with slack equal to the actual distortion."""
    fmap = {int(w): int(iso.map[int(w)]) for w in _domain(left, iso.eps)}
    return coupling_from_map(left, right, fmap)


def wedge_coupling(left: PointedSpace, right: PointedSpace) -> Coupling:
    return coupling_from_map(left, right, {left.base: right.base}, 0.0)


def repair_cross(left: PointedSpace, right: PointedSpace, cross: np.ndarray, sweeps: int = 100):
    """Iterated max-plus projection toward the triangle-inequality polytope.

    Returns (cross, converged).  Non-convergence within `sweeps` is reported, not hidden.
    """
    dX, dY = left.dist, right.dist
    C = np.array(cross, dtype=float)
    lo = np.abs(dX[:, left.base][:, None] - dY[right.base][None, :])
    hi = dX[:, left.base][:, None] + dY[right.base][None, :]
    for _ in range(sweeps):
        old = C.copy()
        C = np.minimum(C, (dX[:, :, None] + C[None, :, :]).min(axis=1))
        C = np.minimum(C, (C[:, :, None] + dY[None, :, :]).min(axis=1))
        C = np.maximum(C, (dX[:, :, None] - C[None, :, :]).max(axis=1))
        C = np.maximum(C, (dY[None, :, :] - C[:, :, None]).max(axis=1))
        C = np.clip(C, lo, hi)
        C[left.base, right.base] = 0.0
        if np.abs(C - old).max() <= 1e-13:
            cp = Coupling(left, right, C)
            return C, not cp.violations()
    return C, False


# ------------------------------------------------------------ exact epsilon scan

def _s_window(rho):
    return (-rho + np.sqrt(rho * rho + 4.0)) / 2.0


def candidate_eps(left: PointedSpace, right: PointedSpace) -> np.ndarray:
    dX, dY = left.dist, right.dist
    iu = np.triu_indices(left.n_points, 1)
    ju = np.triu_indices(right.n_points, 1)
    a = np.r_[0.0, dX[iu]]
    b = np.r_[0.0, dY[ju]]
    parts = [np.abs(a[:, None] - b[None, :]).ravel(), dY.ravel()]
    rx = dX[left.base]
    parts.append(1.0 / rx[rx > 0])
    parts.append(_s_window(dY[right.base]))
    c = np.concatenate(parts)
    c = np.unique(np.round(c[c > 0], 13))
    return c


def find_eps_isometry(left: PointedSpace, right: PointedSpace, eps: float, tol: float = TOL):
    """Backtracking search for an eps-isometry; returns the map or None."""
    dX, dY = left.dist, right.dist
    x, y = left.base, right.base
    dom = _domain(left, eps)
    win = _window(right, eps)
    others = [int(w) for w in dom if w != x]
    base_ok = np.abs(dY[y][None, :] - dX[x, others][:, None]) <= eps + tol
    if others and not base_ok.any(axis=1).all():
        return None
    near = dY <= eps + tol
    # coverage pruning: every window point must be reachable
    domains = {w: base_ok[k].copy() for k, w in enumerate(others)}
    reach = near[y].copy()
    for w in others:
        reach |= near[:, domains[w]].any(axis=1)
    if win.size and not reach[win].all():
        return None
    order = sorted(others, key=lambda w: (int(domains[w].sum()), w))
    assign = {x: y}

    def coverable(doms, depth):
        cov = near[:, list(assign.values())].any(axis=1)
        for w in order[depth:]:
            cov |= near[:, doms[w]].any(axis=1)
        return bool(cov[win].all()) if win.size else True

    def rec(depth, doms):
        if depth == len(order):
            return dict(assign)
        w = order[depth]
        cands = np.flatnonzero(doms[w])
        key = np.abs(dY[y, cands] - dX[x, w])
        for t in cands[np.lexsort((cands, key))]:
            t = int(t)
            assign[w] = t
            nd = dict(doms)
            ok = True
            for v in order[depth + 1:]:
                m = doms[v] & (np.abs(dY[t] - dX[w, v]) <= eps + tol)
                if not m.any():
                    ok = False
                    break
                nd[v] = m
            if ok and coverable(nd, depth + 1):
                res = rec(depth + 1, nd)
                if res is not None:
                    return res
            del assign[w]
        return None

    return rec(0, domains)


def best_eps_isometry(left: PointedSpace, right: PointedSpace, tol: float = TOL):
    """Exact inf{eps : an eps-isometry exists} by scanning critical values.

    Returns (inf_eps, EpsIsometry at a feasible eps >= inf_eps, attained).
    """
    cands = candidate_eps(left, right)
    # feasibility is constant between consecutive critical values, including (0, c_0)
    if cands.size:
        f = find_eps_isometry(left, right, cands[0] / 2, tol)
        if f is not None:
            return 0.0, EpsIsometry(float(cands[0] / 2), f, "searched"), False
    for k, c in enumerate(cands):
        f = find_eps_isometry(left, right, c, tol)
        if f is not None:
            return float(c), EpsIsometry(float(c), f, "searched"), True
        nxt = cands[k + 1] if k + 1 < len(cands) else 2 * c + 1.0
        mid = 0.5 * (c + nxt)
        f = find_eps_isometry(left, right, mid, tol)
        if f is not None:
            return float(c), EpsIsometry(float(mid), f, "searched"), False
    raise RuntimeError("no eps-isometry found at any critical value")  # unreachable: large eps is trivial


# ------------------------------------------------------------ radial lower bounds

def _radial_host(left: PointedSpace, right: PointedSpace):
    r = np.r_[left.dist[left.base], right.dist[right.base]]
    host = PointedSpace(np.abs(r[:, None] - r[None, :]), left.base)
    nl = left.n_points
    return host, np.arange(nl), nl + np.arange(right.n_points)


def radial_dpgh_lower(left: PointedSpace, right: PointedSpace) -> float:
    """H_0 between distance-to-base profiles; distance to the base is 1-Lipschitz in any host."""
    host, A, B = _radial_host(left, right)
    return local_hausdorff(host, A, B)


def radial_dstar_lower(left: MeasuredSpace, right: MeasuredSpace, tol=1e-6) -> float:
    """Flat distance between the pushforwards of mu, nu to the line by distance to base."""
    host, A, B = _radial_host(left, right)
    a = np.zeros(host.n_points)
    b = np.zeros(host.n_points)
    a[A] = left.weight
    b[B] = right.weight
    v = FlatSolver(host, a, b).flat(tol)
    # the threshold search returns an upper end of a tol-bracket
    return max(0.0, v - tol)


# ------------------------------------------------------------ map search

def _radial_map(left: PointedSpace, right: PointedSpace) -> dict:
    rx, ry = left.dist[left.base], right.dist[right.base]
    f = {}
    for w in range(left.n_points):
        gap = np.abs(ry - rx[w])
        f[w] = int(np.lexsort((np.arange(len(ry)), gap))[0])
    f[left.base] = right.base
    return f


def _cutoffs(left: PointedSpace, k: int = 8) -> np.ndarray:
    r = np.unique(left.dist[left.base])
    if len(r) > k:
        r = np.unique(np.r_[r[np.linspace(0, len(r) - 1, k).round().astype(int)], r[-1]])
    return r


def _couplings_of_map(left, right, f, cutoffs):
    for R in cutoffs:
        sub = {w: t for w, t in f.items() if left.dist[left.base, w] <= R + TOL}
        yield coupling_from_map(left, right, sub, check=False)


class _Search:
    """Local search over base-preserving maps; objective evaluated on glued couplings."""

    def __init__(self, left, right, objective, budget, seed):
        self.left, self.right = left, right
        self.obj = objective
        self.budget = budget
        self.used = 0
        self.rng = np.random.default_rng(seed)
        self.best = (np.inf, None)
        self.cut = _cutoffs(left)

    def score(self, f):
        best = (np.inf, None)
        for cp in _couplings_of_map(self.left, self.right, f, self.cut):
            if self.used >= self.budget:
                break
            self.used += 1
            v = self.obj(cp)
            if v < best[0]:
                best = (v, cp)
        if best[0] < self.best[0]:
            self.best = best
        return best[0]

    def run(self, starts):
        nl, nr = self.left.n_points, self.right.n_points
        for f in starts:
            cur = self.score(f)
            improved = True
            while improved and self.used < self.budget:
                improved = False
                for w in self.rng.permutation(nl):
                    w = int(w)
                    if w == self.left.base:
                        continue
                    for t in self.rng.permutation(nr):
                        t = int(t)
                        if t == f[w]:
                            continue
                        g = dict(f)
                        g[w] = t
                        v = self.score(g)
                        if v < cur - 1e-12:
                            f, cur, improved = g, v, True
                            break
                        if self.used >= self.budget:
                            break
                    if self.used >= self.budget:
                        break
        return self.best, self.used >= self.budget


def _starts(left, right, rng, k):
    f0 = _radial_map(left, right)
    out = [f0]
    for _ in range(k):
        f = {w: int(rng.integers(right.n_points)) for w in range(left.n_points)}
        f[left.base] = right.base
        out.append(f)
    return out


def _exact_ok(left, right, limit=10):
    return left.n_points <= limit and right.n_points <= limit


# ------------------------------------------------------------ estimates

def estimate_dpgh(left: PointedSpace, right: PointedSpace, budget: int = 400, mode: str = "auto",
                  seed: int = 0) -> DistanceEstimate:
    if mode == "auto":
        mode = "exact_small" if _exact_ok(left, right) else "local_search"
    lower = radial_dpgh_lower(left, right)
    found = [wedge_coupling(left, right)]
    info = {}
    if mode == "exact_small":
        best, iso, attained = best_eps_isometry(left, right)
        found.append(tight_coupling(left, right, iso))
        lower = max(lower, min(best / 2, 0.5))
        info.update(best_eps=best, best_eps_attained=attained, iso_eps=iso.eps)
        inconclusive = False
    else:
        srch = _Search(left, right, lambda c: c.hz(), budget, seed)
        (v, cp), inconclusive = srch.run(_starts(left, right, srch.rng, 3))
        if cp is not None:
            found.append(cp)
        info["evaluations"] = srch.used
    vals = [c.hz() for c in found]
    k = int(np.argmin(vals))
    upper = float(vals[k])
    if mode == "exact_small":
        info["sandwich_upper"] = min(2 * info["best_eps"], 0.5)
    witness = found[k]
    if witness.violations():
        raise InvalidCoupling("witness coupling failed validation")
    return DistanceEstimate(min(lower, upper), upper, mode, witness, inconclusive, info)


def estimate_dstar(left: MeasuredSpace, right: MeasuredSpace, budget: int = 40, mode: str = "auto",
                   seed: int = 0, couplings=None, tol: float = 1e-6) -> DistanceEstimate:
    return _estimate_measured(left, right, budget, mode, seed, couplings, tol, a=0.0)


def estimate_dpmgh(left: MeasuredSpace, right: MeasuredSpace, budget: int = 40, mode: str = "auto",
                   seed: int = 0, couplings=None, tol: float = 1e-6) -> DistanceEstimate:
    return _estimate_measured(left, right, budget, mode, seed, couplings, tol, a=1.0)


def _estimate_measured(left, right, budget, mode, seed, couplings, tol, a):
    if mode == "auto":
        mode = "exact_small" if _exact_ok(left, right) else "local_search"
    mu, nu = left.weight, right.weight

    def obj(cp):
        f = cp.fz(mu, nu, tol)
        return (a * cp.hz() if a else 0.0) + f

    found = list(couplings or [])
    found.append(wedge_coupling(left, right))
    info = {}
    inconclusive = False
    lower = radial_dstar_lower(left, right, tol)
    if a:
        lower = max(lower, radial_dpgh_lower(left, right))
    if mode == "exact_small" and couplings is None:
        best, iso, _ = best_eps_isometry(left, right)
        found.append(tight_coupling(left, right, iso))
        if a:
            lower = max(lower, min(best / 2, 0.5))
        info["best_eps"] = best
    if mode != "given" and couplings is None:
        srch = _Search(left, right, obj, budget, seed)
        (v, cp), inconclusive = srch.run(_starts(left, right, srch.rng, 1))
        if cp is not None:
            found.append(cp)
        info["evaluations"] = srch.used
    vals = [obj(c) for c in found]
    k = int(np.argmin(vals))
    upper = float(vals[k])
    witness = found[k]
    if witness.violations():
        raise InvalidCoupling("witness coupling failed validation")
    if a:
        info["hz"] = witness.hz()
    info["fz"] = witness.fz(mu, nu, tol)
    method = mode if mode != "auto" else "local_search"
    return DistanceEstimate(min(lower, upper), upper, method, witness, inconclusive, info)


# ------------------------------------------------------------ large subsets

def extract_large_subsets(host: PointedSpace, mu, nu, left_idx, right_idx, r: float, eps: float,
                          delta: float = 1e-3) -> LargeSubsetPair:
    """Carve K_mu, K_nu out of the supports inside B(z, r) using the 1/eps-Lipschitz bump.

    K'_mu = spt mu within B(z, r);  tilde K_mu = (K'_mu within U(z, r - eps)) minus B(K'_nu, eps);
    K_mu = K'_mu minus tilde K_mu (and symmetrically).  The basepoint is added to both sets.
    """
    if not r - eps > 0:
        raise DomainError("need r > eps")
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    d = host.dist
    z = host.base
    left_idx = np.asarray(left_idx, dtype=int)
    right_idx = np.asarray(right_idx, dtype=int)
    inball = d[z] <= r + TOL
    inopen = d[z] < r - eps - TOL
    sol = FlatSolver(host, mu, nu).solve(1.0 / eps, r)
    F = sol.value
    kp_mu = np.flatnonzero((mu > 0) & inball)
    kp_nu = np.flatnonzero((nu > 0) & inball)

    def carve(kp, kq):
        if kp.size == 0:
            return kp
        if kq.size == 0:
            far = np.ones(kp.size, dtype=bool)
        else:
            far = d[np.ix_(kp, kq)].min(axis=1) > eps + TOL
        return kp[far & inopen[kp]]

    tilde_mu = carve(kp_mu, kp_nu)
    tilde_nu = carve(kp_nu, kp_mu)
    k_mu = np.union1d(np.setdiff1d(kp_mu, tilde_mu), [z]).astype(int)
    k_nu = np.union1d(np.setdiff1d(kp_nu, tilde_nu), [z]).astype(int)
    def_mu = float(mu[inball].sum() - mu[np.intersect1d(k_mu, np.flatnonzero(inball))].sum())
    def_nu = float(nu[inball].sum() - nu[np.intersect1d(k_nu, np.flatnonzero(inball))].sum())

    def bump(tilde):
        if tilde.size == 0:
            return np.zeros(host.n_points)
        return 1.0 - np.minimum(d[:, tilde].min(axis=1), eps) / eps

    g_mu = bump(tilde_mu)
    g_nu = bump(tilde_nu)
    integral = max(float(g_mu @ (mu - nu)), float(g_nu @ (nu - mu)))
    hz = local_hausdorff(host, k_mu, k_nu)
    hz_bound = max(1.0 / (r - eps), eps)
    cap = (1 + delta) * F
    checks = {
        "x_sm_mea": (def_mu < cap and def_nu < cap) if F > 0 else (def_mu <= TOL and def_nu <= TOL),
        "k_mu_hd": hz <= hz_bound + TOL,
        "bump_feasible": integral <= F + 1e-8,
        "bump_dominates_carved": float(mu[tilde_mu].sum()) <= float(g_mu @ (mu - nu)) + 1e-9
        and float(nu[tilde_nu].sum()) <= float(g_nu @ (nu - mu)) + 1e-9,
    }
    return LargeSubsetPair(k_mu, k_nu, def_mu, def_nu, F, hz, hz_bound, integral,
                           float(mu[tilde_mu].sum() + nu[tilde_nu].sum()), checks)


def restriction_bound(host: PointedSpace, mu, keep, grid=None) -> float:
    """inf{t : mu(B(z, 1/t) minus keep) < t}, an upper bound for d_*(mu, mu|keep)."""
    mu = np.asarray(mu, dtype=float)
    out = np.ones(host.n_points, dtype=bool)
    out[np.asarray(keep, dtype=int)] = False
    dz = host.dist[host.base]
    lo, hi = 0.0, 0.5
    if mu[out].sum() == 0:
        return 0.0

    def ok(t):
        return mu[out & (dz <= 1.0 / t + TOL)].sum() < t

    if not ok(hi - 1e-12):
        return 0.5
    for _ in range(60):
        m = 0.5 * (lo + hi)
        if ok(m):
            hi = m
        else:
            lo = m
    return hi


def dstar_sandwich(left: MeasuredSpace, right: MeasuredSpace, eps: float, coupling: Coupling | None = None,
                   budget: int = 40, seed: int = 0, delta: float = 1e-3, tol: float = 1e-6) -> dict:
    """Both directions of the subset characterisation of d_* at level eps, certified by couplings."""
    if not 0 < eps < 0.5:
        raise DomainError("eps must lie in (0, 1/2)")
    mu, nu = left.weight, right.weight
    if coupling is None:
        est = estimate_dstar(left, right, budget=budget, seed=seed)
        coupling = est.witness
    host = coupling.host()
    a, b = coupling.carry(mu, nu)
    solver = FlatSolver(host, a, b)
    v = solver.flat(tol)
    rep = {"eps": eps, "coupling_flat": v}
    if not v < eps:
        rep["status"] = "inconclusive"
        return rep
    lsp = extract_large_subsets(host, a, b, coupling.left_idx, coupling.right_idx, 1.0 / eps, eps, delta)
    z = host.base
    win = host.dist[z] <= 1.0 / eps + TOL
    dm = float(a[win].sum() - a[np.intersect1d(lsp.k_mu, np.flatnonzero(win))].sum())
    dn = float(b[win].sum() - b[np.intersect1d(lsp.k_nu, np.flatnonzero(win))].sum())
    keep = np.union1d(lsp.k_mu, lsp.k_nu)
    sub, idx = PointedSpace.sub(host, keep)
    pos = {int(j): k for k, j in enumerate(idx)}
    km = np.array([pos[int(j)] for j in lsp.k_mu])
    kn = np.array([pos[int(j)] for j in lsp.k_nu])
    am = np.zeros(len(idx))
    bn = np.zeros(len(idx))
    am[km] = a[lsp.k_mu]
    bn[kn] = b[lsp.k_nu]
    hz_k = local_hausdorff(sub, km, kn)
    fz_k = FlatSolver(sub, am, bn).flat(tol)
    pm_upper = hz_k + fz_k
    rep.update(
        k_mu=lsp.k_mu.tolist(), k_nu=lsp.k_nu.tolist(),
        defect_mu=dm, defect_nu=dn, hz_subsets=hz_k, fz_subsets=fz_k, pmgh_upper=pm_upper,
        lemma_checks=lsp.checks,
        pmgh_small_meas=max(dm, dn) < eps,
        pmgh_conc1=pm_upper < 3 * eps,
    )
    # converse: small defects and small d_* of the subsets give d_* < 3 eps
    if max(dm, dn) < eps and fz_k < eps:
        full = v
        am_full = np.zeros(host.n_points)
        bn_full = np.zeros(host.n_points)
        am_full[lsp.k_mu] = a[lsp.k_mu]
        bn_full[lsp.k_nu] = b[lsp.k_nu]
        rb_mu = restriction_bound(host, a, lsp.k_mu)
        rb_nu = restriction_bound(host, b, lsp.k_nu)
        rep.update(
            converse_applicable=True,
            converse_dstar_upper=full,
            converse_holds=full < 3 * eps,
            restriction_bound_mu=rb_mu,
            restriction_bound_nu=rb_nu,
            restriction_actual_mu=FlatSolver(host, a, am_full).flat(tol),
            restriction_actual_nu=FlatSolver(host, b, bn_full).flat(tol),
        )
    else:
        rep["converse_applicable"] = False
    ok = rep["pmgh_small_meas"] and rep["pmgh_conc1"] and all(lsp.checks.values())
    if rep.get("converse_applicable"):
        ok = ok and rep["converse_holds"]
    rep["status"] = "pass" if ok else "fail"
    return rep


# ------------------------------------------------------------ doubling

def doubling_violation(s: MeasuredSpace, k: float, scales) -> tuple | None:
    """First (point, radius, ratio) with mu(B(p, 2r)) > 2^k mu(B(p, r)), or None."""
    d = s.dist
    w = s.weight
    for r in scales:
        m1 = (d <= r + TOL) @ w
        m2 = (d <= 2 * r + TOL) @ w
        bad = m2 > (2.0 ** k) * m1 * (1 + 1e-12) + 1e-15
        if bad.any():
            p = int(np.flatnonzero(bad)[0])
            return p, float(r), float(m2[p] / m1[p]) if m1[p] > 0 else math.inf
    return None


def default_scales(s: PointedSpace, anchor: float) -> np.ndarray:
    pos = s.dist[s.dist > 0]
    if pos.size == 0:
        return np.array([anchor])
    j0 = math.floor(math.log2(pos.min() / anchor))
    j1 = math.ceil(math.log2(pos.max() / anchor))
    return anchor * 2.0 ** np.arange(j0, j1 + 1)


def doubling_bound_value(R, eps, delta, k) -> float:
    return 4 * R * (eps / delta) ** (1.0 / k) + eps


def doubling_subset_bound(s: MeasuredSpace, subset, R: float, delta: float, k: float, scales=None,
                          tol: float = 1e-6) -> dict:
    subset = np.asarray(list(subset), dtype=int)
    if s.base not in subset:
        raise DomainError("subset must contain the basepoint")
    scales = default_scales(s, R) if scales is None else scales
    bad = doubling_violation(s, k, scales)
    if bad is not None:
        p, r, ratio = bad
        raise Inapplicable(f"not 2^{k}-doubling: mu(B({p},{2 * r:g}))/mu(B({p},{r:g})) = {ratio:.4g}")
    dz = s.dist[s.base]
    mR = float(s.weight[dz <= R + TOL].sum())
    if mR < delta:
        raise Inapplicable(f"mu(B(x,R)) = {mR:.6g} < delta = {delta}")
    out = np.ones(s.n_points, dtype=bool)
    out[subset] = False
    eps = float(s.weight[out & (dz <= 2 * R + TOL)].sum())
    if eps >= 0.5:
        raise Inapplicable(f"mu(B(x,2R) minus S) = {eps:.6g} is not below 1/2")
    if eps == 0:
        bound = 0.0
    else:
        h = 4 * R * (eps / delta) ** (1.0 / k)
        if not R > 1.0 / h:
            raise Inapplicable(f"radius condition fails: R = {R} <= 1/(4R(eps/delta)^(1/k)) = {1.0 / h:.6g}")
        bound = h + eps
    hz = local_hausdorff(s, np.arange(s.n_points), subset)
    kept = np.zeros(s.n_points)
    kept[subset] = s.weight[subset]
    fz = FlatSolver(s, s.weight, kept).flat(tol)
    est = hz + fz
    return {"bound": bound, "eps": eps, "mass_R": mR, "identity_hz": hz, "identity_fz": fz,
            "identity_upper": est, "holds": est <= bound + tol}


def identity_pmgh_upper(s: MeasuredSpace, subset, tol: float = 1e-6) -> float:
    subset = np.asarray(list(subset), dtype=int)
    kept = np.zeros(s.n_points)
    kept[subset] = s.weight[subset]
    return local_hausdorff(s, np.arange(s.n_points), subset) + FlatSolver(s, s.weight, kept).flat(tol)


def pushforward(fmap: dict, mu, n_right: int) -> np.ndarray:
    """f_# of mu restricted to the domain of f, as a right-side weight vector."""
    out = np.zeros(n_right)
    for w, t in fmap.items():
        out[t] += mu[w]
    return out
