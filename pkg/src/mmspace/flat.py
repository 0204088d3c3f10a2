"""Bounded-Lipschitz flat distances between atomic measures on a common host.

F^{L,r}(mu, nu) = max sum_i g_i (mu_i - nu_i) over g with |g| <= 1, L-Lipschitz
and g = 0 off the closed ball B(base, r).  Solved with HiGHS; large hosts start
from a nearest-neighbour constraint set and add violated pairs until the
witness is Lipschitz on every pair (exact, just cheaper).
"""
from __future__ import annotations

from dataclasses import dataclass

import highspy
import numpy as np

from .core import TOL, DomainError, PointedSpace

DUP_TOL = 1e-12
LIP_TOL = 1e-10
DENSE_LIMIT = 48
KNN = 10


class SolverError(RuntimeError):
    pass


@dataclass
class FlatSolution:
    value: float
    witness: np.ndarray
    active: np.ndarray
    L: float
    r: float
    feasibility_tol: float = LIP_TOL


def _merge_duplicates(d: np.ndarray) -> np.ndarray:
    """Representative index (smallest) of each zero-distance class."""
    n = d.shape[0]
    rep = np.arange(n)
    close = d <= DUP_TOL
    for i in range(n):
        if rep[i] != i:
            continue
        js = np.flatnonzero(close[i])
        rep[js[js > i]] = np.minimum(rep[js[js > i]], i)
    return rep


class FlatSolver:
    """Reusable LP for one (host, mu, nu); solve() may be called for many (L, r)."""

    def __init__(self, host: PointedSpace, mu, nu):
        d = np.asarray(host.dist, dtype=float)
        mu = np.asarray(mu, dtype=float)
        nu = np.asarray(nu, dtype=float)
        if mu.shape != (d.shape[0],) or nu.shape != (d.shape[0],):
            raise DomainError("measure length must match host size")
        if np.any(mu < 0) or np.any(nu < 0):
            raise DomainError("measures must be nonnegative")
        self.n = d.shape[0]
        rep = _merge_duplicates(d)
        reps, inv = np.unique(rep, return_inverse=True)
        self.inv = inv
        self.D = d[np.ix_(reps, reps)]
        self.m = len(reps)
        self.c = np.zeros(self.m)
        np.add.at(self.c, inv, mu - nu)
        self.scale = max(mu.sum(), nu.sum(), 1e-300)
        self.zero = bool(np.all(np.abs(self.c) <= 1e-15 * self.scale))
        self.dz = self.D[inv[host.base]]
        self.tv = float(np.abs(self.c).sum())
        self._h = None
        self._edges = set()

    # -- model management
    def _initial_edges(self):
        m = self.m
        if m <= DENSE_LIMIT:
            iu, ju = np.triu_indices(m, 1)
            return list(zip(iu.tolist(), ju.tolist()))
        k = min(KNN, m - 1)
        nb = np.argpartition(self.D, k, axis=1)[:, : k + 1]
        edges = set()
        for i in range(m):
            for j in nb[i]:
                if i != j:
                    edges.add((min(i, int(j)), max(i, int(j))))
        return sorted(edges)

    def _build(self):
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("threads", 1)
        h.setOptionValue("primal_feasibility_tolerance", 1e-10)
        h.setOptionValue("dual_feasibility_tolerance", 1e-10)
        lp = highspy.HighsLp()
        lp.num_col_ = self.m
        lp.num_row_ = 0
        lp.col_cost_ = -self.c
        lp.col_lower_ = -np.ones(self.m)
        lp.col_upper_ = np.ones(self.m)
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = np.zeros(self.m + 1, dtype=np.int32)
        lp.a_matrix_.index_ = np.zeros(0, dtype=np.int32)
        lp.a_matrix_.value_ = np.zeros(0)
        h.passModel(lp)
        self._h = h
        self._rows = []
        self._add_edges(self._initial_edges(), 1.0)

    def _add_edges(self, edges, L):
        edges = [e for e in edges if e not in self._edges]
        if not edges:
            return
        k = len(edges)
        ii = np.array([e[0] for e in edges])
        jj = np.array([e[1] for e in edges])
        dd = L * self.D[ii, jj]
        starts = np.arange(0, 2 * k, 2, dtype=np.int32)
        idx = np.empty(2 * k, dtype=np.int32)
        idx[0::2], idx[1::2] = ii, jj
        val = np.tile([1.0, -1.0], k)
        self._h.addRows(k, -dd, dd, 2 * k, starts, idx, val)
        self._edges.update(edges)
        self._rows.extend(edges)

    def solve(self, L: float, r: float) -> FlatSolution:
        if not (L > 0 and r > 0):
            raise DomainError("L and r must be positive")
        inball = self.dz <= r + TOL
        act = np.flatnonzero(inball)
        g = np.zeros(self.m)
        if self.zero or not np.any(np.abs(self.c[act]) > 0):
            return self._pack(g, act, L, r)
        if self._h is None:
            self._build()
        out = ~inball
        if out.any():
            bound = np.minimum(1.0, L * self.D[:, out].min(axis=1))
        else:
            bound = np.ones(self.m)
        bound[out] = 0.0
        self._h.changeColsBounds(self.m, np.arange(self.m, dtype=np.int32), -bound, bound)
        for _ in range(50):
            rows = self._rows
            if rows:
                ii = np.array([e[0] for e in rows], dtype=int)
                jj = np.array([e[1] for e in rows], dtype=int)
                dd = L * self.D[ii, jj]
                self._h.changeRowsBounds(len(rows), np.arange(len(rows), dtype=np.int32), -dd, dd)
            self._h.run()
            st = self._h.getModelStatus()
            if st != highspy.HighsModelStatus.kOptimal:
                raise SolverError(f"LP status {self._h.modelStatusToString(st)}")
            g = np.clip(np.asarray(self._h.getSolution().col_value), -bound, bound)
            ga = g[act]
            viol = np.abs(ga[:, None] - ga[None, :]) - L * self.D[np.ix_(act, act)]
            bad = np.argwhere(np.triu(viol > LIP_TOL, 1))
            if len(bad) == 0:
                break
            self._add_edges([(int(act[a]), int(act[b])) for a, b in bad], L)
        else:
            raise SolverError("constraint generation did not converge")
        return self._pack(g, act, L, r)

    def _pack(self, g, act, L, r):
        full = g[self.inv]
        value = float(np.dot(self.c, g))
        active = np.flatnonzero(np.isin(self.inv, act))
        return FlatSolution(value, full, active, L, r)

    def value(self, L, r) -> float:
        return self.solve(L, r).value

    # -- thresholds
    def threshold(self, phi, tol=1e-6, extra=None) -> float:
        """inf{eps in (0, 1/2) : phi(eps) + extra(eps) < eps}; phi nonincreasing in eps."""
        if self.zero and extra is None:
            return 0.0

        def h(e):
            v = phi(e) + (0.0 if extra is None else extra(e))
            return v - e

        top = 0.5 - tol / 10
        h_hi = h(top)
        if h_hi >= 0:
            return 0.5
        lo, hi = 0.0, top
        h_lo = self.tv + (0.0 if extra is None else 0.0)
        if h_lo <= 0:
            h_lo = 1e-300
        side = 0
        it = 0
        while hi - lo > tol:
            it += 1
            if it % 3 == 0:
                x = 0.5 * (lo + hi)
            else:
                x = hi - h_hi * (hi - lo) / (h_hi - h_lo)
                w = hi - lo
                x = min(max(x, lo + 0.05 * w), hi - 0.05 * w)
            hx = h(x)
            if hx < 0:
                hi, h_hi = x, hx
                if side == -1:
                    h_lo *= 0.5
                side = -1
            else:
                lo, h_lo = x, max(hx, 1e-300)
                if side == 1:
                    h_hi *= 0.5
                side = 1
            if it > 200:
                break
        return hi

    def flat_L(self, L, tol=1e-6, extra=None) -> float:
        return self.threshold(lambda e: self.value(L, 1.0 / e), tol, extra)

    def flat(self, tol=1e-6, extra=None) -> float:
        return self.threshold(lambda e: self.value(1.0 / e, 1.0 / e), tol, extra)


def flat_Lr(host: PointedSpace, mu, nu, L: float, r: float) -> FlatSolution:
    return FlatSolver(host, mu, nu).solve(L, r)


def flat_L(host: PointedSpace, mu, nu, L: float, tol: float = 1e-6) -> float:
    if L <= 0:
        raise DomainError("L must be positive")
    return FlatSolver(host, mu, nu).flat_L(L, tol)


def flat(host: PointedSpace, mu, nu, tol: float = 1e-6) -> float:
    return FlatSolver(host, mu, nu).flat(tol)


def restriction_defect(host: PointedSpace, mu, keep, r: float) -> float:
    """mu(B(base, r) minus keep): right-hand side of the restriction bound."""
    mu = np.asarray(mu, dtype=float)
    inball = host.dist[host.base] <= r + TOL
    drop = np.ones(host.n_points, dtype=bool)
    drop[np.asarray(list(keep), dtype=int)] = False
    return float(mu[inball & drop].sum())
