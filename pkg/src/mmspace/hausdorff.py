"""Pointed local Hausdorff distance H_z between subsets of a host."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TOL, DomainError, PointedSpace


@dataclass
class HausdorffResult:
    value: float
    critical_eps: float
    critical_point: int | None
    side: str | None


def _idx(host: PointedSpace, S) -> np.ndarray:
    S = np.unique(np.asarray(list(S), dtype=int))
    if S.size == 0:
        raise DomainError("empty index set")
    if S.min() < 0 or S.max() >= host.n_points:
        raise DomainError("index out of range")
    return S


def neighborhood(host: PointedSpace, S, r: float, tol: float = TOL) -> np.ndarray:
    """B(S, r) = {i : d(i, S) <= r}."""
    if r < 0:
        raise DomainError("radius must be nonnegative")
    S = _idx(host, S)
    return np.flatnonzero(host.dist[:, S].min(axis=1) <= r + tol)


def point_thresholds(host: PointedSpace, A, B) -> np.ndarray:
    """For a in A, the least eps at which a stops obstructing A cap B(z,1/eps) in B(B,eps).

    a is harmless once eps >= d(a, B) or eps > 1/d(z, a), so its threshold is
    min(d(a, B), 1/d(z, a)).  Feasibility is upward closed in eps.
    """
    A, B = _idx(host, A), _idx(host, B)
    dab = host.dist[np.ix_(A, B)].min(axis=1)
    dz = host.dist[host.base, A]
    with np.errstate(divide="ignore"):
        inv = np.where(dz > 0, 1.0 / np.where(dz > 0, dz, 1.0), np.inf)
    return np.minimum(dab, inv)


def local_hausdorff_detail(host: PointedSpace, A, B) -> HausdorffResult:
    A, B = _idx(host, A), _idx(host, B)
    ta = point_thresholds(host, A, B)
    tb = point_thresholds(host, B, A)
    ia, ib = int(ta.argmax()), int(tb.argmax())
    if ta[ia] >= tb[ib]:
        crit, pt, side = float(ta[ia]), int(A[ia]), "left"
    else:
        crit, pt, side = float(tb[ib]), int(B[ib]), "right"
    if crit <= 0:
        return HausdorffResult(0.0, 0.0, None, None)
    return HausdorffResult(min(crit, 0.5), crit, pt, side)


def local_hausdorff(host: PointedSpace, A, B) -> float:
    """inf{eps in (0,1/2) : A cap B(z,1/eps) in B(B,eps) and vice versa}, or 1/2."""
    return local_hausdorff_detail(host, A, B).value


def contained(host: PointedSpace, A, B, eps: float, tol: float = TOL) -> bool:
    """Literal check of A cap B(z, 1/eps) subset of B(B, eps) (closed balls)."""
    A, B = _idx(host, A), _idx(host, B)
    win = A[host.dist[host.base, A] <= 1.0 / eps + tol]
    if win.size == 0:
        return True
    return bool(np.all(host.dist[np.ix_(win, B)].min(axis=1) <= eps + tol))
