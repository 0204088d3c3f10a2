"""Finite pointed (measured) metric spaces and elementary operations."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

TOL = 1e-9
TRIANGLE_TOL = 1e-12

NORMS = {"linf": "chebyshev", "l2": "euclidean"}


class DomainError(ValueError):
    """Invalid index, empty set or other precondition failure."""


class DegenerateScale(ValueError):
    """Rescaling by a ball of zero mass."""


@dataclass(frozen=True, eq=False)
class PointedSpace:
    dist: np.ndarray
    base: int = 0
    coords: np.ndarray | None = None
    norm: str | None = None

    def __post_init__(self):
        d = np.asarray(self.dist, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] == 0:
            raise DomainError("dist must be a nonempty square matrix")
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)
        if not 0 <= int(self.base) < d.shape[0]:
            raise DomainError(f"base {self.base} out of range")
        object.__setattr__(self, "base", int(self.base))
        if self.coords is not None:
            c = np.asarray(self.coords, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            c.setflags(write=False)
            object.__setattr__(self, "coords", c)

    @property
    def n_points(self) -> int:
        return self.dist.shape[0]

    def with_base(self, base: int) -> "PointedSpace":
        return replace(self, base=base)

    def sub(self, idx) -> tuple["PointedSpace", np.ndarray]:
        """Metric subspace on idx (base must be kept); returns the space and idx as array."""
        idx = np.asarray(sorted(set(int(i) for i in idx)), dtype=int)
        if self.base not in idx:
            raise DomainError("base must belong to the kept index set")
        coords = None if self.coords is None else self.coords[idx]
        new = PointedSpace(self.dist[np.ix_(idx, idx)], int(np.searchsorted(idx, self.base)), coords, self.norm)
        return new, idx


@dataclass(frozen=True, eq=False)
class MeasuredSpace(PointedSpace):
    weight: np.ndarray = field(default=None)

    def __post_init__(self):
        super().__post_init__()
        w = np.ones(self.n_points) if self.weight is None else np.asarray(self.weight, dtype=float)
        if w.shape != (self.n_points,):
            raise DomainError("weight length must equal n_points")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite and nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weight", w)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weight > 0)

    @property
    def space(self) -> PointedSpace:
        return PointedSpace(self.dist, self.base, self.coords, self.norm)

    def sub(self, idx) -> tuple["MeasuredSpace", np.ndarray]:
        ps, idx = PointedSpace.sub(self, idx)
        return MeasuredSpace(ps.dist, ps.base, ps.coords, ps.norm, self.weight[idx]), idx

    def mass(self, idx=None) -> float:
        if idx is None:
            return float(self.weight.sum())
        return float(self.weight[np.asarray(list(idx), dtype=int)].sum()) if len(idx) else 0.0


def _check_index(s: PointedSpace, i) -> int:
    i = int(i)
    if not 0 <= i < s.n_points:
        raise DomainError(f"index {i} out of range for {s.n_points} points")
    return i


def ball(s: PointedSpace, r: float, center=None, tol: float = TOL) -> np.ndarray:
    """Closed ball {i : d(center, i) <= r}."""
    if r < 0:
        raise DomainError("radius must be nonnegative")
    c = s.base if center is None else _check_index(s, center)
    return np.flatnonzero(s.dist[c] <= r + tol)


def ball_ties(s: PointedSpace, r: float, center=None, tol: float = TOL) -> np.ndarray:
    """Indices sitting on the sphere of radius r (within tol); recorded, not resolved."""
    c = s.base if center is None else _check_index(s, center)
    return np.flatnonzero(np.abs(s.dist[c] - r) <= tol)


def ball_mass(s: MeasuredSpace, r: float, center=None) -> float:
    return float(s.weight[ball(s, r, center)].sum())


def restrict(s: MeasuredSpace, keep) -> MeasuredSpace:
    """mu|_S: zero the weights outside keep, metric untouched."""
    keep = np.asarray(list(keep), dtype=int)
    if keep.size and (keep.min() < 0 or keep.max() >= s.n_points):
        raise DomainError("keep contains invalid indices")
    if s.base not in set(keep.tolist()):
        raise DomainError("base must belong to keep")
    w = np.zeros(s.n_points)
    w[keep] = s.weight[keep]
    return replace(s, weight=w)


def rescale(s: MeasuredSpace, r: float) -> MeasuredSpace:
    """T_r: distances / r, weights / mu(B(x, r))."""
    if r <= 0:
        raise DomainError("scale must be positive")
    m = ball_mass(s, r)
    if m <= 0:
        raise DegenerateScale(f"mu(B(x,{r})) = 0")
    coords = None if s.coords is None else (s.coords - s.coords[s.base]) / r
    return MeasuredSpace(s.dist / r, s.base, coords, s.norm, s.weight / m)


def validate(s: PointedSpace, tol: float = TRIANGLE_TOL) -> list[str]:
    """Return a list of violated invariants (empty when s is a pseudometric space)."""
    d = np.asarray(s.dist, dtype=float)
    out = []
    if not np.all(np.isfinite(d)):
        out.append("non-finite distance")
        return out
    if np.any(np.diag(d) != 0):
        out.append("nonzero diagonal")
    if np.any(d < 0):
        out.append("negative distance")
    asym = np.abs(d - d.T)
    if asym.max() > tol:
        i, j = np.unravel_index(asym.argmax(), d.shape)
        out.append(f"symmetry violated at ({i},{j}): {d[i, j]} != {d[j, i]}")
    t = triangle_violation(d)
    if t[0] > tol * max(1.0, d.max()):
        out.append(f"triangle violated at {t[1]}: excess {t[0]:.3g}")
    if not 0 <= s.base < d.shape[0]:
        out.append("base out of range")
    w = getattr(s, "weight", None)
    if w is not None and np.any(np.asarray(w) < 0):
        out.append("negative weight")
    return out


def triangle_violation(d: np.ndarray, chunk: int = 64) -> tuple[float, tuple]:
    """Largest excess d[i,k] - d[i,j] - d[j,k] and the offending triple."""
    n = d.shape[0]
    worst, where = -np.inf, ()
    for j0 in range(0, n, chunk):
        js = np.arange(j0, min(n, j0 + chunk))
        # via[j, i, k] = d[i, j] + d[j, k]
        via = d[js][:, :, None] + d[js][:, None, :]
        excess = d[None] - via
        a = int(excess.argmax())
        jj, i, k = np.unravel_index(a, excess.shape)
        if excess[jj, i, k] > worst:
            worst, where = float(excess[jj, i, k]), (int(i), int(js[jj]), int(k))
    return worst, where


# ---------------------------------------------------------------- io

def distances(points: np.ndarray, norm: str = "linf") -> np.ndarray:
    if norm not in NORMS:
        raise DomainError(f"unknown norm {norm!r}")
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    return cdist(p, p, metric=NORMS[norm])


def from_points(points, weights=None, base: int = 0, norm: str = "linf") -> MeasuredSpace:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    return MeasuredSpace(distances(p, norm), base, p, norm, weights)


def space_from_dict(obj: dict) -> MeasuredSpace:
    if "dist" in obj:
        d = np.asarray(obj["dist"], dtype=float)
        if "n" in obj and int(obj["n"]) != d.shape[0]:
            raise DomainError("n does not match dist")
        return MeasuredSpace(d, int(obj.get("base", 0)), None, None, obj.get("weights"))
    if "points" in obj:
        p = np.asarray(obj["points"], dtype=float)
        if "dim" in obj and p.ndim == 2 and p.shape[1] != int(obj["dim"]):
            raise DomainError("dim does not match points")
        return from_points(p, obj.get("weights"), int(obj.get("base", 0)), obj.get("norm", "linf"))
    raise DomainError("expected a 'dist' or 'points' field")


def space_to_dict(s: PointedSpace) -> dict:
    w = getattr(s, "weight", None)
    if s.coords is not None:
        out = {"dim": int(s.coords.shape[1]), "norm": s.norm, "points": s.coords.tolist(), "base": s.base}
    else:
        out = {"n": s.n_points, "base": s.base, "dist": s.dist.tolist()}
    if w is not None:
        out["weights"] = w.tolist()
    return out


def load_space(path) -> MeasuredSpace:
    with open(path) as fh:
        s = space_from_dict(json.load(fh))
    bad = validate(s)
    if bad:
        raise DomainError("; ".join(bad))
    return s


def save_space(s: PointedSpace, path) -> None:
    with open(path, "w") as fh:
        json.dump(space_to_dict(s), fh)
