"""Finite-scale tangent scans: blowups, flat model tangents, flatness scores,
synthetic fixtures and the rectifiable/unrectifiable separation experiment."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (TOL, DegenerateScale, DomainError, MeasuredSpace, ball, ball_mass, ball_ties,
                   from_points, rescale, restrict)
from .alignment import radial_dstar_lower
from .flat import FlatSolver
from .measure import _bilip_constant, _norm_fn, doubling_scan

KINDS = ("segment", "lipschitz_graph", "linf_plane_patch", "four_corner_cantor", "scattered_dust_curve")


# ------------------------------------------------------------ blowups

@dataclass
class BlowupSequence:
    point: int
    scales: np.ndarray
    window: float
    blowups: list
    index: list             # original indices kept in each blowup
    ties: list              # original indices on the window sphere

    def unit_masses(self) -> np.ndarray:
        return np.array([ball_mass(b, 1.0) for b in self.blowups])


def window(s: MeasuredSpace, W: float) -> tuple[MeasuredSpace, np.ndarray]:
    if not np.isfinite(W):
        return s, np.arange(s.n_points)
    return s.sub(ball(s, W))


def blowup(s: MeasuredSpace, point: int, scales, W: float = 8.0) -> BlowupSequence:
    """T_r at ``point`` for each scale, restricted to B(point, W) in the rescaled metric."""
    s0 = s.with_base(int(point))
    scales = np.asarray(scales, dtype=float)
    out, idx, ties = [], [], []
    for r in scales:
        try:
            t = rescale(s0, r)
        except DegenerateScale as e:
            raise DegenerateScale(f"scale {r}: {e}") from None
        b, keep = window(t, W)
        out.append(b)
        idx.append(keep)
        ties.append(keep[ball_ties(b, W)] if np.isfinite(W) else np.zeros(0, dtype=int))
    return BlowupSequence(int(point), scales, W, out, idx, ties)


# ------------------------------------------------------------ model tangents

def _gauge(kind: str, params, n: int):
    params = {} if params is None else dict(params)
    if kind == "linf":
        a = np.asarray(params.get("weights", np.ones(n)), dtype=float)
        if a.shape != (n,) or np.any(a <= 0):
            raise DomainError("linf gauge needs n positive weights")
        return lambda v: (np.abs(v) / a).max(axis=-1)
    if kind == "ellipse":
        A = np.asarray(params.get("matrix", np.eye(n)), dtype=float)
        if A.shape != (n, n) or abs(np.linalg.det(A)) < 1e-12:
            raise DomainError("ellipse gauge needs an invertible n x n matrix")
        return lambda v: np.sqrt(((v @ A.T) ** 2).sum(axis=-1))
    raise DomainError(f"unknown gauge {kind!r}")


def model_tangent(kind: str = "linf", n: int = 1, resolution: float = 1 / 32, W: float = 2.0,
                  params=None, basis=None, norm: str = "linf") -> MeasuredSpace:
    """Cell-centred sample of a normed n-space on the window, unit-ball mass 1.

    A zero-weight base atom sits at the origin.  ``basis`` (ambient x n) places
    the sample in an ambient space; distances are then ambient ``norm``
    distances, otherwise gauge distances computed pairwise.
    """
    if resolution <= 0 or W <= 0:
        raise DomainError("resolution and window must be positive")
    g = _gauge(kind, params, n)
    h = resolution
    # enough cells to cover the gauge window in every direction
    probe = np.eye(n)
    reach = max(W, 1.0) / min(g(probe).min(), g(-probe).min())
    k = math.ceil(reach / h)
    t = (np.arange(-k, k) + 0.5) * h
    q = np.array(list(itertools.product(t, repeat=n)))
    gv = g(q)
    # normalise on the full unit ball even when the window is smaller
    unit = int((gv <= 1 + 1e-12).sum())
    if unit == 0:
        raise DomainError("resolution too coarse for a unit ball")
    q = q[gv <= W + 1e-12]
    w = np.full(len(q), 1.0 / unit)
    q = np.vstack([np.zeros(n), q])
    w = np.r_[0.0, w]
    if basis is not None:
        A = np.asarray(basis, dtype=float)
        return from_points(q @ A.T, w, base=0, norm=norm)
    d = np.empty((len(q), len(q)))
    for s in range(0, len(q), 256):
        d[s:s + 256] = g(q[s:s + 256, None, :] - q[None, :, :])
    return MeasuredSpace(d, 0, q, None, w)


# ------------------------------------------------------------ scoring

@dataclass
class FlatnessReport:
    records: list
    summary: dict
    params: dict = field(default_factory=dict)

    def worst(self) -> dict:
        return {p: v["worst_upper"] for p, v in self.summary.items()}

    def as_dict(self):
        return {"params": self.params, "records": self.records,
                "summary": {str(k): v for k, v in self.summary.items()}}


def fit_tangent(b: MeasuredSpace, n: int):
    """Weighted PCA directions through the base, columns at unit ambient norm."""
    X = b.coords - b.coords[b.base]
    norm = b.norm or "linf"
    if X.shape[1] == n:
        P = np.eye(n)
    else:
        w = b.weight / max(b.weight.sum(), 1e-300)
        c = (X - w @ X) * np.sqrt(w)[:, None]
        _, _, vt = np.linalg.svd(c, full_matrices=False)
        P = vt[:n].T
    P = P / _norm_fn(norm)(P.T)[None, :]
    kfit, _, _ = _bilip_constant(P, norm)
    return P, kfit


def _bin(coords, w, res):
    """Move atoms to centres of res-cells; return new coords, weights and max shift."""
    key = np.floor(coords / res + 1e-9).astype(np.int64)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    cw = np.zeros(len(uniq))
    np.add.at(cw, inv, w)
    cen = (uniq + 0.5) * res
    # zero-weight atoms carry no mass, so their displacement does not count
    moved = np.abs(coords - cen[inv]).max(axis=1)[w > 0]
    return cen, cw, float(moved.max()) if len(moved) else 0.0


def score_blowup(b: MeasuredSpace, n: int, resolution: float = 1 / 32, W: float = 2.0,
                 tol: float = 1e-3, max_atoms: int = 1500) -> dict:
    """d_* interval between a blowup and its fitted flat model.

    Upper: flat distance in the ambient coupling (both placed in the blowup's
    coordinate space, basepoints identified).  If the blowup has more than
    ``max_atoms`` atoms it is binned first and the flat threshold carries the
    certified correction (L * shift) * mass.  Lower: flat distance of the
    pushforwards by distance to the base.
    """
    if b.coords is None:
        raise DomainError("blowup needs coordinates")
    norm = b.norm or "linf"
    P, kfit = fit_tangent(b, n)
    model = model_tangent("linf", n, resolution, W, basis=P, norm=norm)
    X = b.coords - b.coords[b.base]
    w = np.asarray(b.weight, dtype=float)
    shift = 0.0
    if b.n_points > max_atoms:
        X, w, shift = _bin(X, w, resolution)
    pts = np.vstack([X, model.coords])
    mu = np.r_[w, np.zeros(model.n_points)]
    nu = np.r_[np.zeros(len(X)), model.weight]
    host = from_points(pts, None, base=len(X), norm=norm)
    solver = FlatSolver(host.space, mu, nu)
    extra = None
    if shift > 0:
        rad = np.abs(X).max(axis=1)
        # moving atoms by `shift` changes a 1/e-Lipschitz test integral by at most this
        extra = lambda e: shift / e * float(w[rad <= 1 / e + shift + TOL].sum())
    upper = solver.flat(tol, extra)
    lower = radial_dstar_lower(b, model, tol)
    return {"lower": float(min(lower, upper)), "upper": float(upper), "K_fit": float(kfit),
            "basis": P.tolist(), "atoms": int(b.n_points), "model_atoms": int(model.n_points),
            "bin_shift": shift}


def flatness_scan(s: MeasuredSpace, points, scales, n: int, K_budget: float = 1.0, W: float = 2.0,
                  resolution: float | None = None, tol: float = 1e-3, max_atoms: int = 1500,
                  spacing: float | None = None) -> FlatnessReport:
    """Score every (point, scale); per-record failures are recorded and skipped.

    Without an explicit model ``resolution`` the model is sampled at the
    rescaled fixture ``spacing`` (spacing / r), or 1/32 if that is unknown.
    """
    recs = []
    for p in points:
        for r in scales:
            rec = {"point": int(p), "scale": float(r)}
            try:
                seq = blowup(s, p, [r], W)
                res = resolution or (spacing / r if spacing else 1 / 32)
                rec.update(score_blowup(seq.blowups[0], n, res, W, tol, max_atoms))
                rec["K_ok"] = rec["K_fit"] <= K_budget + 1e-9
                rec["unit_mass"] = float(seq.unit_masses()[0])
            except (DegenerateScale, DomainError) as e:
                rec["error"] = str(e)
            recs.append(rec)
    summary = {}
    for p in points:
        rs = [r for r in recs if r["point"] == int(p) and "error" not in r]
        if not rs:
            summary[int(p)] = {"worst_upper": None, "trend": None, "inconclusive": True}
            continue
        rs.sort(key=lambda r: -r["scale"])
        ups = [r["upper"] for r in rs]
        trend = float(np.polyfit(np.log2([r["scale"] for r in rs]), ups, 1)[0]) if len(rs) > 1 else 0.0
        summary[int(p)] = {"worst_upper": float(max(ups)), "best_upper": float(min(ups)),
                           "trend": trend, "inconclusive": False}
    return FlatnessReport(recs, summary, {"n": n, "scales": [float(r) for r in scales], "window": W,
                                          "resolution": resolution, "tol": tol, "K_budget": K_budget})


# ------------------------------------------------------------ fixtures

@dataclass
class Fixture:
    kind: str
    params: dict
    space: MeasuredSpace
    rectifiable: bool
    n: int
    spacing: float
    interior: np.ndarray

    def as_dict(self) -> dict:
        s = self.space
        return {"kind": self.kind, "params": self.params, "rectifiable": self.rectifiable, "n": self.n,
                "spacing": self.spacing, "interior": self.interior.tolist(),
                "dim": int(s.coords.shape[1]), "norm": s.norm, "base": s.base,
                "points": s.coords.tolist(), "weights": s.weight.tolist()}


def _pos_int(params, key, default, lo=1):
    v = params.get(key, default)
    if int(v) != v or v < lo:
        raise DomainError(f"{key} must be an integer >= {lo}")
    return int(v)


def generate(kind: str, params=None, seed: int = 0) -> Fixture:
    """Deterministic synthetic fixture with a rectifiability label."""
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "segment":
        k = _pos_int(params, "atoms", 1001, 2)
        x = np.linspace(0.0, 1.0, k)
        s = from_points(x[:, None], np.full(k, 1.0 / k), base=k // 2)
        h = 1.0 / (k - 1)
        inner = np.flatnonzero((x >= 0.25) & (x <= 0.75))
        return Fixture(kind, {"atoms": k}, s, True, 1, h, inner)
    if kind == "lipschitz_graph":
        k = _pos_int(params, "atoms", 1001, 2)
        slope = float(params.get("slope", 0.5))
        omega = float(params.get("omega", math.pi))
        if not slope > 0 or not omega > 0:
            raise DomainError("slope and omega must be positive")
        phase = float(rng.uniform(0, 2 * math.pi))
        x = np.linspace(0.0, 1.0, k)
        y = slope / omega * np.sin(omega * x + phase)
        # l_inf length element is dx when the slope is at most 1
        dx = np.full(k, 1.0 / (k - 1))
        dx[[0, -1]] /= 2
        s = from_points(np.c_[x, y], dx * max(1.0, slope), base=k // 2)
        inner = np.flatnonzero((x >= 0.25) & (x <= 0.75))
        return Fixture(kind, {"atoms": k, "slope": slope, "omega": omega, "phase": phase}, s, True, 1,
                       1.0 / (k - 1), inner)
    if kind == "linf_plane_patch":
        side = float(params.get("side", 2.0))
        h = float(params.get("spacing", 1 / 32))
        if not (side > 0 and h > 0):
            raise DomainError("side and spacing must be positive")
        m = int(round(side / h))
        t = np.arange(m + 1) * h
        P = np.array(list(itertools.product(t, t)))
        c = np.full(2, side / 2)
        base = int(np.argmin(np.abs(P - c).max(axis=1)))
        s = from_points(P, np.full(len(P), h * h), base=base)
        inner = np.flatnonzero(np.all(np.abs(P - c) <= side / 4 + 1e-12, axis=1))
        return Fixture(kind, {"side": side, "spacing": h}, s, True, 2, h, inner)
    if kind == "four_corner_cantor":
        g = _pos_int(params, "generation", 4)
        bits = np.array(list(itertools.product([0, 1], repeat=2)))
        cen = np.zeros((1, 2))
        for k in range(1, g + 1):
            step = 0.75 * 4.0 ** -(k - 1)
            cen = (cen[:, None, :] + step * bits[None]).reshape(-1, 2)
        cen = cen + 0.5 * 4.0 ** -g
        s = from_points(cen, np.full(len(cen), 1.0 / len(cen)), base=0)
        return Fixture(kind, {"generation": g}, s, False, 1, 4.0 ** -g, np.arange(len(cen)))
    if kind == "scattered_dust_curve":
        k = _pos_int(params, "atoms", 1001, 2)
        c = float(params.get("dust", 0.5))
        levels = _pos_int(params, "levels", 7)
        x = np.linspace(0.0, 1.0, k)
        curve = np.c_[x, np.zeros(k)]
        wc = np.full(k, 1.0 / k)
        pts, ws = [curve], [wc]
        for j in range(1, levels + 1):
            cnt = 2 ** j
            u = (np.arange(cnt) + rng.uniform(0.1, 0.9, cnt)) / cnt
            side = np.where(rng.random(cnt) < 0.5, -1.0, 1.0)
            pts.append(np.c_[u, side * 2.0 ** -j])
            ws.append(np.full(cnt, c * 4.0 ** -j))
        s = from_points(np.vstack(pts), np.concatenate(ws), base=k // 2)
        inner = np.flatnonzero((x >= 0.25) & (x <= 0.75))
        return Fixture(kind, {"atoms": k, "dust": c, "levels": levels}, s, True, 1, 1.0 / (k - 1), inner)
    raise DomainError(f"unknown fixture kind {kind!r}")


def fixture_from_dict(obj: dict) -> Fixture:
    s = from_points(np.asarray(obj["points"], dtype=float), obj.get("weights"), int(obj.get("base", 0)),
                    obj.get("norm", "linf"))
    interior = np.asarray(obj.get("interior", np.arange(s.n_points)), dtype=int)
    return Fixture(obj.get("kind", "custom"), obj.get("params", {}), s, bool(obj.get("rectifiable", True)),
                   int(obj.get("n", 1)), float(obj.get("spacing", 0.0)), interior)


# ------------------------------------------------------------ laws

def default_scales(fx: Fixture, steps=(4, 5)) -> list:
    """Dyadic scales at fixed multiples 2^k of the fixture's sampling spacing."""
    return [float(fx.spacing * 2.0 ** k) for k in steps]


def blowup_laws(fx: Fixture, point: int, scales, W: float = 2.0, slack: float = 0.1) -> dict:
    """Doubling inheritance and the unit-ball mass bracket for the blowups at ``point``.

    M is the fixture's doubling ratio over the points within W r of ``point``
    and radii r t for the test radii t; each blowup's own ratio over the same
    points and radii t must not exceed (1 + slack) M.
    """
    s = fx.space
    seq = blowup(s, point, scales, W)
    radii = [W / 2 ** k for k in range(1, 5)]
    out = []
    for r, b, keep in zip(seq.scales, seq.blowups, seq.index):
        inside = np.flatnonzero(b.dist[b.base] <= W / 2 + TOL)
        pts_orig = keep[inside]
        M = doubling_scan(s, [r * t for t in radii], pts_orig)["M"]
        Mb = doubling_scan(b, radii, inside)["M"]
        unit = ball_mass(b, 1.0)
        out.append({"scale": float(r), "M_fixture": M, "M_blowup": Mb,
                    "doubling_ok": bool(Mb <= (1 + slack) * M + 1e-12),
                    "unit_mass": unit, "bracket_ok": bool(1 - 1e-9 <= unit <= (1 + slack) * M + 1e-9),
                    "ties": int(len(seq.ties[len(out)]))})
    return {"point": int(point), "records": out, "passed": all(r["doubling_ok"] and r["bracket_ok"] for r in out)}


def restriction_stability(fx: Fixture, keep, point: int, scales, W: float = 2.0, **kw) -> dict:
    """Scores of the restricted fixture against the full one, with the dropped mass per scale."""
    keep = np.union1d(np.asarray(keep, dtype=int), [fx.space.base, point])
    sub = restrict(fx.space.with_base(int(point)), keep)
    a = flatness_scan(fx.space, [point], scales, fx.n, W=W, **kw)
    b = flatness_scan(sub, [point], scales, fx.n, W=W, **kw)
    rows = []
    for ra, rb, r in zip(a.records, b.records, scales):
        m = ball_mass(fx.space.with_base(int(point)), W * r)
        dropped = m - ball_mass(sub, W * r)
        rows.append({"scale": float(r), "full": ra.get("upper"), "restricted": rb.get("upper"),
                     "dropped_fraction": float(dropped / m) if m > 0 else 0.0})
    return {"point": int(point), "rows": rows}


# ------------------------------------------------------------ separation

def separation_experiment(fixtures, points_per_fixture: int = 6, steps=(4, 5), W: float = 0.5,
                          resolution: float | None = None, seed: int = 0, calibrate: str = "segment",
                          tol: float = 1e-3, factor: float = 2.0) -> dict:
    """Scan each fixture at interior points and classify by the worst-scale upper score.

    tau = factor * 95th percentile of the calibration fixture's per-point
    worst-scale scores; a point is rectifiable-like iff its score is below tau.
    """
    rng = np.random.default_rng(seed)
    scans = {}
    for fx in fixtures:
        k = min(points_per_fixture, len(fx.interior))
        pts = np.sort(rng.choice(fx.interior, size=k, replace=False))
        scans[fx.kind] = (fx, flatness_scan(fx.space, pts, default_scales(fx, steps), fx.n, W=W,
                                            resolution=resolution, tol=tol, spacing=fx.spacing))
    if calibrate not in scans:
        raise DomainError(f"calibration fixture {calibrate!r} missing")
    cal = [v for v in scans[calibrate][1].worst().values() if v is not None]
    tau = float(factor * np.percentile(cal, 95))
    table, conf = [], {"tp": 0, "tn": 0, "fp": 0, "fn": 0, "inconclusive": 0}
    for kind, (fx, rep) in scans.items():
        per = []
        for p, v in rep.worst().items():
            if v is None:
                conf["inconclusive"] += 1
                continue
            like = v < tau
            per.append(like)
            key = ("tp" if like else "fn") if fx.rectifiable else ("fp" if like else "tn")
            conf[key] += 1
        frac = float(np.mean(per)) if per else float("nan")
        table.append({"fixture": kind, "rectifiable": fx.rectifiable, "atoms": int(fx.space.n_points),
                      "points": len(per), "rectifiable_like_fraction": frac,
                      "verdict": "rectifiable-like" if frac > 0.5 else "unrectifiable-like",
                      "worst": rep.worst(), "scales": rep.params["scales"]})
    correct = all((t["verdict"] == "rectifiable-like") == t["rectifiable"] for t in table)
    return {"tau": tau, "calibration": calibrate, "table": table, "confusion": conf,
            "errors": conf["fp"] + conf["fn"], "verdicts_correct": correct,
            "total_atoms": int(sum(t["atoms"] for t in table)),
            "reports": {k: v[1].as_dict() for k, v in scans.items()}}
