"""Command line entry point: ``mmspace <verb> ... --out report.json``.

Exit status: 0 on success (including budget exhaustion, flagged
``inconclusive``), 2 on unreadable or invalid input, 3 when a certificate
inequality fails.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import DomainError, MeasuredSpace, space_from_dict, validate


class InputError(Exception):
    pass


# ------------------------------------------------------------ io helpers

def _jsonable(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(o, float) and not math.isfinite(o):
        return "inf" if o > 0 else ("-inf" if o < 0 else "nan")
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return _clean(_jsonable(o))
    return o


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=1, default=_jsonable)


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file")
    except json.JSONDecodeError as e:
        raise InputError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")


def _unwrap(obj):
    """Accept a report written by ``generate --out`` wherever a point cloud is expected."""
    if isinstance(obj, dict) and isinstance(obj.get("result"), dict) and "points" in obj["result"]:
        return obj["result"]
    return obj


def _space(path) -> MeasuredSpace:
    obj = _unwrap(_read_json(path))
    if not isinstance(obj, dict):
        raise InputError(f"{path}: expected a JSON object")
    try:
        s = space_from_dict(obj)
    except (DomainError, ValueError, TypeError) as e:
        raise InputError(f"{path}: {e}")
    bad = validate(s)
    if bad:
        raise InputError(f"{path}: " + "; ".join(bad))
    return s


def _vector(path, key, n=None, dtype=float):
    obj = _read_json(path)
    if isinstance(obj, dict):
        obj = obj.get(key)
    try:
        v = np.asarray(obj, dtype=dtype)
    except (TypeError, ValueError):
        raise InputError(f"{path}: expected a list of numbers or {{'{key}': [...]}}")
    if v.ndim != 1 or (n is not None and dtype is float and len(v) != n):
        raise InputError(f"{path}: expected {n} entries, got shape {v.shape}")
    if dtype is int and n is not None and len(v) and (v.min() < 0 or v.max() >= n):
        raise InputError(f"{path}: index out of range for {n} points")
    return v


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InputError(f"bad number list {text!r}")


# ------------------------------------------------------------ verbs

def cmd_flat(a):
    from .flat import FlatSolver
    host = _space(a.host)
    mu = _vector(a.mu, "weights", host.n_points)
    nu = _vector(a.nu, "weights", host.n_points)
    solver = FlatSolver(host.space, mu, nu)
    if a.L is not None or a.r is not None:
        L = a.L if a.L is not None else 1.0
        r = a.r if a.r is not None else math.inf
        if not math.isfinite(r):
            r = float(host.dist.max()) + 1.0
        sol = solver.solve(L, r)
        rep = {"value": sol.value, "witness": sol.witness, "L": L, "r": r, "kind": "F_L_r"}
        lip = np.abs(sol.witness[:, None] - sol.witness[None]) - L * host.dist
        rep["assertions"] = [_assert("witness_lipschitz", float(lip.max()), 1e-9),
                             _assert("witness_bounded", float(np.abs(sol.witness).max()), 1.0)]
    else:
        v = solver.flat(a.tol)
        rep = {"value": v, "kind": "F", "tol": a.tol}
        if 0 < v < 0.5:
            sol = solver.solve(1 / v, 1 / v)
            rep["witness"] = sol.witness
    return rep, None


def _assert(name, lhs, rhs, tol=1e-9):
    return {"name": name, "lhs": lhs, "rhs": rhs, "margin": rhs - lhs, "holds": bool(lhs <= rhs + tol)}


def cmd_hz(a):
    from .hausdorff import local_hausdorff_detail
    host = _space(a.host)
    A = _vector(a.left, "indices", host.n_points, int)
    B = _vector(a.right, "indices", host.n_points, int)
    r = local_hausdorff_detail(host.space, A, B)
    return {"value": r.value, "critical_eps": r.critical_eps, "critical_point": r.critical_point,
            "side": r.side}, None


def _estimate(a, which):
    from . import alignment as al
    left, right = _space(a.left), _space(a.right)
    if which == "dpgh":
        est = al.estimate_dpgh(left.space, right.space, budget=a.budget or 400, mode=a.mode, seed=a.seed)
    elif which == "dpmgh":
        est = al.estimate_dpmgh(left, right, budget=a.budget or 40, mode=a.mode, seed=a.seed)
    else:
        est = al.estimate_dstar(left, right, budget=a.budget or 40, mode=a.mode, seed=a.seed)
    rep = est.as_dict()
    rep["assertions"] = [_assert("interval_ordered", est.lower, est.upper)]
    if a.out and est.witness is not None:
        wpath = Path(a.out).with_suffix(".witness.json")
        wpath.write_text(dumps({"n_left": left.n_points, "n_right": right.n_points,
                                "cross": est.witness.cross}))
        rep["witness_file"] = wpath.name
    return rep, None


def cmd_content(a):
    from .measure import aggregated_content, content
    s = _space(a.space)
    target = np.arange(s.n_points) if a.target is None else _vector(a.target, "indices", s.n_points, int)
    if a.mode == "aggregated":
        if s.coords is None:
            raise InputError("aggregated mode needs a point-cloud file")
        est = aggregated_content(s.coords[target], a.s, a.mesh, s.norm or "linf")
    else:
        est = content(s.space, target, a.s, a.delta, a.mode)
    return {"value": est.value, "s": est.s, "delta": est.delta, "mode": est.mode,
            "pieces": len(est.cover)}, None


def _points(a, s):
    if a.points is None:
        return [s.base]
    return [int(p) for p in _floats(a.points)]


def cmd_density(a):
    from .measure import density_profile
    s = _space(a.space)
    scales = _floats(a.scales)
    profs = [density_profile(s, p, scales, a.dim).as_dict() for p in _points(a, s)]
    rep = {"dim": a.dim, "profiles": profs}

    def fig(path):
        from .plotting import plot_density
        return plot_density(rep, path)
    return rep, fig


def cmd_doubling(a):
    from .measure import doubling_scan
    s = _space(a.space)
    pts = None if a.points is None else _points(a, s)
    rep = doubling_scan(s, _floats(a.scales), pts)

    def fig(path):
        from .plotting import plot_doubling
        return plot_doubling(rep, path)
    return rep, fig


def cmd_gta(a):
    from .measure import verify_gta
    X = _space(a.space)
    C = _vector(a.C, "indices", X.n_points, int)
    G = _vector(a.G, "indices", X.n_points, int)
    pts = None if a.points is None else [int(p) for p in _floats(a.points)]
    r = verify_gta(X, C, G, a.eta, a.K, a.delta, a.R0, _floats(a.scales), a.n, a.grid, points=pts)
    return {"passed": r.passed, "density_pass": r.density_pass, "approx_pass": r.approx_pass,
            "density": r.density, "approx": r.approx, "notes": r.notes,
            "first_failure": r.first_failure()}, None


def cmd_holder(a):
    from .holder import ConstructionInvalid, build
    X = _space(a.space)
    if X.coords is None:
        raise InputError(f"{a.space}: holder-build needs a point-cloud file (embedded host)")
    C = _vector(a.C, "indices", X.n_points, int)
    G = _vector(a.G, "indices", X.n_points, int)
    status = 0
    try:
        cert = build(X, C, G, K=a.K, gamma=a.gamma, eta=a.eta, depth=a.depth, b=a.bits, M=a.M)
        err = None
    except ConstructionInvalid as e:
        cert, err, status = e.certificate, str(e), 3
    rep = cert.as_dict() if cert is not None else {}
    if err:
        rep["error"] = err

    def fig(path):
        from .plotting import plot_holder
        return plot_holder(rep, path)
    return rep, fig, status


def _fixture_or_space(path):
    from .tangent import fixture_from_dict
    obj = _unwrap(_read_json(path))
    if not isinstance(obj, dict) or "points" not in obj:
        raise InputError(f"{path}: expected a weighted point-cloud file")
    try:
        return fixture_from_dict(obj)
    except (DomainError, ValueError, TypeError, KeyError) as e:
        raise InputError(f"{path}: {e}")


def cmd_blowup(a):
    from .core import ball_mass
    from .tangent import blowup
    fx = _fixture_or_space(a.space)
    p = fx.space.base if a.point is None else a.point
    seq = blowup(fx.space, p, _floats(a.scales), a.window)
    rep = {"point": p, "window": a.window, "scales": seq.scales,
           "unit_mass": [ball_mass(b, 1.0) for b in seq.blowups],
           "atoms": [b.n_points for b in seq.blowups], "ties": [t.tolist() for t in seq.ties]}
    rep["assertions"] = [_assert("unit_ball_mass", abs(m - 1.0), 1e-9) for m in rep["unit_mass"]]

    def fig(path):
        from .plotting import plot_blowups
        return plot_blowups(seq, path)
    return rep, fig


def cmd_scan(a):
    from .tangent import default_scales, flatness_scan
    fx = _fixture_or_space(a.space)
    rng = np.random.default_rng(a.seed)
    if a.points:
        pts = [int(p) for p in _floats(a.points)]
    else:
        k = min(a.n_points, len(fx.interior))
        pts = sorted(rng.choice(fx.interior, size=k, replace=False).tolist())
    scales = _floats(a.scales) if a.scales else default_scales(fx)
    n = a.n or fx.n
    rep = flatness_scan(fx.space, pts, scales, n, a.K, a.window, None, a.tol,
                        spacing=fx.spacing or None).as_dict()

    def fig(path):
        from .plotting import plot_scan
        return plot_scan(rep, path)
    return rep, fig


def cmd_generate(a):
    from .tangent import generate
    params = {}
    for kv in a.param or []:
        if "=" not in kv:
            raise InputError(f"--param expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        try:
            params[k] = json.loads(v)
        except json.JSONDecodeError:
            raise InputError(f"--param {k}: value {v!r} is not JSON")
    fx = generate(a.kind, params, a.seed)
    rep = fx.as_dict()

    def fig(path):
        from .plotting import plot_points
        return plot_points(fx.space.coords, fx.space.weight, path, fx.kind)
    return rep, fig


def cmd_separate(a):
    from .tangent import KINDS, generate, separation_experiment
    if a.fixtures:
        fxs = [_fixture_or_space(p) for p in a.fixtures]
    else:
        fxs = [generate(k, seed=a.seed) for k in KINDS]
    res = separation_experiment(fxs, a.n_points, W=a.window, seed=a.seed, tol=a.tol)
    if not a.full:
        res.pop("reports")

    def fig(path):
        from .plotting import plot_separation
        return plot_separation(res, path)
    return res, fig


# ------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--budget", type=int, default=None)
    g.add_argument("--out", default=None, help="report path (JSON); figures go beside it")
    g.add_argument("--no-figures", action="store_true")

    p = argparse.ArgumentParser(prog="mmspace", description="Pointed metric measure space toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, fn, help_):
        sp = sub.add_parser(name, parents=[g], help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = verb("flat", cmd_flat, "flat distance between two measures on a host")
    sp.add_argument("--host", required=True)
    sp.add_argument("--mu", required=True)
    sp.add_argument("--nu", required=True)
    sp.add_argument("--L", type=float)
    sp.add_argument("--r", type=float)
    sp.add_argument("--tol", type=float, default=1e-6)

    sp = verb("hz", cmd_hz, "pointed local Hausdorff distance between index sets")
    sp.add_argument("--host", required=True)
    sp.add_argument("--left", required=True)
    sp.add_argument("--right", required=True)

    for name, help_ in (("dpgh", "pointed GH interval"), ("dpmgh", "pointed measured GH interval"),
                        ("dstar", "d_* interval")):
        sp = verb(name, lambda a, w=name: _estimate(a, w), help_)
        sp.add_argument("left")
        sp.add_argument("right")
        sp.add_argument("--mode", default="auto", choices=["auto", "exact_small", "local_search"])

    sp = verb("content", cmd_content, "Hausdorff content estimate")
    sp.add_argument("--space", required=True)
    sp.add_argument("--target")
    sp.add_argument("--s", type=float, required=True)
    sp.add_argument("--delta", type=float, default=math.inf)
    sp.add_argument("--mesh", type=float, default=0.01)
    sp.add_argument("--mode", default="greedy_upper", choices=["greedy_upper", "exact_small", "aggregated"])

    sp = verb("density", cmd_density, "density ratio profiles")
    sp.add_argument("--space", required=True)
    sp.add_argument("--scales", required=True, help="comma separated radii")
    sp.add_argument("--dim", type=float, required=True)
    sp.add_argument("--points")

    sp = verb("doubling", cmd_doubling, "doubling ratio scan")
    sp.add_argument("--space", required=True)
    sp.add_argument("--scales", required=True)
    sp.add_argument("--points")

    sp = verb("gta", cmd_gta, "check the good tangential approximation condition")
    sp.add_argument("--space", required=True)
    sp.add_argument("--C", required=True)
    sp.add_argument("--G", required=True)
    sp.add_argument("--eta", type=float, required=True)
    sp.add_argument("--K", type=float, default=1.0)
    sp.add_argument("--delta", type=float, default=0.1)
    sp.add_argument("--R0", type=float, default=1.0)
    sp.add_argument("--scales", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--grid", type=float, default=1 / 32)
    sp.add_argument("--points")

    sp = verb("holder-build", cmd_holder, "build and certify a Hölder surface")
    sp.add_argument("--space", required=True)
    sp.add_argument("--C", required=True)
    sp.add_argument("--G", required=True)
    sp.add_argument("--K", type=float, default=1.0)
    sp.add_argument("--gamma", type=float, default=0.5)
    sp.add_argument("--eta", type=float, default=1.0)
    sp.add_argument("--depth", type=int, default=3)
    sp.add_argument("--bits", type=int, default=2, help="refinement 2^-bits per level")
    sp.add_argument("--M", type=int, default=1, help="seed level")

    sp = verb("blowup", cmd_blowup, "rescaled windows at a point")
    sp.add_argument("--space", required=True)
    sp.add_argument("--point", type=int)
    sp.add_argument("--scales", required=True)
    sp.add_argument("--window", type=float, default=8.0)

    sp = verb("scan", cmd_scan, "flatness scan of a fixture")
    sp.add_argument("--space", required=True)
    sp.add_argument("--points")
    sp.add_argument("--n-points", type=int, default=6)
    sp.add_argument("--scales")
    sp.add_argument("--n", type=int)
    sp.add_argument("--K", type=float, default=1.0)
    sp.add_argument("--window", type=float, default=0.5)
    sp.add_argument("--tol", type=float, default=1e-3)

    sp = verb("generate", cmd_generate, "synthetic fixture")
    sp.add_argument("kind")
    sp.add_argument("--param", action="append", help="key=value (JSON value)")

    sp = verb("separate", cmd_separate, "rectifiable / unrectifiable separation experiment")
    sp.add_argument("fixtures", nargs="*")
    sp.add_argument("--n-points", type=int, default=6)
    sp.add_argument("--window", type=float, default=0.5)
    sp.add_argument("--tol", type=float, default=1e-3)
    sp.add_argument("--full", action="store_true", help="include per-record scan tables")
    return p


def _config(a) -> dict:
    return {k: v for k, v in sorted(vars(a).items()) if k != "fn"}


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        out = a.fn(a)
    except (InputError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    rep, fig = out[0], out[1]
    status = out[2] if len(out) > 2 else 0
    report = {"version": __version__, "verb": a.verb, "config": _config(a), "result": rep}
    text = dumps(report)
    if a.out:
        Path(a.out).write_text(text + "\n")
        if fig is not None and not a.no_figures:
            fig(Path(a.out).with_suffix(".png"))
    else:
        print(text)
    if status == 3:
        print(f"certificate failed: {rep.get('error')}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
