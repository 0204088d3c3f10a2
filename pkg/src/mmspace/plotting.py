"""Figures written next to JSON reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def plot_points(coords, weights, path, title="", highlight=None):
    c = np.asarray(coords, dtype=float)
    if c.ndim == 1 or c.shape[1] == 1:
        c = np.c_[c.reshape(-1), np.zeros(len(c))]
    w = np.asarray(weights, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 5))
    size = 4 + 40 * w / w.max() if len(w) and w.max() > 0 else 4
    ax.scatter(c[:, 0], c[:, 1], s=size, c="k", lw=0)
    if highlight is not None and len(highlight):
        h = c[np.asarray(highlight, dtype=int)]
        ax.scatter(h[:, 0], h[:, 1], s=30, facecolors="none", edgecolors="r")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(title)
    return _save(fig, path)


def plot_density(report: dict, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    for prof in report["profiles"]:
        ax.loglog(prof["scales"], prof["ratio_r"], marker="o", label=f"point {prof['point']}")
    ax.set_xlabel("r")
    ax.set_ylabel("mu(B(x,r)) / r^s")
    if len(report["profiles"]) <= 8:
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_doubling(report: dict, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.hist(np.asarray(report["max_ratio"], dtype=float), bins=30, color="0.4")
    ax.axvline(report["M"], color="r", ls="--")
    ax.set_xlabel("max mu(B(x,2r)) / mu(B(x,r))")
    ax.set_ylabel("points")
    return _save(fig, path)


def plot_scan(report: dict, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    by = {}
    for r in report["records"]:
        if "upper" in r:
            by.setdefault(r["point"], []).append((r["scale"], r["lower"], r["upper"]))
    for p, rows in sorted(by.items()):
        rows.sort()
        s = [a for a, _, _ in rows]
        ax.semilogx(s, [u for _, _, u in rows], marker="o", label=f"{p} upper")
        ax.semilogx(s, [l for _, l, _ in rows], ls=":", color="0.6")
    ax.set_xlabel("scale r")
    ax.set_ylabel("d_* to flat model")
    ax.set_ylim(0, 0.52)
    if len(by) <= 8:
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_separation(result: dict, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, row in enumerate(result["table"]):
        v = [x for x in row["worst"].values() if x is not None]
        color = "tab:blue" if row["rectifiable"] else "tab:red"
        ax.scatter(np.full(len(v), k) + np.linspace(-0.15, 0.15, len(v)), v, color=color, s=16)
    ax.axhline(result["tau"], color="k", ls="--", lw=1)
    ax.set_xticks(range(len(result["table"])))
    ax.set_xticklabels([r["fixture"] for r in result["table"]], rotation=25, ha="right", fontsize=8)
    ax.set_ylabel("worst-scale upper score")
    ax.set_ylim(0, 0.52)
    return _save(fig, path)


def plot_holder(cert: dict, path):
    """Image of the finest lattice (grid lines) with bad-cube corner balls."""
    vals = np.asarray(cert["values"], dtype=float)
    lat = cert["lattice"]
    fig, ax = plt.subplots(figsize=(5, 5))
    if lat["n"] == 2 and vals.shape[1] >= 2:
        k = int(round(np.sqrt(len(vals))))
        g = vals[:, :2].reshape(k, k, 2)
        step = max(1, k // 32)
        for i in range(0, k, step):
            ax.plot(g[i, :, 0], g[i, :, 1], color="0.5", lw=0.4)
            ax.plot(g[:, i, 0], g[:, i, 1], color="0.5", lw=0.4)
    else:
        ax.plot(vals[:, 0], vals[:, -1], ".", ms=2, color="0.4")
    for b in cert["bad_balls"]:
        c, r = b["center"], b["radius"]
        ax.add_patch(plt.Rectangle((c[0] - r, c[1] - r), 2 * r, 2 * r, fill=False, ec="r", lw=0.6))
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(f"bad cubes: {cert['n_bad_cubes']}")
    return _save(fig, path)


def plot_blowups(seq, path):
    k = len(seq.blowups)
    fig, axes = plt.subplots(1, k, figsize=(3.2 * k, 3.2), squeeze=False)
    for ax, b, r in zip(axes[0], seq.blowups, seq.scales):
        c = b.coords - b.coords[b.base]
        if c.shape[1] == 1:
            c = np.c_[c, np.zeros(len(c))]
        ax.scatter(c[:, 0], c[:, 1], s=3, c="k", lw=0)
        ax.set_title(f"r = {r:.3g}", fontsize=9)
        ax.set_aspect("equal", adjustable="datalim")
    return _save(fig, path)
