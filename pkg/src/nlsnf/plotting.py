"""Figures for experiment bundles. Everything renders off-screen to files."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "savefig.bbox": "tight",
    "axes.formatter.useoffset": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def read_observables(path) -> dict:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty observable file")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def plot_observables(paths, labels, out) -> Path:
    """Drift, relative energy error and weighted norm against time, one line per file."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, sharex=True, figsize=(6.4, 7.0))
        for p, lab in zip(paths, labels):
            o = read_observables(p)
            t = o["t"]
            axes[0].semilogy(t[1:], np.maximum(o["drift"][1:], 1e-300), label=f"eps={lab:g}")
            dH = np.abs(o["H"] - o["H"][0]) / max(abs(o["H"][0]), 1e-300)
            axes[1].semilogy(t[1:], np.maximum(dH[1:], 1e-300))
            axes[2].plot(t, o["norm_rho"] / o["norm_rho"][0])
        axes[0].set_ylabel("action drift")
        axes[1].set_ylabel("|H(t) - H(0)| / |H(0)|")
        axes[2].set_ylabel("norm / initial norm")
        axes[2].set_xlabel("t")
        axes[0].legend()
        return _save(fig, out)


def plot_drift(eps, drift, out, exponent: float = 1.5) -> Path:
    """Max drift against eps on log axes, with the reference power ``eps^exponent``."""
    eps = np.asarray(eps, float)
    drift = np.asarray(drift, float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.loglog(eps, drift, "o-", label="max drift")
        grid = np.geomspace(eps.min(), eps.max(), 50) if len(eps) else eps
        ax.loglog(grid, grid ** exponent, "k--", lw=0.8, label=f"eps^{exponent:g}")
        if len(set(eps.tolist())) >= 2:
            slope = np.polyfit(np.log(eps), np.log(drift), 1)[0]
            ax.set_title(f"fitted exponent {slope:.2f}")
        ax.set_xlabel("eps")
        ax.set_ylabel("max drift")
        ax.legend()
        return _save(fig, out)


def plot_normal_form(table: dict, out) -> Path:
    """Norms of Q_m, chi_m and Z_m per degree."""
    degs = sorted(table, key=int)
    m = [int(d) for d in degs]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for key, mark in (("Q_norm", "s"), ("chi_norm", "o"), ("Z_norm", "^")):
            vals = np.array([table[d][key] for d in degs], float)
            keep = vals > 0
            ax.semilogy(np.array(m)[keep], vals[keep], mark + "-", label=key.replace("_norm", ""))
        ax.set_xlabel("degree m")
        ax.set_ylabel("norm")
        ax.set_xticks(m)
        ax.legend()
        return _save(fig, out)
