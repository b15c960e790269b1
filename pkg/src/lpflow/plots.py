"""Report figures rendered to files next to the delimited outputs.

All rendering uses the Agg backend; nothing here opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_trajectory(traj, path, max_points: int = 20_000):
    """Phase-portrait projection of a trajectory (first two or three
    coordinates)."""
    stride = max(1, len(traj) // max_points)
    xs = traj.xs[::stride]
    fig = plt.figure(figsize=(6, 5))
    if xs.shape[1] >= 3:
        ax = fig.add_subplot(projection="3d")
        ax.plot(xs[:, 0], xs[:, 1], xs[:, 2], lw=0.3)
        ax.set_zlabel("x3")
    else:
        ax = fig.add_subplot()
        ax.plot(xs[:, 0], xs[:, 1], lw=0.3)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title("trajectory")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_spectrum_convergence(c, path):
    """Running Benettin exponent estimates versus accumulated time."""
    m = c.dim
    q = np.eye(m)
    sums = np.zeros(m)
    history = np.empty((c.n, m))
    for i, A in enumerate(c.blocks):
        q, r = np.linalg.qr(A @ q)
        diag = np.diag(r)
        q = q * np.sign(diag)
        sums += np.log(np.abs(diag))
        history[i] = np.sort(sums / ((i + 1) * c.T))
    ts = (np.arange(c.n) + 1) * c.T
    fig, ax = plt.subplots(figsize=(6, 4))
    for j in range(m):
        ax.plot(ts, history[:, j], lw=1.0, label=f"exponent {j + 1}")
    ax.set_xlabel("time")
    ax.set_ylabel("running exponent estimate")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("spectrum convergence")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_comparison(report, path):
    """Side-by-side bars of the measure and orbit spectra with the per-index
    gaps annotated."""
    a = np.asarray(report.measure_spectrum)
    b = np.asarray(report.orbit_spectrum)
    idx = np.arange(len(a))
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.35
    ax.bar(idx - width / 2, a, width, label="measure")
    ax.bar(idx + width / 2, b, width, label="orbit")
    for i, g in enumerate(report.gaps):
        ax.annotate(f"{g:.3f}", (i, max(a[i], b[i])), ha="center",
                    va="bottom", fontsize=8)
    ax.set_xticks(idx)
    ax.set_xticklabels([f"$\\lambda_{{{i + 1}}}$" for i in idx])
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_ylabel("exponent")
    ax.legend(loc="best")
    ax.set_title(f"spectrum comparison (d_M = {report.d_m:.4g})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
