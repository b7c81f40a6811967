"""Figure rendering for the report-producing CLI commands."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_waveforms(thetas, u, current, reference_current, path) -> None:
    """Switching signal, current vs reference, and the pointwise residual."""
    fig, axes = plt.subplots(3, 1, figsize=(7.2, 6.4), sharex=True)
    m = -reference_current[0]  # reference is -M cos(theta)
    axes[0].step(thetas, u, where="post", lw=1.2)
    axes[0].plot(thetas, m * np.sin(thetas), "k--", lw=0.8)
    axes[0].set_ylabel("switching signal")
    axes[1].plot(thetas, current, lw=1.2, color="tab:orange")
    axes[1].plot(thetas, reference_current, "k--", lw=0.8)
    axes[1].set_ylabel("current")
    axes[2].plot(thetas, current - reference_current, lw=1.0, color="tab:green")
    axes[2].set_ylabel("residual")
    axes[2].set_xlabel("angle (rad)")
    axes[2].set_xlim(0.0, 2.0 * math.pi)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep(rows, bounds_path, gap_path) -> None:
    """Bound curves per modulation index and the log10 optimality-gap map."""
    ok = [r for r in rows if r["status"] in ("optimal", "maxiter") and r["q_bound"] is not None]
    fig, ax = plt.subplots(figsize=(7.0, 4.6))
    ms = sorted({r["M"] for r in ok})
    cmap = plt.get_cmap("viridis")
    for k, m in enumerate(ms):
        pts = sorted((r["d"], r["q_bound"]) for r in ok if r["M"] == m)
        if pts:
            ax.semilogy(*zip(*pts), marker="o", ms=3, lw=1.0,
                        color=cmap(k / max(len(ms) - 1, 1)), label=f"M={m:g}")
    ax.set_xlabel("pulse number d")
    ax.set_ylabel("distortion lower bound")
    if ok and len(ms) <= 12:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(bounds_path, dpi=150)
    plt.close(fig)

    with_gap = [r for r in ok if r.get("gap") is not None and r["gap"] > 0]
    fig, ax = plt.subplots(figsize=(7.0, 4.6))
    if with_gap:
        ds = sorted({r["d"] for r in with_gap})
        msg = sorted({r["M"] for r in with_gap})
        grid = np.full((len(msg), len(ds)), np.nan)
        for r in with_gap:
            grid[msg.index(r["M"]), ds.index(r["d"])] = math.log10(r["gap"])
        pcm = ax.pcolormesh(ds, msg, grid, shading="nearest", cmap="magma")
        fig.colorbar(pcm, ax=ax, label="log10(recovered Q - bound)")
    ax.set_xlabel("pulse number d")
    ax.set_ylabel("modulation index M")
    fig.tight_layout()
    fig.savefig(gap_path, dpi=150)
    plt.close(fig)
