"""Quick-look figures written next to a run's CSV files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 8,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.0,
    "legend.frameon": False,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_diagnostics(traj, path) -> Path:
    """Energy, L-inf and relative mass drift against time."""
    t = traj.column("t")
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9, 2.6))
        axes[0].plot(t, traj.column("energy"))
        axes[0].set_title("free energy")
        axes[1].plot(t, traj.column("linf"))
        axes[1].set_title("max density")
        mass = traj.column("mass")
        axes[2].plot(t, mass / mass[0] - 1.0)
        axes[2].set_title("relative mass drift")
        for ax in axes:
            ax.set_xlabel("t")
        return _save(fig, path)


def plot_snapshots(traj, path, count: int = 5) -> Path:
    """Density at a few sample times (1D curves, or 2D images side by side)."""
    picks = np.unique(np.linspace(0, len(traj.times) - 1, min(count, len(traj.times))).astype(int))
    grid = traj.params.grid
    with plt.rc_context(STYLE):
        if grid.d == 1:
            fig, ax = plt.subplots(figsize=(4.5, 3))
            for k in picks:
                ax.plot(grid.centers, traj.rho_at(k).values, label=f"t={traj.times[k]:.3g}")
            ax.set_xlabel("x")
            ax.set_ylabel("density")
            ax.legend()
        else:
            fig, axes = plt.subplots(1, len(picks), figsize=(2.2 * len(picks), 2.3), squeeze=False)
            ext = [-grid.L, grid.L, -grid.L, grid.L]
            for ax, k in zip(axes[0], picks):
                ax.imshow(traj.rho_at(k).values.T, origin="lower", extent=ext, cmap="magma")
                ax.set_title(f"t={traj.times[k]:.3g}")
                ax.set_xticks([])
                ax.set_yticks([])
        return _save(fig, path)


def plot_checks(rows, path) -> Path:
    """Slack of each verification row against its time or geodesic parameter."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        labels = sorted({r[0] for r in rows})
        for label in labels:
            pts = np.array([(r[1], r[4]) for r in rows if r[0] == label])
            ax.plot(pts[:, 0], pts[:, 1], ".-", label=label)
        ax.axhline(0.0, color="0.5", lw=0.5)
        ax.set_xlabel("t or s")
        ax.set_ylabel("rhs - lhs")
        if labels:
            ax.legend(fontsize=6)
        return _save(fig, path)
