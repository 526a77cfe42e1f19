"""Report figures (matplotlib, file output only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from fraclogi.grid import Grid  # noqa: E402

_STYLE = {
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _shade_refuge(ax, grid: Grid):
    lo, hi = grid.refuge_box[0]
    ax.axvspan(lo, hi, color="tab:green", alpha=0.08, lw=0, label="refuge")


def plot_fields(path, grid: Grid, fields: dict, title: str = "") -> Path:
    """Overlay 1D fields, or one image panel per 2D field."""
    with plt.rc_context(_STYLE):
        if grid.dimension == 1:
            fig, ax = plt.subplots(figsize=(6, 3.5))
            x = grid.coords[:, 0]
            _shade_refuge(ax, grid)
            for label, u in fields.items():
                ax.plot(x, u, lw=1.2, label=label)
            ax.set_xlabel("x")
            ax.legend(frameon=False)
        else:
            n = len(fields)
            fig, axes = plt.subplots(1, n, figsize=(4 * n, 3.6), squeeze=False)
            (x0, x1), (y0, y1) = grid.box
            for ax, (label, u) in zip(axes[0], fields.items()):
                img = ax.imshow(
                    np.asarray(u).reshape(grid.shape).T,
                    origin="lower",
                    extent=(x0, x1, y0, y1),
                    cmap="viridis",
                )
                (rx0, rx1), (ry0, ry1) = grid.refuge_box
                ax.plot([rx0, rx1, rx1, rx0, rx0], [ry0, ry0, ry1, ry1, ry0], "w--", lw=0.8)
                ax.set_title(label)
                ax.grid(False)
                fig.colorbar(img, ax=ax, shrink=0.8)
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_series(path, series: dict, columns=("linf", "l2_omega", "l2_refuge"), log: bool = True) -> Path:
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        t = np.asarray(series["t"])
        for col in columns:
            y = np.asarray(series[col], dtype=float)
            axes[0].plot(t, y, lw=1.2, label=col)
        if log:
            axes[0].set_yscale("log")
        axes[0].set_xlabel("t")
        axes[0].legend(frameon=False)
        for col in ("E", "E_refuge"):
            axes[1].plot(t, np.asarray(series[col], dtype=float), lw=1.2, label=col)
        axes[1].set_xlabel("t")
        axes[1].set_ylabel("energy")
        axes[1].legend(frameon=False)
        return _save(fig, path)


def plot_snapshots(path, grid: Grid, times, snapshots, max_curves: int = 8) -> Path:
    """1D: a fan of snapshots coloured by time.  2D: first and last snapshot."""
    if grid.dimension == 2:
        return plot_fields(path, grid, {f"t={times[0]:.3g}": snapshots[0], f"t={times[-1]:.3g}": snapshots[-1]})
    pick = np.unique(np.linspace(0, len(snapshots) - 1, min(max_curves, len(snapshots))).astype(int))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        _shade_refuge(ax, grid)
        cmap = plt.get_cmap("plasma")
        x = grid.coords[:, 0]
        for k, i in enumerate(pick):
            ax.plot(x, snapshots[i], color=cmap(k / max(len(pick) - 1, 1)), lw=1.0, label=f"t={times[i]:.3g}")
        ax.set_xlabel("x")
        ax.legend(frameon=False, fontsize=7)
        return _save(fig, path)


def plot_sweep(path, rows: list[dict]) -> Path:
    ok = [r for r in rows if "linf" in r]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        lam = [r["lambda"] for r in ok]
        ax.plot(lam, [r["linf"] for r in ok], "o-", ms=3, label="max u")
        keys = sorted({k for r in ok for k in r if k.startswith("min_K")})
        for key in keys:
            ax.plot(lam, [r[key] for r in ok], "s--", ms=3, label=key.replace("min_", "min over "))
        if ok and min(r["linf"] for r in ok) > 0:
            ax.set_yscale("log")
        ax.set_xlabel("lambda")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_eigen_ladder(path, mus, lams, reference: float) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.semilogx(mus, lams, "o-", ms=4, label="weighted eigenvalue")
        ax.axhline(reference, color="k", ls="--", lw=0.8, label="refuge eigenvalue")
        ax.set_xlabel("mu")
        ax.legend(frameon=False)
        return _save(fig, path)
