"""PNG figures for run reports. Uses the non-interactive Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .spectral import Field  # noqa: E402


def plot_timeseries(record, path) -> None:
    """Norms and weighted envelopes against time, log-log where positive."""
    t = record.times
    cols = record.columns
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))

    ax = axes[0]
    ax.plot(t, cols["mass_rho"], label=r"$\int\rho$")
    if np.all(np.isfinite(cols["mass_c"])):
        ax.plot(t, cols["mass_c"], label=r"$\int c$")
    ax.set_xlabel("t")
    ax.set_title("mass")
    ax.legend()

    ax = axes[1]
    for name in cols:
        if name.startswith("rho_L") or name.startswith("gradc_L"):
            y = cols[name]
            sel = (t > 0) & (y > 0)
            if np.any(sel):
                ax.loglog(t[sel], y[sel], label=name)
    ax.set_xlabel("t")
    ax.set_title("norms")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)

    ax = axes[2]
    for name in cols:
        if name.startswith("t^"):
            y = cols[name]
            sel = t > 0
            ax.plot(t[sel], y[sel], label=name)
    ax.set_xscale("log")
    ax.set_xlabel("t")
    ax.set_title("weighted envelopes")
    ax.legend(fontsize=7)

    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_field(f: Field, path, title: str = "") -> None:
    """Line plot in 1D, image of the mid-plane slice otherwise."""
    g = f.grid
    fig, ax = plt.subplots(figsize=(5, 4))
    if g.d == 1:
        ax.plot(g.axis, f.values)
        ax.set_xlabel("x")
    else:
        vals = f.values if g.d == 2 else f.values[..., g.n // 2]
        im = ax.imshow(vals.T, origin="lower", extent=(-g.L, g.L, -g.L, g.L), cmap="viridis")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_region(samples, path, title: str = "") -> None:
    """Scatter of scanned (p, r) pairs coloured by verdict."""
    p = np.array([s.p for s in samples])
    r = np.array([s.r for s in samples])
    ok = np.array([s.accepted for s in samples])
    extra = np.array([s.extra for s in samples])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(p[~ok], r[~ok], s=4, c="0.8", label="rejected")
    ax.scatter(p[ok & ~extra], r[ok & ~extra], s=4, c="tab:blue", label="accepted")
    ax.scatter(p[extra], r[extra], s=4, c="tab:orange", label="extra region")
    ax.set_xlabel("p")
    ax.set_ylabel("r")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
