"""Figure rendering for the report path.

Every study that writes delimited output also renders a matplotlib figure
next to it.  The Agg backend is forced so rendering works headless and the
PNG bytes depend only on the plotted data.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 130


def _save(fig, path):
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def mean_force_figure(table, path, title=""):
    """Three panels: mean force, free energy and marginal density."""
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2))
    axes[0].plot(table.xi, table.b, lw=1.2)
    axes[0].set_xlabel(r"$\xi$")
    axes[0].set_ylabel(r"$b(\xi)$")
    axes[1].plot(table.xi, table.F, lw=1.2, color="tab:orange")
    axes[1].set_xlabel(r"$\xi$")
    axes[1].set_ylabel(r"$F(\xi)$")
    axes[2].plot(table.xi, table.phi, lw=1.2, color="tab:green")
    axes[2].set_xlabel(r"$\xi$")
    axes[2].set_ylabel(r"$\varphi(\xi)$")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def bounds_figure(report, path, title=""):
    """Horizontal comparison of empirical values and their bounds."""
    entries = [e for e in report.entries if np.isfinite(e.lhs) and e.rhs is not None]
    fig, ax = plt.subplots(figsize=(7.0, 0.9 + 0.65 * max(len(entries), 1)))
    ypos = np.arange(len(entries))[::-1]
    for y, e in zip(ypos, entries):
        color = "tab:gray" if e.satisfied is None else ("tab:blue" if e.satisfied else "tab:red")
        ax.barh(y, max(e.lhs, 1e-300), height=0.34, color=color, label=None)
        ax.plot([e.rhs], [y], marker="|", ms=22, mew=2.5, color="black")
        if e.se:
            ax.errorbar([e.lhs], [y], xerr=[2 * e.se], fmt="none", ecolor="black", capsize=3)
    ax.set_yticks(ypos)
    ax.set_yticklabels([e.name for e in entries])
    ax.set_xscale("log")
    ax.set_xlabel("empirical value (bar) vs bound (tick)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def scaling_figure(result, path, title=""):
    """Log-log sweep with the fitted rate."""
    vals = np.asarray(result.values, dtype=float)
    est = np.array([e.value for e in result.estimates])
    se = np.array([e.std_error for e in result.estimates])
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ax.errorbar(vals, est, yerr=2 * se, fmt="o", ms=4, capsize=3, label="ensemble")
    if not result.degenerate and np.all(est > 0):
        ref = est[0] * (vals / vals[0]) ** result.slope
        ax.plot(vals, ref, "--", lw=1.0,
                label=f"slope {result.slope:.3f} $\\pm$ {result.slope_se:.3f}")
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(result.parameter)
    ax.set_ylabel("pathwise error")
    ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def poisson_figure(sol, path, title=""):
    """Solution and residual of one conditional solve."""
    fig, axes = plt.subplots(1, 2, figsize=(8.4, 3.4))
    axes[0].plot(sol.grid, sol.u, lw=1.2)
    axes[0].set_xlabel(r"$x_2$")
    axes[0].set_ylabel(r"$u(\xi, x_2)$")
    axes[1].semilogy(sol.grid, np.abs(sol.residual) + 1e-300, lw=0.8, color="tab:red")
    axes[1].set_xlabel(r"$x_2$")
    axes[1].set_ylabel("|residual|")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)
